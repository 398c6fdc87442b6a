"""Fixed-effects logistic regression linking annotations to correctness.

Rows pair each translated observation with English correctness and two
binary indicators: T (at least one target-side error annotated on the
translation) and S (at least one source-side anomaly on the item). Spec A
fits all rows with T, S, and the English control; Spec B restricts to rows
solved in English and drops the control; the no-S ablations omit S. Effects
are reported as average marginal effects in probability points, with
item-level block-bootstrap percentile intervals, and a counterfactual
ranking compares model orderings under T forced to zero.
"""

from __future__ import annotations

import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.special import expit
from scipy.stats import kendalltau, spearmanr

from .records import (
    ENGLISH_MARKER,
    AnnotationSet,
    CorrectnessRecord,
    InputError,
    ParameterError,
    Segment,
    SourceAnomaly,
    ValidationError,
)

log = logging.getLogger(__name__)

SPECS = ("A", "B")
MAX_ITER = 100
COEF_TOL = 1e-8
RIDGE = 1e-8
SEPARATION_BOUND = 15.0

FACTORS = (
    ("language", lambda r: r.language),
    ("dataset", lambda r: r.dataset),
    ("eval_model", lambda r: r.eval_model),
)


@dataclass(frozen=True)
class RegressionRow:
    item_id: str
    language: str
    dataset: str
    eval_model: str
    y: int
    y_en: int
    t: int
    s: int


@dataclass(frozen=True)
class AssembledRows:
    annotator_id: str
    rows: tuple[RegressionRow, ...]
    dropped: dict[str, int]


def spec_label(spec: str, omit_s: bool) -> str:
    return f"{spec}_no_S" if omit_s else spec


def assemble(correctness: Sequence[CorrectnessRecord],
             annotation_sets: Iterable[AnnotationSet],
             anomalies: Iterable[SourceAnomaly],
             segments: Mapping[str, Segment],
             datasets: set[str] | None = None,
             english_marker: str = ENGLISH_MARKER) -> dict[str, AssembledRows]:
    """Join correctness, annotations, and anomalies into rows per annotator.

    Translated records join their English record on (item, dataset, model);
    T comes from the annotator's record for the (item, language) segment,
    where a present-but-empty record means T=0 and a missing record drops
    the row; S is 1 when any anomaly was recorded on any segment of the
    item. Dropped rows are counted by reason.
    """
    english: dict[tuple[str, str, str], int] = {}
    translated = []
    for rec in correctness:
        if rec.language == english_marker:
            english[(rec.item_id, rec.dataset, rec.eval_model)] = int(rec.correct)
        else:
            translated.append(rec)

    segment_ids_by_pair: dict[tuple[str, str, str], list[str]] = {}
    for segment in segments.values():
        key = (segment.item_key, segment.dataset, segment.language)
        segment_ids_by_pair.setdefault(key, []).append(segment.segment_id)

    anomalous_items: set[tuple[str, str]] = set()
    for anomaly in anomalies:
        if anomaly.segment_id not in segments:
            raise ValidationError(
                f"anomaly references unknown segment_id {anomaly.segment_id!r}")
        segment = segments[anomaly.segment_id]
        anomalous_items.add((segment.item_key, segment.dataset))

    by_annotator: dict[str, dict[str, int]] = {}
    for annotation in annotation_sets:
        if annotation.segment_id not in segments:
            raise ValidationError(
                f"annotation references unknown segment_id {annotation.segment_id!r}")
        has_target = int(any(span.side == "target" for span in annotation.spans))
        seg_map = by_annotator.setdefault(annotation.annotator_id, {})
        seg_map[annotation.segment_id] = max(seg_map.get(annotation.segment_id, 0), has_target)

    out = {}
    for annotator_id in sorted(by_annotator):
        t_by_segment = by_annotator[annotator_id]
        rows = []
        dropped: Counter = Counter()
        for rec in translated:
            if datasets is not None and rec.dataset not in datasets:
                dropped["dataset_filtered"] += 1
                continue
            y_en = english.get((rec.item_id, rec.dataset, rec.eval_model))
            if y_en is None:
                dropped["missing_english_correctness"] += 1
                continue
            seg_ids = segment_ids_by_pair.get((rec.item_id, rec.dataset, rec.language))
            if not seg_ids:
                dropped["missing_segment"] += 1
                continue
            t_values = [t_by_segment[sid] for sid in seg_ids if sid in t_by_segment]
            if not t_values:
                dropped["missing_annotation"] += 1
                continue
            rows.append(RegressionRow(
                item_id=rec.item_id, language=rec.language, dataset=rec.dataset,
                eval_model=rec.eval_model, y=int(rec.correct), y_en=y_en,
                t=max(t_values), s=int((rec.item_id, rec.dataset) in anomalous_items),
            ))
        out[annotator_id] = AssembledRows(annotator_id, tuple(rows), dict(dropped))
    return out


@dataclass(frozen=True)
class FitResult:
    spec: str
    omit_s: bool
    terms: tuple[str, ...]
    coefficients: dict[str, float]
    converged: bool
    iterations: int
    n_rows: int

    @property
    def label(self) -> str:
        return spec_label(self.spec, self.omit_s)

    def beta(self) -> np.ndarray:
        return np.array([self.coefficients[t] for t in self.terms])


def spec_rows(rows: Sequence[RegressionRow], spec: str) -> list[RegressionRow]:
    if spec not in SPECS:
        raise ParameterError(f"unknown specification {spec!r}; expected one of {SPECS}")
    if spec == "B":
        return [r for r in rows if r.y_en == 1]
    return list(rows)


def _design_terms(rows: Sequence[RegressionRow], spec: str, omit_s: bool,
                  reference_levels: Mapping[str, str] | None = None) -> list[str]:
    terms = ["intercept", "T"]
    if not omit_s:
        terms.append("S")
    if spec == "A":
        terms.append("y_en")
    for factor, getter in FACTORS:
        levels = sorted({getter(r) for r in rows})
        if len(levels) < 2:
            continue
        reference = reference_levels.get(factor, levels[0]) if reference_levels else levels[0]
        if reference not in levels:
            reference = levels[0]
        terms.extend(f"{factor}={level}" for level in levels if level != reference)
    return terms


def design_from_terms(rows: Sequence[RegressionRow], terms: Sequence[str]) -> np.ndarray:
    """Design matrix with the given columns; rows from unseen factor levels
    fall into the reference (all dummies zero)."""
    x = np.zeros((len(rows), len(terms)))
    getters = dict(FACTORS)
    for j, term in enumerate(terms):
        if term == "intercept":
            x[:, j] = 1.0
        elif term == "T":
            x[:, j] = [r.t for r in rows]
        elif term == "S":
            x[:, j] = [r.s for r in rows]
        elif term == "y_en":
            x[:, j] = [r.y_en for r in rows]
        elif "=" in term:
            factor, level = term.split("=", 1)
            getter = getters[factor]
            x[:, j] = [1.0 if getter(r) == level else 0.0 for r in rows]
        else:
            raise ParameterError(f"unknown design term {term!r}")
    return x


def _irls(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, bool, int]:
    n, p = x.shape
    beta = np.zeros(p)
    reached_tol = False
    iterations = 0
    for iterations in range(1, MAX_ITER + 1):
        eta = x @ beta
        mu = expit(eta)
        w = np.maximum(mu * (1.0 - mu), 1e-10)
        z = eta + (y - mu) / w
        normal = x.T @ (x * w[:, None]) + RIDGE * np.eye(p)
        try:
            new = np.linalg.solve(normal, x.T @ (w * z))
        except np.linalg.LinAlgError:
            return beta, False, iterations
        delta = float(np.max(np.abs(new - beta)))
        beta = new
        if delta < COEF_TOL:
            reached_tol = True
            break
    converged = reached_tol and bool(np.all(np.abs(beta) <= SEPARATION_BOUND))
    return beta, converged, iterations


def fit_logistic(rows: Sequence[RegressionRow], spec: str = "A", omit_s: bool = False,
                 reference_levels: Mapping[str, str] | None = None) -> FitResult:
    """Maximum-likelihood logistic fit by IRLS on the spec's design.

    Converged means the maximum absolute coefficient change dropped below
    1e-8 within 100 iterations and no coefficient exceeds 15 in magnitude
    (larger values flag quasi-separation). A 1e-8 ridge stabilizes the
    normal equations; its effect on coefficients is negligible.
    """
    used = spec_rows(rows, spec)
    if not used:
        raise ParameterError(f"empty row set for specification {spec_label(spec, omit_s)}")
    terms = _design_terms(used, spec, omit_s, reference_levels)
    x = design_from_terms(used, terms)
    y = np.array([r.y for r in used], dtype=float)
    beta, converged, iterations = _irls(x, y)
    return FitResult(
        spec=spec, omit_s=omit_s, terms=tuple(terms),
        coefficients={term: float(b) for term, b in zip(terms, beta)},
        converged=converged, iterations=iterations, n_rows=len(used),
    )


def ame(fit: FitResult, rows: Sequence[RegressionRow], regressor: str) -> float:
    """Average marginal effect of a binary regressor, in probability points.

    Mean difference of predicted probabilities with the regressor forced to
    1 versus 0, all other columns at observed values, times 100.
    """
    if regressor not in fit.terms:
        raise ParameterError(f"regressor {regressor!r} not in fitted terms {fit.terms}")
    if not fit.converged:
        raise ParameterError("average marginal effects require a converged fit")
    used = spec_rows(rows, fit.spec)
    if not used:
        raise ParameterError("no rows to average over")
    x = design_from_terms(used, fit.terms)
    beta = fit.beta()
    idx = fit.terms.index(regressor)
    x_on = x.copy()
    x_on[:, idx] = 1.0
    x_off = x.copy()
    x_off[:, idx] = 0.0
    return 100.0 * float(np.mean(expit(x_on @ beta) - expit(x_off @ beta)))


def _rows_by_item(rows: Sequence[RegressionRow]) -> tuple[list[str], dict[str, list[RegressionRow]]]:
    by_item: dict[str, list[RegressionRow]] = {}
    for row in rows:
        by_item.setdefault(row.item_id, []).append(row)
    return sorted(by_item), by_item


def _resample_rows(rows_by_item: dict[str, list[RegressionRow]], item_ids: list[str],
                   seed: int, replicate: int) -> list[RegressionRow]:
    rng = np.random.default_rng([seed, replicate])
    idx = rng.integers(0, len(item_ids), size=len(item_ids))
    resampled: list[RegressionRow] = []
    for i in idx:
        resampled.extend(rows_by_item[item_ids[i]])
    return resampled


@dataclass(frozen=True)
class AmeReport:
    spec: str
    regressors: tuple[str, ...]
    ame: dict[str, float]
    ame_ci: dict[str, tuple[float, float]]
    coef: dict[str, float]
    coef_ci: dict[str, tuple[float, float]]
    boot_success: int
    boot_fail: int
    b: int
    seed: int
    n_rows: int
    n_items: int


def block_bootstrap(rows: Sequence[RegressionRow], spec: str, omit_s: bool,
                    regressors: Sequence[str] | None = None, b: int = 2500,
                    seed: int = 0, jobs: int = 1) -> AmeReport:
    """Item-level block bootstrap of AMEs and coefficients.

    Each replicate resamples unique item ids with replacement, keeps every
    row of each sampled item, refits, and recomputes the AMEs. Replicates
    whose fit does not converge are counted and excluded. Intervals are
    percentile 2.5/97.5; results are deterministic for a fixed seed.
    """
    if b < 1:
        raise ParameterError("bootstrap replicate count must be >= 1")
    if regressors is None:
        regressors = ("T",) if omit_s else ("T", "S")
    point_fit = fit_logistic(rows, spec, omit_s)
    if not point_fit.converged:
        raise ValidationError(f"point fit for {point_fit.label} did not converge")
    for regressor in regressors:
        if regressor not in point_fit.terms:
            raise ParameterError(f"regressor {regressor!r} not in fitted terms")

    point_ame = {reg: ame(point_fit, rows, reg) for reg in regressors}
    point_coef = {reg: point_fit.coefficients[reg] for reg in regressors}

    item_ids, by_item = _rows_by_item(rows)

    def replicate(index: int) -> dict[str, tuple[float, float]] | None:
        resampled = _resample_rows(by_item, item_ids, seed, index)
        try:
            fit = fit_logistic(resampled, spec, omit_s)
        except InputError:
            return None
        if not fit.converged:
            return None
        try:
            return {reg: (ame(fit, resampled, reg), fit.coefficients.get(reg, float("nan")))
                    for reg in regressors}
        except InputError:
            return None

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(replicate, range(b)))
    else:
        results = [replicate(i) for i in range(b)]

    successes = [r for r in results if r is not None]
    if not successes:
        raise ValidationError("all bootstrap replicates failed")

    ame_ci = {}
    coef_ci = {}
    for reg in regressors:
        ames = np.array([r[reg][0] for r in successes])
        coefs = np.array([r[reg][1] for r in successes])
        lo, hi = np.percentile(ames, [2.5, 97.5])
        ame_ci[reg] = (float(lo), float(hi))
        lo, hi = np.percentile(coefs, [2.5, 97.5])
        coef_ci[reg] = (float(lo), float(hi))

    return AmeReport(
        spec=point_fit.label, regressors=tuple(regressors),
        ame=point_ame, ame_ci=ame_ci, coef=point_coef, coef_ci=coef_ci,
        boot_success=len(successes), boot_fail=b - len(successes),
        b=b, seed=seed, n_rows=point_fit.n_rows, n_items=len(item_ids),
    )


def overall_loss(rows: Sequence[RegressionRow], ame_t: float) -> float:
    """Share of rows with T=1 times the absolute AME of T, in pp."""
    if not rows:
        raise ParameterError("overall loss requires at least one row")
    exposure = sum(r.t for r in rows) / len(rows)
    return exposure * abs(ame_t)


@dataclass(frozen=True)
class RankingReport:
    models: tuple[str, ...]
    observed_accuracy: dict[str, float]
    predicted_accuracy: dict[str, float]
    counterfactual_accuracy: dict[str, float]
    uplift: dict[str, float]
    uplift_ci: dict[str, tuple[float, float]]
    spearman: float | None
    spearman_ci: tuple[float, float] | None
    kendall: float | None
    kendall_ci: tuple[float, float] | None
    boot_success: int
    boot_fail: int
    b: int
    seed: int
    note: str = ""


def _model_means(rows: Sequence[RegressionRow], fit: FitResult,
                 models: Sequence[str]) -> tuple[dict, dict, dict] | None:
    """Per-model observed accuracy, predicted accuracy, and predicted
    accuracy under T=0; None when a model has no rows."""
    used = spec_rows(rows, fit.spec)
    beta = fit.beta()
    x = design_from_terms(used, fit.terms)
    t_idx = fit.terms.index("T")
    x_zero = x.copy()
    x_zero[:, t_idx] = 0.0
    p_obs = expit(x @ beta)
    p_zero = expit(x_zero @ beta)
    y = np.array([r.y for r in used], dtype=float)
    model_index = {m: i for i, m in enumerate(models)}
    member = np.array([model_index[r.eval_model] for r in used])
    observed, predicted, counterfactual = {}, {}, {}
    for model in models:
        mask = member == model_index[model]
        if not mask.any():
            return None
        observed[model] = float(np.mean(y[mask]))
        predicted[model] = float(np.mean(p_obs[mask]))
        counterfactual[model] = float(np.mean(p_zero[mask]))
    return observed, predicted, counterfactual


def _rank_corr(observed: dict[str, float], counterfactual: dict[str, float],
               models: Sequence[str]) -> tuple[float, float]:
    obs = [observed[m] for m in models]
    cf = [counterfactual[m] for m in models]
    rho = float(spearmanr(obs, cf)[0])
    tau = float(kendalltau(obs, cf)[0])
    return rho, tau


def counterfactual_ranking(rows: Sequence[RegressionRow], fit: FitResult,
                           b: int = 2500, seed: int = 0, jobs: int = 1) -> RankingReport:
    """Observed versus T=0 counterfactual ranking of evaluation models.

    The observed ranking orders models by mean observed correctness; the
    counterfactual ranking orders them by mean predicted probability with T
    forced to zero. The uplift per model is the predicted accuracy gain of
    that intervention in percentage points. Correlations use average ranks
    for ties (Spearman) and the tie-adjusted tau-b (Kendall); intervals come
    from the same item-level block bootstrap, refitting per replicate.
    """
    if fit.spec != "A":
        raise ParameterError("counterfactual ranking requires a specification-A fit")
    if not fit.converged:
        raise ParameterError("counterfactual ranking requires a converged fit")
    if b < 1:
        raise ParameterError("bootstrap replicate count must be >= 1")

    models = tuple(sorted({r.eval_model for r in rows}))
    point = _model_means(rows, fit, models)
    if point is None:
        raise ParameterError("every evaluation model needs at least one row")
    observed, predicted, counterfactual = point
    uplift = {m: 100.0 * (counterfactual[m] - predicted[m]) for m in models}

    correlations_ok = len(models) >= 2
    note = "" if correlations_ok else "correlations require at least 2 evaluation models"
    if not correlations_ok:
        log.warning(note)

    def finite_or_none(value: float) -> float | None:
        return value if np.isfinite(value) else None

    rho = tau = None
    if correlations_ok:
        rho, tau = _rank_corr(observed, counterfactual, models)
        rho, tau = finite_or_none(rho), finite_or_none(tau)

    item_ids, by_item = _rows_by_item(rows)

    def replicate(index: int):
        resampled = _resample_rows(by_item, item_ids, seed, index)
        try:
            refit = fit_logistic(resampled, fit.spec, fit.omit_s)
        except InputError:
            return None
        if not refit.converged:
            return None
        means = _model_means(resampled, refit, models)
        if means is None:
            return None
        obs_b, pred_b, cf_b = means
        uplift_b = [100.0 * (cf_b[m] - pred_b[m]) for m in models]
        if correlations_ok:
            rho_b, tau_b = _rank_corr(obs_b, cf_b, models)
        else:
            rho_b = tau_b = float("nan")
        return uplift_b, rho_b, tau_b

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(replicate, range(b)))
    else:
        results = [replicate(i) for i in range(b)]
    successes = [r for r in results if r is not None]
    if not successes:
        raise ValidationError("all bootstrap replicates failed")

    uplift_draws = np.array([r[0] for r in successes])
    uplift_ci = {}
    for i, model in enumerate(models):
        lo, hi = np.percentile(uplift_draws[:, i], [2.5, 97.5])
        uplift_ci[model] = (float(lo), float(hi))

    spearman_ci = kendall_ci = None
    if correlations_ok:
        rhos = np.array([r[1] for r in successes])
        taus = np.array([r[2] for r in successes])
        if np.all(np.isfinite(rhos)):
            lo, hi = np.percentile(rhos, [2.5, 97.5])
            spearman_ci = (float(lo), float(hi))
        if np.all(np.isfinite(taus)):
            lo, hi = np.percentile(taus, [2.5, 97.5])
            kendall_ci = (float(lo), float(hi))

    return RankingReport(
        models=models, observed_accuracy=observed, predicted_accuracy=predicted,
        counterfactual_accuracy=counterfactual, uplift=uplift, uplift_ci=uplift_ci,
        spearman=rho, spearman_ci=spearman_ci, kendall=tau, kendall_ci=kendall_ci,
        boot_success=len(successes), boot_fail=b - len(successes),
        b=b, seed=seed, note=note,
    )
