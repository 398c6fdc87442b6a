"""Batch command-line interface.

One subcommand per analysis; every run writes <name>.json and <name>.tsv
reports plus a <name>.meta.json timestamp file into --out. All randomness
flows from --seed (a fixed default, never wall-clock), so reports are
byte-identical across reruns with the same inputs and flags.

Exit codes: 0 success, 1 I/O error, 2 validation/parameter error.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from collections import defaultdict

from . import __version__
from . import charmetrics, matching, refspan, regression, reliability
from .records import (
    InputError,
    ground_annotation_sets,
    ground_anomalies,
    load_annotation_sets,
    load_anomalies,
    load_correctness,
    load_segments,
)
from .reporting import envelope, fmt, write_report

log = logging.getLogger(__name__)

DEFAULT_SEED = 12345
DEFAULT_BOOT = 2500


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--out", default="reports", help="output directory")
    parser.add_argument("--seed", type=int, default=DEFAULT_SEED,
                        help="seed for all randomness (default %(default)s)")
    parser.add_argument("--jobs", type=int, default=1,
                        help="upper bound on worker threads for bootstrap replicates")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tqspan",
        description="Span-level translation-error annotation metrics and impact analysis",
    )
    parser.add_argument("--version", action="version", version=f"tqspan {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    agree = sub.add_parser("agree", help="span agreement between two annotation files")
    agree.add_argument("--segments", required=True)
    agree.add_argument("--gold", required=True)
    agree.add_argument("--pred", required=True)
    agree.add_argument("--oc-threshold", type=float, default=matching.DEFAULT_THRESHOLD["oc"])
    agree.add_argument("--sim-threshold", type=float, default=matching.DEFAULT_THRESHOLD["sim"])
    agree.add_argument("--sweep", action="store_true", help="add threshold-sweep tables")
    _add_common(agree)
    agree.set_defaults(func=cmd_agree)

    char = sub.add_parser("char", help="character-overlap metrics with bootstrap CIs")
    char.add_argument("--segments", required=True)
    char.add_argument("--gold", required=True)
    char.add_argument("--pred", required=True)
    char.add_argument("--boot", type=int, default=DEFAULT_BOOT)
    _add_common(char)
    char.set_defaults(func=cmd_char)

    rel = sub.add_parser("reliability", help="multi-rater agreement coefficients")
    rel.add_argument("--segments", required=True)
    rel.add_argument("--pred", required=True,
                     help="annotations file holding all raters (by annotator_id)")
    rel.add_argument("--gold", help="optional extra annotations file joined as raters")
    _add_common(rel)
    rel.set_defaults(func=cmd_reliability)

    overlap = sub.add_parser("overlap", help="source-overlap diagnostic per annotator")
    overlap.add_argument("--segments", required=True)
    overlap.add_argument("--pred", required=True)
    overlap.add_argument("--anomalies", required=True)
    overlap.add_argument("--oc-threshold", type=float, default=0.8)
    _add_common(overlap)
    overlap.set_defaults(func=cmd_overlap)

    stats = sub.add_parser("stats", help="annotator span statistics")
    stats.add_argument("--segments", required=True)
    stats.add_argument("--pred", required=True)
    _add_common(stats)
    stats.set_defaults(func=cmd_stats)

    project = sub.add_parser("project", help="project gold spans from good/incorrect pairs")
    project.add_argument("--aces", required=True)
    _add_common(project)
    project.set_defaults(func=cmd_project)

    spanloc = sub.add_parser("spanloc", help="classic and tolerant span localization scores")
    spanloc.add_argument("--aces", required=True)
    spanloc.add_argument("--pred", required=True, help="predicted token spans (predictions.jsonl)")
    spanloc.add_argument("--k", type=int, default=3, help="tolerant boundary slack in tokens")
    spanloc.add_argument("--cap", type=int, default=refspan.DEFAULT_CAP,
                         help="per-phenomenon weight cap for mean(cap)")
    _add_common(spanloc)
    spanloc.set_defaults(func=cmd_spanloc)

    impact = sub.add_parser("impact", help="fixed-effects logistic regression and AMEs")
    _add_impact_inputs(impact)
    impact.add_argument("--spec", choices=regression.SPECS, default="A")
    _add_common(impact)
    impact.set_defaults(func=cmd_impact)

    rank = sub.add_parser("rank", help="counterfactual T=0 ranking analysis")
    _add_impact_inputs(rank)
    _add_common(rank)
    rank.set_defaults(func=cmd_rank)

    return parser


def _add_impact_inputs(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--segments", required=True)
    parser.add_argument("--pred", required=True, help="annotations per annotator")
    parser.add_argument("--correctness", required=True)
    parser.add_argument("--anomalies", help="required unless --omit-s is given")
    parser.add_argument("--omit-s", action="store_true", help="drop the source-issue regressor")
    parser.add_argument("--boot", type=int, default=DEFAULT_BOOT)
    parser.add_argument("--datasets", help="comma-separated dataset allowlist")


def _emit(args, name: str, config: dict, inputs: dict, results: dict, tsv) -> None:
    payload = envelope(args.command, __version__, config, inputs, args.seed, results)
    path = write_report(args.out, name, payload, tsv)
    log.info("wrote %s", path)


def _score_dict(report: matching.MatchReport) -> dict:
    return {
        "pooled": {"tp": report.tp, "fp": report.fp, "fn": report.fn,
                   "precision": report.precision, "recall": report.recall, "f1": report.f1},
        "per_language": {
            lang: {"tp": s.tp, "fp": s.fp, "fn": s.fn,
                   "precision": s.precision, "recall": s.recall, "f1": s.f1}
            for lang, s in report.per_language.items()
        },
        "mean": {"precision": report.mean_precision, "recall": report.mean_recall,
                 "f1": report.mean_f1},
        "f1_range": list(report.f1_range),
        "matched_pairs": [
            {"segment_id": sid, "gold_index": gi, "pred_index": pj, "score": score}
            for sid, gi, pj, score in report.matched_pairs
        ],
    }


def cmd_agree(args) -> int:
    segments = load_segments(args.segments)
    gold_sets = ground_annotation_sets(load_annotation_sets(args.gold), segments)
    pred_sets = ground_annotation_sets(load_annotation_sets(args.pred), segments)

    results: dict = {}
    tsv = [["criterion", "language", "tp", "fp", "fn", "precision", "recall", "f1"]]
    thresholds = {"oc": args.oc_threshold, "sim": args.sim_threshold}
    for criterion in ("oc", "sim"):
        cfg = matching.MatchConfig(criterion, thresholds[criterion],
                                   dedup_by_text=(criterion == "sim"))
        fragments = matching.match_segments(gold_sets, pred_sets, cfg)
        report = matching.micro_aggregate(fragments, segments)
        results[criterion] = {"threshold": thresholds[criterion], **_score_dict(report)}
        for lang, s in report.per_language.items():
            tsv.append([criterion, lang, str(s.tp), str(s.fp), str(s.fn),
                        fmt(s.precision, 3), fmt(s.recall, 3), fmt(s.f1, 3)])
        tsv.append([criterion, "mean", "", "", "", fmt(report.mean_precision, 3),
                    fmt(report.mean_recall, 3), fmt(report.mean_f1, 3)])
        tsv.append([criterion, "range", "", "", "", "", "",
                    f"{fmt(report.f1_range[0], 3)}-{fmt(report.f1_range[1], 3)}"])
        tsv.append([criterion, "pooled", str(report.tp), str(report.fp), str(report.fn),
                    fmt(report.precision, 3), fmt(report.recall, 3), fmt(report.f1, 3)])

    if args.sweep:
        results["sweep"] = {}
        tsv.append([])
        tsv.append(["criterion", "threshold", "pooled_f1"])
        for criterion in ("oc", "sim"):
            sweep = matching.threshold_sweep(gold_sets, pred_sets, criterion)
            results["sweep"][criterion] = {
                "f1_by_threshold": {str(t): v for t, v in sweep.f1_by_threshold.items()},
                "f1_range": list(sweep.f1_range),
            }
            for threshold, value in sweep.f1_by_threshold.items():
                tsv.append([criterion, str(threshold), fmt(value, 3)])
            tsv.append([criterion, "range",
                        f"{fmt(sweep.f1_range[0], 3)}-{fmt(sweep.f1_range[1], 3)}"])

    config = {"oc_threshold": args.oc_threshold, "sim_threshold": args.sim_threshold,
              "sweep": args.sweep}
    inputs = {"segments": args.segments, "gold": args.gold, "pred": args.pred}
    _emit(args, "agree", config, inputs, results, tsv)
    return 0


def cmd_char(args) -> int:
    segments = load_segments(args.segments)
    gold_sets = ground_annotation_sets(load_annotation_sets(args.gold), segments)
    pred_sets = ground_annotation_sets(load_annotation_sets(args.pred), segments)
    gold_masks = charmetrics.masks_for_corpus(segments, gold_sets)
    pred_masks = charmetrics.masks_for_corpus(segments, pred_sets)

    results = {
        "unlinked_spans": {
            "gold": sum(m.unlinked_spans for m in gold_masks.values()),
            "pred": sum(m.unlinked_spans for m in pred_masks.values()),
        },
        "metrics": {},
    }
    tsv = [["metric", "point", "ci_lower", "ci_upper"]]
    for metric in charmetrics.METRICS:
        interval = charmetrics.char_ci(gold_masks, pred_masks, metric,
                                       b=args.boot, seed=args.seed)
        results["metrics"][metric] = {"point": interval.point, "ci_lower": interval.lower,
                                      "ci_upper": interval.upper, "replicates": interval.replicates}
        tsv.append([metric, fmt(interval.point, 2), fmt(interval.lower, 3),
                    fmt(interval.upper, 3)])

    config = {"boot": args.boot}
    inputs = {"segments": args.segments, "gold": args.gold, "pred": args.pred}
    _emit(args, "char", config, inputs, results, tsv)
    return 0


def _sets_by_rater(*set_lists):
    grouped = defaultdict(list)
    for sets in set_lists:
        for annotation in sets:
            grouped[annotation.annotator_id].append(annotation)
    return dict(grouped)


def _alpha_dict(result: reliability.AlphaResult) -> dict:
    return {"value": result.value, "defined": result.defined, "note": result.note}


def cmd_reliability(args) -> int:
    segments = load_segments(args.segments)
    sets = ground_annotation_sets(load_annotation_sets(args.pred), segments)
    extra = []
    if args.gold:
        extra = ground_annotation_sets(load_annotation_sets(args.gold), segments)
    grid = reliability.build_grid(segments, _sets_by_rater(sets, extra))
    nominal = reliability.alpha_nominal(grid)
    unitized = reliability.alpha_unitized(grid)

    results = {
        "raters": list(grid.raters),
        "n_segments": len(grid.segment_ids),
        "alpha_nominal_any_error": _alpha_dict(nominal),
        "alpha_unitized": {
            "overall": _alpha_dict(unitized.overall),
            "per_language": {lang: _alpha_dict(r) for lang, r in unitized.per_language.items()},
            "range": list(unitized.value_range) if unitized.value_range else None,
        },
    }
    tsv = [["metric", "value", "note"],
           ["alpha_nominal_any_error", fmt(nominal.value, 3), nominal.note],
           ["alpha_unitized", fmt(unitized.overall.value, 3), unitized.overall.note]]
    for lang, result in unitized.per_language.items():
        tsv.append([f"alpha_unitized[{lang}]", fmt(result.value, 3), result.note])
    if unitized.value_range:
        tsv.append(["alpha_unitized_range",
                    f"{fmt(unitized.value_range[0], 3)}-{fmt(unitized.value_range[1], 3)}",
                    "min-max across languages, not a confidence interval"])

    inputs = {"segments": args.segments, "pred": args.pred}
    if args.gold:
        inputs["gold"] = args.gold
    _emit(args, "reliability", {}, inputs, results, tsv)
    return 0


def cmd_overlap(args) -> int:
    segments = load_segments(args.segments)
    sets = ground_annotation_sets(load_annotation_sets(args.pred), segments)
    anomalies = ground_anomalies(load_anomalies(args.anomalies), segments)

    results = {}
    tsv = [["annotator", "language", "rate"]]
    for annotator, rater_sets in sorted(_sets_by_rater(sets).items()):
        report = matching.source_overlap_rate(segments, rater_sets, anomalies,
                                              threshold=args.oc_threshold)
        results[annotator] = {
            "per_language": report.per_language,
            "mean": report.mean,
            "range": list(report.rate_range) if report.rate_range else None,
            "counted": report.counted,
            "total": report.total,
        }
        for lang, rate in report.per_language.items():
            tsv.append([annotator, lang, fmt(rate, 2)])
        tsv.append([annotator, "mean", fmt(report.mean, 2)])
        if report.rate_range:
            tsv.append([annotator, "range",
                        f"{fmt(report.rate_range[0], 2)}-{fmt(report.rate_range[1], 2)}"])

    config = {"oc_threshold": args.oc_threshold}
    inputs = {"segments": args.segments, "pred": args.pred, "anomalies": args.anomalies}
    _emit(args, "overlap", config, inputs, results, tsv)
    return 0


def cmd_stats(args) -> int:
    segments = load_segments(args.segments)
    sets = ground_annotation_sets(load_annotation_sets(args.pred), segments)

    results = {}
    tsv = [["annotator", "language", "spans_per_sample", "median_span_length", "coverage"]]
    for annotator, rater_sets in sorted(_sets_by_rater(sets).items()):
        stats = matching.annotator_stats(segments, rater_sets)
        results[annotator] = {
            "per_language": {
                lang: {"spans_per_sample": s.spans_per_sample,
                       "median_span_length": s.median_span_length,
                       "median_defined": s.median_defined,
                       "coverage": s.coverage,
                       "n_segments": s.n_segments,
                       "n_spans": s.n_spans}
                for lang, s in stats.per_language.items()
            },
            "mean": {"spans_per_sample": stats.spans_per_sample,
                     "median_span_length": stats.median_span_length,
                     "coverage": stats.coverage,
                     "median_defined": stats.median_defined},
        }
        for lang, s in stats.per_language.items():
            tsv.append([annotator, lang, fmt(s.spans_per_sample, 2),
                        fmt(s.median_span_length, 2), fmt(s.coverage, 2)])
        tsv.append([annotator, "mean", fmt(stats.spans_per_sample, 2),
                    fmt(stats.median_span_length, 2), fmt(stats.coverage, 2)])

    _emit(args, "stats", {}, {"segments": args.segments, "pred": args.pred}, results, tsv)
    return 0


def cmd_project(args) -> int:
    items = refspan.load_aces_items(args.aces)
    projected = refspan.project_items(items)
    kept = [p for p in projected if p.status == refspan.KEPT]
    reasons = defaultdict(int)
    for item in projected:
        if item.reason:
            reasons[item.reason] += 1

    results = {
        "total": len(projected),
        "kept": len(kept),
        "discarded": len(projected) - len(kept),
        "discard_reasons": dict(sorted(reasons.items())),
        "items": [
            {"item_id": p.item_id, "language": p.language, "phenomenon": p.phenomenon,
             "mqm_category": p.mqm_category, "status": p.status, "reason": p.reason,
             "gold_start": p.gold_start, "gold_end": p.gold_end, "gold_text": p.gold_text,
             "reference_tokens": p.reference_tokens, "note": p.note}
            for p in projected
        ],
    }
    tsv = [["item_id", "status", "reason", "gold_start", "gold_end", "gold_text"]]
    for p in projected:
        tsv.append([p.item_id, p.status, p.reason or "",
                    "" if p.gold_start is None else str(p.gold_start),
                    "" if p.gold_end is None else str(p.gold_end),
                    p.gold_text or ""])

    _emit(args, "project", {}, {"aces": args.aces}, results, tsv)
    return 0


def cmd_spanloc(args) -> int:
    mapping = refspan.load_phenomenon_mapping()
    items = refspan.load_aces_items(args.aces, mapping)
    projected = refspan.project_items(items)
    predictions = refspan.load_predictions(args.pred)
    scores = refspan.score_spans(projected, predictions, k=args.k)

    results = {
        "kept_items": sum(1 for p in projected if p.status == refspan.KEPT),
        "total_items": len(projected),
        "per_phenomenon": {
            s.phenomenon: {
                "mqm_category": s.mqm_category, "n_items": s.n_items,
                "f1": s.f1, "recall": s.recall,
                "f1_tolerant": s.f1_tolerant, "recall_tolerant": s.recall_tolerant,
            }
            for s in scores
        },
        "per_category": {},
    }
    tsv = [["phenomenon", "category", "n", "f1", "recall", "f1_tolerant", "recall_tolerant"]]
    for s in scores:
        tsv.append([s.phenomenon, s.mqm_category, str(s.n_items), fmt(s.f1, 3),
                    fmt(s.recall, 3), fmt(s.f1_tolerant, 3), fmt(s.recall_tolerant, 3)])
    tsv.append([])
    tsv.append(["category", "scheme", "f1", "recall", "f1_tolerant", "recall_tolerant"])
    for scheme in (refspan.MEAN_N, refspan.MEAN_CAP):
        aggregated = refspan.aggregate(scores, mapping, scheme, cap=args.cap)
        for category, agg in aggregated.items():
            results["per_category"].setdefault(category, {})[scheme] = {
                "f1": agg.f1, "recall": agg.recall,
                "f1_tolerant": agg.f1_tolerant, "recall_tolerant": agg.recall_tolerant,
                "n_items": agg.n_items, "n_phenomena": agg.n_phenomena,
            }
            tsv.append([category, scheme, fmt(agg.f1, 3), fmt(agg.recall, 3),
                        fmt(agg.f1_tolerant, 3), fmt(agg.recall_tolerant, 3)])

    config = {"k": args.k, "cap": args.cap}
    _emit(args, "spanloc", config, {"aces": args.aces, "pred": args.pred}, results, tsv)
    return 0


def _load_impact_inputs(args):
    segments = load_segments(args.segments)
    annotation_sets = load_annotation_sets(args.pred)
    correctness = load_correctness(args.correctness)
    anomalies = []
    if args.anomalies:
        anomalies = load_anomalies(args.anomalies)
    elif not args.omit_s:
        raise InputError("--anomalies is required unless --omit-s is given")
    datasets = set(args.datasets.split(",")) if args.datasets else None
    assembled = regression.assemble(correctness, annotation_sets, anomalies, segments,
                                    datasets=datasets)
    inputs = {"segments": args.segments, "pred": args.pred, "correctness": args.correctness}
    if args.anomalies:
        inputs["anomalies"] = args.anomalies
    return assembled, inputs


def cmd_impact(args) -> int:
    assembled, inputs = _load_impact_inputs(args)
    results = {}
    tsv = [["annotator", "spec", "term", "coef", "or", "ame", "ame_ci", "overall_loss"]]
    for annotator, data in sorted(assembled.items()):
        report = regression.block_bootstrap(
            list(data.rows), args.spec, args.omit_s, b=args.boot, seed=args.seed,
            jobs=args.jobs)
        fit = regression.fit_logistic(list(data.rows), args.spec, args.omit_s)
        loss = regression.overall_loss(
            regression.spec_rows(data.rows, args.spec), report.ame["T"])
        results[annotator] = {
            "spec": report.spec,
            "n_rows": report.n_rows,
            "n_items": report.n_items,
            "dropped": data.dropped,
            "converged": fit.converged,
            "iterations": fit.iterations,
            "coefficients": fit.coefficients,
            "odds_ratios": {t: math.exp(c) for t, c in fit.coefficients.items()},
            "regressors": {
                reg: {
                    "coef": report.coef[reg],
                    "coef_ci": list(report.coef_ci[reg]),
                    "odds_ratio": math.exp(report.coef[reg]),
                    "ame": report.ame[reg],
                    "ame_ci": list(report.ame_ci[reg]),
                }
                for reg in report.regressors
            },
            "overall_loss": loss,
            "boot": {"success": report.boot_success, "fail": report.boot_fail, "b": report.b},
        }
        for reg in report.regressors:
            lo, hi = report.ame_ci[reg]
            tsv.append([
                annotator, report.spec, reg,
                fmt(report.coef[reg], 2),
                fmt(math.exp(report.coef[reg]), 2),
                fmt(report.ame[reg], 2),
                f"[{fmt(lo, 2)}, {fmt(hi, 2)}]",
                fmt(loss, 2) if reg == "T" else "",
            ])

    config = {"spec": args.spec, "omit_s": args.omit_s, "boot": args.boot,
              "datasets": args.datasets}
    _emit(args, "impact", config, inputs, results, tsv)
    return 0


def cmd_rank(args) -> int:
    assembled, inputs = _load_impact_inputs(args)
    results = {}
    tsv = [["annotator", "eval_model", "observed", "counterfactual", "uplift", "uplift_ci"]]
    for annotator, data in sorted(assembled.items()):
        fit = regression.fit_logistic(list(data.rows), "A", args.omit_s)
        report = regression.counterfactual_ranking(list(data.rows), fit, b=args.boot,
                                                   seed=args.seed, jobs=args.jobs)
        results[annotator] = {
            "models": list(report.models),
            "observed_accuracy": report.observed_accuracy,
            "counterfactual_accuracy": report.counterfactual_accuracy,
            "uplift": report.uplift,
            "uplift_ci": {m: list(ci) for m, ci in report.uplift_ci.items()},
            "spearman": report.spearman,
            "spearman_ci": list(report.spearman_ci) if report.spearman_ci else None,
            "kendall": report.kendall,
            "kendall_ci": list(report.kendall_ci) if report.kendall_ci else None,
            "boot": {"success": report.boot_success, "fail": report.boot_fail, "b": report.b},
            "note": report.note,
        }
        for model in report.models:
            lo, hi = report.uplift_ci[model]
            tsv.append([annotator, model,
                        fmt(report.observed_accuracy[model], 3),
                        fmt(report.counterfactual_accuracy[model], 3),
                        fmt(report.uplift[model], 2),
                        f"[{fmt(lo, 2)}, {fmt(hi, 2)}]"])
        tsv.append([annotator, "spearman", fmt(report.spearman, 4), "", "", ""])
        tsv.append([annotator, "kendall", fmt(report.kendall, 4), "", "", ""])

    config = {"omit_s": args.omit_s, "boot": args.boot, "datasets": args.datasets}
    _emit(args, "rank", config, inputs, results, tsv)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        name = getattr(exc, "filename", None)
        print(f"i/o error: {exc}" + (f" ({name})" if name and str(name) not in str(exc) else ""),
              file=sys.stderr)
        return 1


def entrypoint() -> None:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    raise SystemExit(main())
