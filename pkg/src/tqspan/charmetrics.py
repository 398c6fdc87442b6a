"""Threshold-free character-level span-overlap metrics.

Masks mark every target character covered by a valid-offset error span.
``char_f1`` scores binary overlap; ``char_f1w`` keeps the same denominators
but credits each overlapping character 1.0 when the two sides agree on
severity and 0.5 otherwise. Confidence intervals come from resampling
segments with replacement.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .records import (
    ErrorSpan,
    ParameterError,
    Segment,
    ValidationError,
    merge_intervals,
)

MAJOR = "major"
MINOR = "minor"
UNKNOWN = "unknown"

_SEV_RANK = {UNKNOWN: 0, MINOR: 1, MAJOR: 2}

METRICS = ("char_f1", "char_f1w", "any_error_f1")


@dataclass(frozen=True, eq=False)
class CharMask:
    """Binary error mask for one segment with per-character severity.

    ``severity_at`` covers exactly the union of ``error_chars``. Critical
    spans are grouped with major; characters covered only by spans of
    unknown severity stay ``unknown`` so severity-weighted scoring can
    penalize them as mismatches.
    """

    segment_id: str
    length: int
    error_chars: tuple[tuple[int, int], ...]
    severity_at: dict[int, str]
    unlinked_spans: int = 0

    @property
    def n_error_chars(self) -> int:
        return sum(end - start for start, end in self.error_chars)


def build_mask(segment: Segment, spans: Iterable[ErrorSpan]) -> CharMask:
    """Union of valid-offset target spans; offset-less target spans are
    excluded and counted in ``unlinked_spans``."""
    valid = []
    unlinked = 0
    for span in spans:
        if span.side != "target":
            continue
        if span.offsets_valid:
            valid.append(span)
        else:
            unlinked += 1

    length = len(segment.target_text)
    severity: dict[int, str] = {}
    for span in valid:
        start, end = span.interval
        if end > length:
            raise ValidationError(
                f"span [{start}, {end}) exceeds segment {segment.segment_id!r} "
                f"target length {length}"
            )
        label = MAJOR if span.severity in (MAJOR, "critical") else (
            MINOR if span.severity == MINOR else UNKNOWN)
        for pos in range(start, end):
            current = severity.get(pos)
            if current is None or _SEV_RANK[label] > _SEV_RANK[current]:
                severity[pos] = label

    intervals = tuple(merge_intervals(span.interval for span in valid))
    return CharMask(segment_id=segment.segment_id, length=length, error_chars=intervals,
                    severity_at=severity, unlinked_spans=unlinked)


def masks_for_corpus(segments: Mapping[str, Segment],
                     sets: Iterable) -> dict[str, CharMask]:
    """One mask per corpus segment from an annotator's grounded sets."""
    from .matching import target_spans_by_segment

    spans = target_spans_by_segment(sets)
    for segment_id in spans:
        if segment_id not in segments:
            raise ValidationError(f"annotation references unknown segment_id {segment_id!r}")
    return {
        segment_id: build_mask(segment, spans.get(segment_id, []))
        for segment_id, segment in segments.items()
    }


@dataclass(frozen=True)
class _SegmentStats:
    gold_chars: int
    pred_chars: int
    tp: int
    tp_weighted: float
    gold_any: bool
    pred_any: bool


def _positions(mask: CharMask) -> set[int]:
    out: set[int] = set()
    for start, end in mask.error_chars:
        out.update(range(start, end))
    return out


def _pair_stats(gold: CharMask, pred: CharMask) -> _SegmentStats:
    shared = _positions(gold) & _positions(pred)
    weighted = 0.0
    for pos in shared:
        gsev = gold.severity_at[pos]
        psev = pred.severity_at[pos]
        weighted += 1.0 if gsev == psev and gsev != UNKNOWN else 0.5
    return _SegmentStats(
        gold_chars=gold.n_error_chars,
        pred_chars=pred.n_error_chars,
        tp=len(shared),
        tp_weighted=weighted,
        gold_any=gold.n_error_chars > 0,
        pred_any=pred.n_error_chars > 0,
    )


def _aligned_stats(gold_masks: Mapping[str, CharMask],
                   pred_masks: Mapping[str, CharMask]) -> list[_SegmentStats]:
    gold_only = set(gold_masks) - set(pred_masks)
    pred_only = set(pred_masks) - set(gold_masks)
    if gold_only or pred_only:
        missing = sorted(gold_only | pred_only)
        raise ValidationError(f"segments present on one side only: {missing}")
    return [_pair_stats(gold_masks[sid], pred_masks[sid]) for sid in sorted(gold_masks)]


def _f1(numerator: float, gold_total: float, pred_total: float) -> float:
    precision = numerator / pred_total if pred_total > 0 else 0.0
    recall = numerator / gold_total if gold_total > 0 else 0.0
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def _metric_value(stats: Sequence[_SegmentStats], metric: str) -> float:
    if metric == "char_f1":
        return _f1(sum(s.tp for s in stats),
                   sum(s.gold_chars for s in stats),
                   sum(s.pred_chars for s in stats))
    if metric == "char_f1w":
        return _f1(sum(s.tp_weighted for s in stats),
                   sum(s.gold_chars for s in stats),
                   sum(s.pred_chars for s in stats))
    if metric == "any_error_f1":
        tp = sum(1 for s in stats if s.gold_any and s.pred_any)
        fp = sum(1 for s in stats if s.pred_any and not s.gold_any)
        fn = sum(1 for s in stats if s.gold_any and not s.pred_any)
        return _f1(tp, tp + fn, tp + fp)
    raise ParameterError(f"unknown metric {metric!r}; expected one of {METRICS}")


def char_f1(gold_masks: Mapping[str, CharMask], pred_masks: Mapping[str, CharMask]) -> float:
    """Binary character-overlap F1, global micro over all segments."""
    return _metric_value(_aligned_stats(gold_masks, pred_masks), "char_f1")


def char_f1w(gold_masks: Mapping[str, CharMask], pred_masks: Mapping[str, CharMask]) -> float:
    """Severity-weighted character-overlap F1: mismatched or unknown severity
    earns half credit per overlapping character; denominators are unchanged."""
    return _metric_value(_aligned_stats(gold_masks, pred_masks), "char_f1w")


def any_error_f1(gold_masks: Mapping[str, CharMask], pred_masks: Mapping[str, CharMask]) -> float:
    """Segment-level error/no-error agreement (binary F1 over segments)."""
    return _metric_value(_aligned_stats(gold_masks, pred_masks), "any_error_f1")


@dataclass(frozen=True)
class BootstrapInterval:
    point: float
    lower: float
    upper: float
    replicates: int
    seed: int


def char_ci(gold_masks: Mapping[str, CharMask], pred_masks: Mapping[str, CharMask],
            metric: str, b: int = 2500, seed: int = 0) -> BootstrapInterval:
    """Percentile 95% bootstrap interval via segment resampling.

    The point estimate is the non-resampled metric. Replicate r draws its
    indices from a generator seeded with (seed, r), so results are
    deterministic for a fixed seed and independent of execution order.
    """
    if b < 1:
        raise ParameterError("bootstrap replicate count must be >= 1")
    if metric not in METRICS:
        raise ParameterError(f"unknown metric {metric!r}; expected one of {METRICS}")
    stats = _aligned_stats(gold_masks, pred_masks)
    if not stats:
        raise ParameterError("bootstrap requires at least one segment")
    point = _metric_value(stats, metric)

    n = len(stats)
    values = np.empty(b)
    for replicate in range(b):
        rng = np.random.default_rng([seed, replicate])
        idx = rng.integers(0, n, size=n)
        values[replicate] = _metric_value([stats[i] for i in idx], metric)
    lower, upper = np.percentile(values, [2.5, 97.5])
    return BootstrapInterval(point=point, lower=float(lower), upper=float(upper),
                             replicates=b, seed=seed)
