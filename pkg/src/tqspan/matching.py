"""Pairwise span agreement between two annotators.

Two matching criteria are supported:

* ``oc``: positional overlap coefficient, overlap length divided by the
  shorter span length, computed on valid target character offsets.
* ``sim``: Sorensen-Dice similarity over raw character-trigram multisets of
  the span texts, computed on spans deduplicated by exact text.

Matching is greedy one-to-one over all pairs at or above the threshold,
sorted by score descending with deterministic tie-breaking. Counts are
micro-aggregated per language and pooled.
"""

from __future__ import annotations

import logging
import math
import statistics
from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .records import (
    AnnotationSet,
    ErrorSpan,
    ParameterError,
    Segment,
    SourceAnomaly,
    ValidationError,
    merge_intervals,
)

log = logging.getLogger(__name__)

OC = "oc"
SIM = "sim"
SWEEP_THRESHOLDS: dict[str, tuple[float, ...]] = {OC: (0.7, 0.8, 0.9), SIM: (0.4, 0.5, 0.6)}
DEFAULT_THRESHOLD = {OC: 0.8, SIM: 0.6}


@dataclass(frozen=True)
class MatchConfig:
    criterion: str
    threshold: float
    dedup_by_text: bool

    def __post_init__(self):
        if self.criterion not in (OC, SIM):
            raise ParameterError(f"unknown matching criterion {self.criterion!r}")
        if not 0.0 < self.threshold <= 1.0:
            raise ParameterError(f"threshold must lie in (0, 1], got {self.threshold}")

    @staticmethod
    def oc(threshold: float = DEFAULT_THRESHOLD[OC]) -> "MatchConfig":
        return MatchConfig(OC, threshold, dedup_by_text=False)

    @staticmethod
    def sim(threshold: float = DEFAULT_THRESHOLD[SIM]) -> "MatchConfig":
        return MatchConfig(SIM, threshold, dedup_by_text=True)


def oc_score(a: tuple[int, int], b: tuple[int, int]) -> float:
    """Overlap length divided by the shorter interval's length."""
    (a1, a2), (b1, b2) = a, b
    if a2 <= a1 or b2 <= b1:
        raise ParameterError("overlap coefficient requires non-empty intervals")
    overlap = min(a2, b2) - max(a1, b1)
    return max(0, overlap) / min(a2 - a1, b2 - b1)


def trigram_counts(text: str) -> Counter:
    """Multiset of raw character trigrams.

    Texts shorter than three characters contribute a single gram consisting
    of the whole text, which preserves the identity and disjointness limits.
    """
    if len(text) < 3:
        return Counter({text: 1})
    return Counter(text[i:i + 3] for i in range(len(text) - 2))


def sim_score(s1: str, s2: str) -> float:
    """Sorensen-Dice similarity over raw character-trigram multisets."""
    if not s1 or not s2:
        raise ParameterError("trigram similarity requires non-empty texts")
    c1 = trigram_counts(s1)
    c2 = trigram_counts(s2)
    overlap = sum(min(count, c2[gram]) for gram, count in c1.items())
    return 2.0 * overlap / (sum(c1.values()) + sum(c2.values()))


@dataclass(frozen=True)
class SegmentMatch:
    """Match counts for one segment; pair indices refer to input positions."""

    tp: int
    fp: int
    fn: int
    pairs: tuple[tuple[int, int, float], ...] = ()


def _dedup_by_text(spans: Sequence[ErrorSpan]) -> list[tuple[int, ErrorSpan]]:
    seen: set[str] = set()
    kept = []
    for idx, span in enumerate(spans):
        if span.text in seen:
            continue
        seen.add(span.text)
        kept.append((idx, span))
    return kept


def _start_key(span: ErrorSpan) -> float:
    return span.start if span.offsets_valid and span.start is not None else math.inf


def greedy_match(gold: Sequence[ErrorSpan], pred: Sequence[ErrorSpan],
                 cfg: MatchConfig) -> SegmentMatch:
    """Greedy one-to-one matching on one segment.

    Under ``oc``, spans without valid offsets are never matchable and count
    toward FP/FN. Under ``sim``, both sides are first deduplicated by exact
    span text (first occurrence kept). Candidate pairs at or above the
    threshold are sorted by score descending, ties broken by gold start
    offset, then predicted start offset, then input order.
    """
    gold_entries = _dedup_by_text(gold) if cfg.dedup_by_text else list(enumerate(gold))
    pred_entries = _dedup_by_text(pred) if cfg.dedup_by_text else list(enumerate(pred))

    candidates = []
    for gi, gspan in gold_entries:
        for pj, pspan in pred_entries:
            if cfg.criterion == OC:
                if not (gspan.offsets_valid and pspan.offsets_valid):
                    continue
                score = oc_score(gspan.interval, pspan.interval)
            else:
                score = sim_score(gspan.text, pspan.text)
            if score >= cfg.threshold:
                candidates.append((score, _start_key(gspan), _start_key(pspan), gi, pj))
    candidates.sort(key=lambda c: (-c[0], c[1], c[2], c[3], c[4]))

    used_gold: set[int] = set()
    used_pred: set[int] = set()
    pairs = []
    for score, _, _, gi, pj in candidates:
        if gi in used_gold or pj in used_pred:
            continue
        used_gold.add(gi)
        used_pred.add(pj)
        pairs.append((gi, pj, score))

    tp = len(pairs)
    return SegmentMatch(tp=tp, fp=len(pred_entries) - tp, fn=len(gold_entries) - tp,
                        pairs=tuple(pairs))


def target_spans_by_segment(sets: Iterable[AnnotationSet]) -> dict[str, list[ErrorSpan]]:
    """Collect target-side spans per segment; source spans are excluded."""
    by_segment: dict[str, list[ErrorSpan]] = defaultdict(list)
    for annotation in sets:
        by_segment[annotation.segment_id].extend(
            span for span in annotation.spans if span.side == "target"
        )
    return dict(by_segment)


def match_segments(gold_sets: Iterable[AnnotationSet], pred_sets: Iterable[AnnotationSet],
                   cfg: MatchConfig) -> dict[str, SegmentMatch]:
    """Per-segment greedy matching over every segment either side annotated."""
    gold = target_spans_by_segment(gold_sets)
    pred = target_spans_by_segment(pred_sets)
    fragments = {}
    for segment_id in sorted(set(gold) | set(pred)):
        gspans = gold.get(segment_id, [])
        pspans = pred.get(segment_id, [])
        if not gspans and not pspans:
            continue
        fragments[segment_id] = greedy_match(gspans, pspans, cfg)
    return fragments


def prf(tp: int | float, fp: int | float, fn: int | float) -> tuple[float, float, float]:
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


@dataclass(frozen=True)
class LanguageScores:
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class MatchReport:
    """Micro-aggregated matching result: pooled, per-language, and mean views."""

    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float
    per_language: dict[str, LanguageScores]
    mean_precision: float
    mean_recall: float
    mean_f1: float
    f1_range: tuple[float, float]
    matched_pairs: tuple[tuple[str, int, int, float], ...]


def micro_aggregate(fragments: Mapping[str, SegmentMatch],
                    segments: Mapping[str, Segment]) -> MatchReport:
    """Sum TP/FP/FN per language and pooled; mean over languages is unweighted."""
    sums: dict[str, list[int]] = defaultdict(lambda: [0, 0, 0])
    matched = []
    for segment_id in sorted(fragments):
        fragment = fragments[segment_id]
        if segment_id not in segments:
            raise ValidationError(f"fragment references unknown segment_id {segment_id!r}")
        counts = sums[segments[segment_id].language]
        counts[0] += fragment.tp
        counts[1] += fragment.fp
        counts[2] += fragment.fn
        matched.extend((segment_id, gi, pj, score) for gi, pj, score in fragment.pairs)

    per_language = {}
    for language in sorted(sums):
        tp, fp, fn = sums[language]
        p, r, f1 = prf(tp, fp, fn)
        per_language[language] = LanguageScores(tp, fp, fn, p, r, f1)

    if not per_language:
        log.warning("micro_aggregate over an empty fragment set")
        return MatchReport(0, 0, 0, 0.0, 0.0, 0.0, {}, 0.0, 0.0, 0.0, (0.0, 0.0), ())

    tp = sum(s.tp for s in per_language.values())
    fp = sum(s.fp for s in per_language.values())
    fn = sum(s.fn for s in per_language.values())
    p, r, f1 = prf(tp, fp, fn)
    f1_values = [s.f1 for s in per_language.values()]
    return MatchReport(
        tp=tp, fp=fp, fn=fn, precision=p, recall=r, f1=f1,
        per_language=per_language,
        mean_precision=statistics.fmean(s.precision for s in per_language.values()),
        mean_recall=statistics.fmean(s.recall for s in per_language.values()),
        mean_f1=statistics.fmean(f1_values),
        f1_range=(min(f1_values), max(f1_values)),
        matched_pairs=tuple(matched),
    )


@dataclass(frozen=True)
class SweepReport:
    criterion: str
    f1_by_threshold: dict[float, float]
    f1_range: tuple[float, float]


def threshold_sweep(gold_sets: Iterable[AnnotationSet], pred_sets: Iterable[AnnotationSet],
                    criterion: str) -> SweepReport:
    """Pooled micro-F1 at each sweep threshold, plus the min-max range."""
    if criterion not in SWEEP_THRESHOLDS:
        raise ParameterError(f"unknown matching criterion {criterion!r}")
    gold_sets = list(gold_sets)
    pred_sets = list(pred_sets)
    scores = {}
    for threshold in SWEEP_THRESHOLDS[criterion]:
        cfg = MatchConfig(criterion, threshold, dedup_by_text=(criterion == SIM))
        fragments = match_segments(gold_sets, pred_sets, cfg)
        tp = sum(f.tp for f in fragments.values())
        fp = sum(f.fp for f in fragments.values())
        fn = sum(f.fn for f in fragments.values())
        scores[threshold] = prf(tp, fp, fn)[2]
    values = list(scores.values())
    return SweepReport(criterion, scores, (min(values), max(values)))


@dataclass(frozen=True)
class LanguageStats:
    n_segments: int
    n_spans: int
    n_valid_spans: int
    spans_per_sample: float
    median_span_length: float
    median_defined: bool
    coverage: float


@dataclass(frozen=True)
class AnnotatorStats:
    """Per-language span statistics and their unweighted means over languages."""

    per_language: dict[str, LanguageStats]
    spans_per_sample: float
    median_span_length: float
    coverage: float
    median_defined: bool


def annotator_stats(segments: Mapping[str, Segment],
                    sets: Iterable[AnnotationSet]) -> AnnotatorStats:
    """Spans per sample, median span length, and union coverage of target text.

    Each statistic is computed per language over all corpus segments of that
    language (unannotated segments count zero spans), then averaged over
    languages. Lengths and coverage use valid-offset target spans only.
    A language with no valid spans reports median 0.0 with a flag.
    """
    spans = target_spans_by_segment(sets)
    by_language: dict[str, list[Segment]] = defaultdict(list)
    for segment in segments.values():
        by_language[segment.language].append(segment)

    per_language = {}
    for language in sorted(by_language):
        segs = by_language[language]
        counts = []
        lengths = []
        coverages = []
        n_spans = 0
        for segment in segs:
            seg_spans = spans.get(segment.segment_id, [])
            counts.append(len(seg_spans))
            n_spans += len(seg_spans)
            valid = [sp for sp in seg_spans if sp.offsets_valid]
            lengths.extend(sp.end - sp.start for sp in valid)
            union = sum(e - s for s, e in merge_intervals(sp.interval for sp in valid))
            coverages.append(union / len(segment.target_text))
        defined = bool(lengths)
        per_language[language] = LanguageStats(
            n_segments=len(segs),
            n_spans=n_spans,
            n_valid_spans=len(lengths),
            spans_per_sample=statistics.fmean(counts),
            median_span_length=float(statistics.median(lengths)) if defined else 0.0,
            median_defined=defined,
            coverage=statistics.fmean(coverages),
        )

    if not per_language:
        log.warning("annotator_stats over an empty segment corpus")
        return AnnotatorStats({}, 0.0, 0.0, 0.0, median_defined=False)

    stats = per_language.values()
    return AnnotatorStats(
        per_language=per_language,
        spans_per_sample=statistics.fmean(s.spans_per_sample for s in stats),
        median_span_length=statistics.fmean(s.median_span_length for s in stats),
        coverage=statistics.fmean(s.coverage for s in stats),
        median_defined=all(s.median_defined for s in stats),
    )


@dataclass(frozen=True)
class SourceOverlapReport:
    """Fraction of valid target spans overlapping anomaly-linked regions."""

    per_language: dict[str, float | None]
    mean: float | None
    rate_range: tuple[float, float] | None
    counted: int
    total: int


def source_overlap_rate(segments: Mapping[str, Segment], sets: Iterable[AnnotationSet],
                        anomalies: Iterable[SourceAnomaly],
                        threshold: float = 0.8) -> SourceOverlapReport:
    """Rate of annotator target spans whose best OC against any anomaly-linked
    target region reaches the threshold; each span counted at most once."""
    regions: dict[str, list[tuple[int, int]]] = defaultdict(list)
    for anomaly in anomalies:
        anchor = anomaly.target_anchor
        if anchor is not None and anchor.offsets_valid:
            regions[anomaly.segment_id].append(anchor.interval)

    spans = target_spans_by_segment(sets)
    per_language_counts: dict[str, list[int]] = defaultdict(lambda: [0, 0])
    for segment_id, seg_spans in spans.items():
        if segment_id not in segments:
            raise ValidationError(f"annotation references unknown segment_id {segment_id!r}")
        language = segments[segment_id].language
        linked = regions.get(segment_id, [])
        for span in seg_spans:
            if not span.offsets_valid:
                continue
            per_language_counts[language][1] += 1
            best = max((oc_score(span.interval, region) for region in linked), default=0.0)
            if best >= threshold:
                per_language_counts[language][0] += 1

    per_language: dict[str, float | None] = {}
    defined = []
    for language in sorted(per_language_counts):
        hit, total = per_language_counts[language]
        rate = hit / total if total else None
        per_language[language] = rate
        if rate is not None:
            defined.append(rate)
    return SourceOverlapReport(
        per_language=per_language,
        mean=statistics.fmean(defined) if defined else None,
        rate_range=(min(defined), max(defined)) if defined else None,
        counted=sum(v[0] for v in per_language_counts.values()),
        total=sum(v[1] for v in per_language_counts.values()),
    )
