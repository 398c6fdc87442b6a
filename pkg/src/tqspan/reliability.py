"""Multi-rater chance-corrected reliability.

Both coefficients are nominal Krippendorff alpha, 1 - Do/De, computed from
the pairwise coincidence counts of binary labels:

* ``alpha_nominal`` treats each segment as one unit labeled error/no-error
  per rater.
* ``alpha_unitized`` treats each character position of each segment as one
  unit labeled by mask membership, measuring boundary-level localization
  agreement on the same continuum.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .charmetrics import CharMask, build_mask
from .matching import target_spans_by_segment
from .records import AnnotationSet, ParameterError, Segment


@dataclass(frozen=True)
class AlphaResult:
    value: float | None
    defined: bool
    note: str = ""


@dataclass(frozen=True)
class RaterGrid:
    """Shared-subset design: every (segment, rater) cell is present."""

    raters: tuple[str, ...]
    segment_ids: tuple[str, ...]
    languages: dict[str, str]
    labels: dict[tuple[str, str], int]
    masks: dict[tuple[str, str], CharMask]


def build_grid(segments: Mapping[str, Segment],
               sets_by_rater: Mapping[str, Iterable[AnnotationSet]]) -> RaterGrid:
    """Assemble the grid over all corpus segments.

    The any-error label is 1 when the rater marked at least one span on the
    segment (either side); masks cover valid-offset target spans. A rater
    without a record for a segment contributes an empty cell.
    """
    raters = tuple(sorted(sets_by_rater))
    if len(raters) < 2:
        raise ParameterError("reliability requires at least 2 raters")

    labels: dict[tuple[str, str], int] = {}
    masks: dict[tuple[str, str], CharMask] = {}
    for rater in raters:
        rater_sets = list(sets_by_rater[rater])
        all_spans: dict[str, list] = {}
        for annotation in rater_sets:
            all_spans.setdefault(annotation.segment_id, []).extend(annotation.spans)
        target_spans = target_spans_by_segment(rater_sets)
        for segment_id, segment in segments.items():
            labels[(segment_id, rater)] = int(bool(all_spans.get(segment_id)))
            masks[(segment_id, rater)] = build_mask(segment, target_spans.get(segment_id, []))

    return RaterGrid(
        raters=raters,
        segment_ids=tuple(segments),
        languages={sid: seg.language for sid, seg in segments.items()},
        labels=labels,
        masks=masks,
    )


def _alpha_from_counts(disagreement_mass: float, n: int, ones: int) -> AlphaResult:
    """Alpha from pooled binary coincidence counts.

    ``disagreement_mass`` is the off-diagonal coincidence mass
    sum_u 2*k_u*(m_u - k_u)/(m_u - 1); expected disagreement uses the
    marginal value counts: De = 2*n1*n0 / (n*(n-1)).
    """
    if n < 2:
        return AlphaResult(None, False, "undefined (fewer than 2 pairable values)")
    zeros = n - ones
    expected = 2.0 * ones * zeros / (n * (n - 1))
    if expected == 0.0:
        return AlphaResult(None, False, "undefined (no variation)")
    observed = disagreement_mass / n
    return AlphaResult(1.0 - observed / expected, True)


def alpha_nominal(grid: RaterGrid) -> AlphaResult:
    """Nominal alpha on segment-level any-error labels."""
    if len(grid.segment_ids) < 2:
        raise ParameterError("alpha requires at least 2 segments")
    m = len(grid.raters)
    disagreement = 0.0
    n = 0
    ones = 0
    for segment_id in grid.segment_ids:
        k = sum(grid.labels[(segment_id, rater)] for rater in grid.raters)
        disagreement += 2.0 * k * (m - k) / (m - 1)
        n += m
        ones += k
    return _alpha_from_counts(disagreement, n, ones)


@dataclass(frozen=True)
class UnitizedReport:
    overall: AlphaResult
    per_language: dict[str, AlphaResult]
    value_range: tuple[float, float] | None


def alpha_unitized(grid: RaterGrid) -> UnitizedReport:
    """Character-level nominal alpha over binary error masks, globally and per
    language; the range is the min-max of defined per-language values."""
    m = len(grid.raters)
    totals: dict[str, list[float]] = {}
    for segment_id in grid.segment_ids:
        language = grid.languages[segment_id]
        length = grid.masks[(segment_id, grid.raters[0])].length
        counts = np.zeros(length, dtype=np.int64)
        for rater in grid.raters:
            for start, end in grid.masks[(segment_id, rater)].error_chars:
                counts[start:end] += 1
        disagreement = float(np.sum(2.0 * counts * (m - counts)) / (m - 1))
        for key in ("__all__", language):
            acc = totals.setdefault(key, [0.0, 0, 0])
            acc[0] += disagreement
            acc[1] += length * m
            acc[2] += int(counts.sum())

    overall = _alpha_from_counts(*totals["__all__"]) if totals else AlphaResult(
        None, False, "undefined (empty grid)")
    per_language = {
        language: _alpha_from_counts(*totals[language])
        for language in sorted(k for k in totals if k != "__all__")
    }
    defined = [r.value for r in per_language.values() if r.defined]
    value_range = (min(defined), max(defined)) if defined else None
    return UnitizedReport(overall=overall, per_language=per_language, value_range=value_range)
