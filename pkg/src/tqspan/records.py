"""Shared domain records and JSON-Lines input parsing.

All character offsets count Unicode scalar values (Python string indices)
and are half-open [start, end). Substring checks are case-sensitive and
whitespace-exact. Records are immutable after construction, so loaded
corpora can be shared across concurrent computations.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Iterator, Sequence

log = logging.getLogger(__name__)

MQM_LABELS = (
    "Addition",
    "Omission",
    "Mistranslation",
    "Under-translation",
    "Over-translation",
    "Reordering",
    "Untranslated",
    "Wrong language",
    "Do-not-translate",
    "Grammar",
    "Spelling",
    "Punctuation",
    "Inconsistent",
    "Awkward",
    "Unintelligible",
    "Other/Unknown",
)
_CANONICAL_LABEL = {label.lower(): label for label in MQM_LABELS}

SEVERITIES = ("major", "minor", "critical", "unknown")
SIDES = ("source", "target")

#: Language code marking rows measured on the original (untranslated) items.
ENGLISH_MARKER = "en"


class InputError(ValueError):
    """Bad input data or parameters; maps to CLI exit code 2."""


class ParseError(InputError):
    """Malformed input line; carries file path and 1-based line number."""

    def __init__(self, message: str, path: str | Path | None = None, line: int | None = None):
        prefix = f"{path}:{line}: " if path is not None and line is not None else ""
        super().__init__(f"{prefix}{message}")
        self.path = str(path) if path is not None else None
        self.line = line


class ValidationError(InputError):
    """Well-formed input that violates a cross-record contract."""


class ParameterError(InputError):
    """Invalid operation parameter."""


@dataclass(frozen=True)
class Segment:
    """One benchmark item in one target language."""

    segment_id: str
    dataset: str
    language: str
    source_text: str
    target_text: str
    item_id: str | None = None

    @property
    def item_key(self) -> str:
        """Key of the underlying source item; falls back to the segment id."""
        return self.item_id if self.item_id is not None else self.segment_id


@dataclass(frozen=True)
class ErrorSpan:
    """One annotated error region on the source or target text.

    ``start``/``end`` are only meaningful when ``offsets_valid`` is true, in
    which case ``text`` equals the referenced substring.
    """

    side: str
    text: str
    label: str
    severity: str = "unknown"
    start: int | None = None
    end: int | None = None
    offsets_valid: bool = False

    @property
    def interval(self) -> tuple[int, int]:
        if not self.offsets_valid or self.start is None or self.end is None:
            raise ValidationError("span has no valid offsets")
        return (self.start, self.end)


@dataclass(frozen=True)
class AnnotationSet:
    """One annotator's spans for one segment, in input order."""

    annotator_id: str
    segment_id: str
    spans: tuple[ErrorSpan, ...]


@dataclass(frozen=True)
class SourceAnomaly:
    """A source-side anomaly with an optional anchor in the translation."""

    segment_id: str
    source_span: ErrorSpan
    category: str
    severity: str
    target_anchor: ErrorSpan | None = None


@dataclass(frozen=True)
class CorrectnessRecord:
    """Binary outcome of one evaluation model on one item variant."""

    item_id: str
    language: str
    dataset: str
    eval_model: str
    correct: bool


def _iter_jsonl(path: str | Path) -> Iterator[tuple[int, dict]]:
    with open(path, encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON ({exc.msg})", path, lineno) from exc
            if not isinstance(obj, dict):
                raise ParseError("record is not a JSON object", path, lineno)
            yield lineno, obj


def _need(obj: dict, key: str, path, lineno: int):
    if key not in obj:
        raise ParseError(f"missing required field {key!r}", path, lineno)
    return obj[key]


def _need_str(obj: dict, key: str, path, lineno: int, allow_empty: bool = False) -> str:
    value = _need(obj, key, path, lineno)
    if not isinstance(value, str) or (not allow_empty and not value):
        raise ParseError(f"field {key!r} must be a non-empty string", path, lineno)
    return value


def canonical_label(raw: str) -> str:
    """Map a label to the closed MQM inventory (case-insensitive)."""
    try:
        return _CANONICAL_LABEL[raw.lower()]
    except KeyError:
        raise ValidationError(
            f"unknown MQM label {raw!r}; expected one of: {', '.join(MQM_LABELS)}"
        ) from None


def parse_span(obj: dict, path=None, lineno: int = 0, default_side: str | None = None,
               require_label: bool = True) -> ErrorSpan:
    """Parse one span object; zero-length spans are rejected here."""
    side = obj.get("side", default_side)
    if side not in SIDES:
        raise ParseError(f"span side must be one of {SIDES}, got {side!r}", path, lineno)
    text = obj.get("text")
    if not isinstance(text, str) or not text:
        raise ParseError("span text must be a non-empty string", path, lineno)
    if require_label or "label" in obj:
        try:
            label = canonical_label(_need_str(obj, "label", path, lineno))
        except ValidationError as exc:
            raise ParseError(str(exc), path, lineno) from None
    else:
        label = "Other/Unknown"
    severity = obj.get("severity", "unknown")
    if severity not in SEVERITIES:
        raise ParseError(f"span severity must be one of {SEVERITIES}, got {severity!r}", path, lineno)
    start, end = obj.get("start"), obj.get("end")
    if (start is None) != (end is None):
        raise ParseError("span offsets require both start and end", path, lineno)
    if start is not None:
        if not isinstance(start, int) or not isinstance(end, int):
            raise ParseError("span offsets must be integers", path, lineno)
        if start < 0 or end <= start:
            raise ParseError(f"span offsets must satisfy 0 <= start < end, got [{start}, {end})",
                             path, lineno)
    return ErrorSpan(side=side, text=text, label=label, severity=severity, start=start, end=end)


def load_segments(path: str | Path) -> dict[str, Segment]:
    """Load segments.jsonl into an ordered mapping keyed by segment id."""
    segments: dict[str, Segment] = {}
    for lineno, obj in _iter_jsonl(path):
        seg = Segment(
            segment_id=_need_str(obj, "segment_id", path, lineno),
            dataset=_need_str(obj, "dataset", path, lineno),
            language=_need_str(obj, "language", path, lineno),
            source_text=_need_str(obj, "source_text", path, lineno),
            target_text=_need_str(obj, "target_text", path, lineno),
            item_id=obj.get("item_id"),
        )
        if seg.segment_id in segments:
            raise ValidationError(f"duplicate segment_id {seg.segment_id!r} in {path}")
        segments[seg.segment_id] = seg
    if not segments:
        log.warning("no segments loaded from %s", path)
    return segments


def load_annotation_sets(path: str | Path) -> list[AnnotationSet]:
    """Load annotations.jsonl; repeated (annotator, segment) lines are merged
    in file order."""
    merged: dict[tuple[str, str], list[ErrorSpan]] = {}
    for lineno, obj in _iter_jsonl(path):
        annotator = _need_str(obj, "annotator_id", path, lineno)
        segment_id = _need_str(obj, "segment_id", path, lineno)
        raw_spans = _need(obj, "spans", path, lineno)
        if not isinstance(raw_spans, list):
            raise ParseError("field 'spans' must be a list", path, lineno)
        spans = [parse_span(raw, path, lineno) for raw in raw_spans]
        merged.setdefault((annotator, segment_id), []).extend(spans)
    return [
        AnnotationSet(annotator_id=a, segment_id=s, spans=tuple(spans))
        for (a, s), spans in merged.items()
    ]


def load_anomalies(path: str | Path) -> list[SourceAnomaly]:
    """Load anomalies.jsonl; anomaly spans may omit the MQM label."""
    anomalies = []
    for lineno, obj in _iter_jsonl(path):
        segment_id = _need_str(obj, "segment_id", path, lineno)
        source_raw = _need(obj, "source_span", path, lineno)
        if not isinstance(source_raw, dict):
            raise ParseError("field 'source_span' must be an object", path, lineno)
        source_span = parse_span(source_raw, path, lineno, default_side="source", require_label=False)
        if source_span.side != "source":
            raise ParseError("anomaly source_span must have side 'source'", path, lineno)
        anchor = None
        if obj.get("target_anchor") is not None:
            anchor_raw = obj["target_anchor"]
            if not isinstance(anchor_raw, dict):
                raise ParseError("field 'target_anchor' must be an object", path, lineno)
            anchor = parse_span(anchor_raw, path, lineno, default_side="target", require_label=False)
            if anchor.side != "target":
                raise ParseError("anomaly target_anchor must have side 'target'", path, lineno)
        severity = _need_str(obj, "severity", path, lineno)
        if severity not in ("major", "minor"):
            raise ParseError(f"anomaly severity must be 'major' or 'minor', got {severity!r}",
                             path, lineno)
        anomalies.append(SourceAnomaly(
            segment_id=segment_id,
            source_span=source_span,
            category=_need_str(obj, "category", path, lineno),
            severity=severity,
            target_anchor=anchor,
        ))
    return anomalies


def load_correctness(path: str | Path) -> list[CorrectnessRecord]:
    """Load correctness.jsonl; one record per (item, language, dataset, model)."""
    records = []
    seen: set[tuple[str, str, str, str]] = set()
    for lineno, obj in _iter_jsonl(path):
        correct = _need(obj, "correct", path, lineno)
        if isinstance(correct, bool):
            pass
        elif correct in (0, 1):
            correct = bool(correct)
        else:
            raise ParseError("field 'correct' must be a boolean", path, lineno)
        rec = CorrectnessRecord(
            item_id=_need_str(obj, "item_id", path, lineno),
            language=_need_str(obj, "language", path, lineno),
            dataset=_need_str(obj, "dataset", path, lineno),
            eval_model=_need_str(obj, "eval_model", path, lineno),
            correct=correct,
        )
        key = (rec.item_id, rec.language, rec.dataset, rec.eval_model)
        if key in seen:
            raise ValidationError(
                f"duplicate correctness record for item={rec.item_id!r} language={rec.language!r} "
                f"dataset={rec.dataset!r} eval_model={rec.eval_model!r}"
            )
        seen.add(key)
        records.append(rec)
    if not records:
        log.warning("no correctness records loaded from %s", path)
    return records


def ground_span(span: ErrorSpan, segment_text: str) -> ErrorSpan:
    """Resolve a span's offsets against the referenced segment text.

    Offsets that pass the exact-substring check are kept. Otherwise the span
    text is searched in the segment; a unique occurrence fixes the offsets,
    and any other outcome leaves the span unlinked (offsets_valid=False).
    """
    if span.start is not None and span.end is not None:
        if 0 <= span.start < span.end <= len(segment_text) \
                and segment_text[span.start:span.end] == span.text:
            return replace(span, offsets_valid=True)
    first = segment_text.find(span.text)
    if first != -1 and segment_text.find(span.text, first + 1) == -1:
        return replace(span, start=first, end=first + len(span.text), offsets_valid=True)
    return replace(span, start=None, end=None, offsets_valid=False)


def _segment_for(segment_id: str, segments: dict[str, Segment], what: str) -> Segment:
    try:
        return segments[segment_id]
    except KeyError:
        raise ValidationError(f"{what} references unknown segment_id {segment_id!r}") from None


def ground_annotation_sets(sets: Iterable[AnnotationSet],
                           segments: dict[str, Segment]) -> list[AnnotationSet]:
    """Ground every span of every set against its segment's text."""
    grounded = []
    for annotation in sets:
        seg = _segment_for(annotation.segment_id, segments, "annotation")
        spans = tuple(
            ground_span(sp, seg.target_text if sp.side == "target" else seg.source_text)
            for sp in annotation.spans
        )
        grounded.append(replace(annotation, spans=spans))
    return grounded


def ground_anomalies(anomalies: Iterable[SourceAnomaly],
                     segments: dict[str, Segment]) -> list[SourceAnomaly]:
    """Ground anomaly spans; anchors that stay ambiguous remain unlinked."""
    grounded = []
    for anomaly in anomalies:
        seg = _segment_for(anomaly.segment_id, segments, "anomaly")
        source_span = ground_span(anomaly.source_span, seg.source_text)
        anchor = None
        if anomaly.target_anchor is not None:
            anchor = ground_span(anomaly.target_anchor, seg.target_text)
        grounded.append(replace(anomaly, source_span=source_span, target_anchor=anchor))
    return grounded


def merge_intervals(intervals: Iterable[tuple[int, int]]) -> list[tuple[int, int]]:
    """Minimal sorted set of disjoint half-open intervals covering the union."""
    ordered = sorted(intervals)
    merged: list[list[int]] = []
    for start, end in ordered:
        if merged and start <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], end)
        else:
            merged.append([start, end])
    return [(s, e) for s, e in merged]


def merge_overlapping(spans: Sequence[ErrorSpan]) -> list[tuple[int, int]]:
    """Union of valid-offset spans as disjoint sorted intervals."""
    for span in spans:
        if not span.offsets_valid:
            raise ValidationError("merge_overlapping requires spans with valid offsets")
    return merge_intervals(span.interval for span in spans)
