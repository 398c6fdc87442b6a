"""Span-level translation-error annotation metrics and impact analysis."""

__version__ = "0.1.0"

from .records import (  # noqa: F401
    AnnotationSet,
    CorrectnessRecord,
    ErrorSpan,
    InputError,
    ParameterError,
    ParseError,
    Segment,
    SourceAnomaly,
    ValidationError,
    ground_span,
    load_annotation_sets,
    load_anomalies,
    load_correctness,
    load_segments,
    merge_overlapping,
)
