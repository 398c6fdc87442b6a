import json

import pytest

from tqspan.records import AnnotationSet, ErrorSpan, Segment


def make_segment(segment_id="s1", dataset="bench", language="de",
                 source_text="a source sentence", target_text="ein Zielsatz " * 8,
                 item_id=None):
    return Segment(segment_id=segment_id, dataset=dataset, language=language,
                   source_text=source_text, target_text=target_text, item_id=item_id)


def make_span(start, end, side="target", text=None, label="Mistranslation",
              severity="minor", valid=True):
    if text is None:
        text = "x" * (end - start)
    return ErrorSpan(side=side, text=text, label=label, severity=severity,
                     start=start if valid else None, end=end if valid else None,
                     offsets_valid=valid)


def make_set(spans, annotator_id="a1", segment_id="s1"):
    return AnnotationSet(annotator_id=annotator_id, segment_id=segment_id,
                         spans=tuple(spans))


def write_jsonl(path, rows):
    path.write_text("".join(json.dumps(r, ensure_ascii=False) + "\n" for r in rows),
                    encoding="utf-8")
    return path


@pytest.fixture
def segments_by_id():
    return {"s1": make_segment()}
