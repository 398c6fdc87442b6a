"""Gold-span projection from good/incorrect translation pairs.

Each input item carries a human reference plus a good and an incorrect
translation differing by one targeted edit. The case-sensitive token diff
between good and incorrect isolates that edit; items with exactly one
contentful edit whose good-side tokens occur exactly once in the reference
keep that occurrence as the gold span, everything else is discarded with a
reason. Predicted spans are then scored classically (exact token-interval
equality) and tolerantly (containment with up to k tokens of slack per
side), aggregated per phenomenon and per MQM category.
"""

from __future__ import annotations

import json
import unicodedata
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .records import (
    ParameterError,
    ParseError,
    ValidationError,
    _iter_jsonl,
    _need,
    _need_str,
)

MQM_CATEGORIES = ("Accuracy", "Fluency/Style")

KEPT = "kept"
DISCARDED = "discarded"
DISCARD_REASONS = (
    "multiple_diffs",
    "non_contentful",
    "no_reference_match",
    "ambiguous_reference_match",
)


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def tokenize(text: str) -> list[str]:
    """Whitespace split with leading/trailing punctuation detached as tokens."""
    tokens: list[str] = []
    for chunk in text.split():
        lead: list[str] = []
        while chunk and _is_punct(chunk[0]):
            lead.append(chunk[0])
            chunk = chunk[1:]
        trail: list[str] = []
        while chunk and _is_punct(chunk[-1]):
            trail.append(chunk[-1])
            chunk = chunk[:-1]
        tokens.extend(lead)
        if chunk:
            tokens.append(chunk)
        tokens.extend(reversed(trail))
    return tokens


def is_contentful(token: str) -> bool:
    """True when the token contains at least one letter or digit."""
    return any(ch.isalnum() for ch in token)


@dataclass(frozen=True)
class TokenEdit:
    """One contiguous edit; either side may be an empty range."""

    good_start: int
    good_end: int
    incorrect_start: int
    incorrect_end: int

    @property
    def kind(self) -> str:
        if self.good_start == self.good_end:
            return "insert"
        if self.incorrect_start == self.incorrect_end:
            return "delete"
        return "replace"


def _lcs_match_pairs(a: Sequence[str], b: Sequence[str]) -> list[tuple[int, int]]:
    """Deterministic longest-common-subsequence alignment as index pairs."""
    n, m = len(a), len(b)
    table = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n - 1, -1, -1):
        row, below = table[i], table[i + 1]
        for j in range(m - 1, -1, -1):
            row[j] = below[j + 1] + 1 if a[i] == b[j] else max(below[j], row[j + 1])
    pairs = []
    i = j = 0
    while i < n and j < m:
        if a[i] == b[j] and table[i][j] == table[i + 1][j + 1] + 1:
            pairs.append((i, j))
            i += 1
            j += 1
        elif table[i + 1][j] >= table[i][j + 1]:
            i += 1
        else:
            j += 1
    return pairs


def diff_tokens(good: Sequence[str], incorrect: Sequence[str]) -> list[TokenEdit]:
    """Minimal contiguous edits between two token sequences under LCS."""
    edits = []
    prev_good = prev_bad = 0
    sentinel = [(len(good), len(incorrect))]
    for i, j in _lcs_match_pairs(good, incorrect) + sentinel:
        if i > prev_good or j > prev_bad:
            edits.append(TokenEdit(prev_good, i, prev_bad, j))
        prev_good, prev_bad = i + 1, j + 1
    return edits


def token_diff(good: str, incorrect: str) -> list[TokenEdit]:
    """Case-sensitive token diff of two texts."""
    return diff_tokens(tokenize(good), tokenize(incorrect))


@dataclass(frozen=True)
class AcesItem:
    item_id: str
    language: str
    phenomenon: str
    mqm_category: str
    reference: str
    good: str
    incorrect: str


@dataclass(frozen=True)
class ProjectedItem:
    item_id: str
    language: str
    phenomenon: str
    mqm_category: str
    status: str
    reason: str | None = None
    gold_start: int | None = None
    gold_end: int | None = None
    gold_text: str | None = None
    reference_tokens: int = 0
    note: str = ""


def load_phenomenon_mapping(path: str | Path | None = None) -> dict[str, dict[str, str]]:
    """Phenomenon to MQM type/category map; ships with the package."""
    if path is not None:
        raw = Path(path).read_text(encoding="utf-8")
    else:
        raw = resources.files("tqspan.data").joinpath("phenomenon_mqm.json").read_text(
            encoding="utf-8")
    mapping = json.loads(raw)
    for phenomenon, entry in mapping.items():
        if entry.get("category") not in MQM_CATEGORIES:
            raise ValidationError(
                f"mapping entry {phenomenon!r} has invalid category {entry.get('category')!r}")
    return mapping


def _category_for(phenomenon: str, mapping: Mapping[str, Mapping[str, str]]) -> str:
    try:
        return mapping[phenomenon]["category"]
    except KeyError:
        raise ValidationError(
            f"unknown phenomenon {phenomenon!r}; known phenomena: "
            + ", ".join(sorted(mapping))
        ) from None


def load_aces_items(path: str | Path,
                    mapping: Mapping[str, Mapping[str, str]] | None = None) -> list[AcesItem]:
    """Load aces.jsonl; the MQM category is assigned from the mapping."""
    if mapping is None:
        mapping = load_phenomenon_mapping()
    items = []
    seen: set[str] = set()
    for lineno, obj in _iter_jsonl(path):
        item_id = _need_str(obj, "item_id", path, lineno)
        if item_id in seen:
            raise ValidationError(f"duplicate item_id {item_id!r} in {path}")
        seen.add(item_id)
        phenomenon = _need_str(obj, "phenomenon", path, lineno)
        items.append(AcesItem(
            item_id=item_id,
            language=_need_str(obj, "language", path, lineno),
            phenomenon=phenomenon,
            mqm_category=_category_for(phenomenon, mapping),
            reference=_need_str(obj, "reference", path, lineno),
            good=_need_str(obj, "good", path, lineno),
            incorrect=_need_str(obj, "incorrect", path, lineno),
        ))
    return items


def load_predictions(path: str | Path) -> dict[str, list[tuple[int, int]]]:
    """Load predictions.jsonl: token intervals on the reference, per item."""
    predictions: dict[str, list[tuple[int, int]]] = {}
    for lineno, obj in _iter_jsonl(path):
        item_id = _need_str(obj, "item_id", path, lineno)
        start = _need(obj, "token_start", path, lineno)
        end = _need(obj, "token_end", path, lineno)
        if not isinstance(start, int) or not isinstance(end, int):
            raise ParseError("token_start and token_end must be integers", path, lineno)
        predictions.setdefault(item_id, []).append((start, end))
    return predictions


def find_token_subsequence(needle: Sequence[str], haystack: Sequence[str]) -> list[int]:
    """Start indices of every occurrence of needle as a contiguous run."""
    if not needle:
        return []
    return [
        start
        for start in range(len(haystack) - len(needle) + 1)
        if list(haystack[start:start + len(needle)]) == list(needle)
    ]


def project(item: AcesItem) -> ProjectedItem:
    """Derive the gold span, or discard the item with a reason.

    An edit is contentful when its good-side tokens contain a letter or
    digit; pure insertions therefore never qualify and, when they are the
    only lexical change, the item is discarded as no_reference_match since
    a zero-width gold span cannot be scored under containment.
    """
    reference_tokens = tokenize(item.reference)
    good_tokens = tokenize(item.good)
    incorrect_tokens = tokenize(item.incorrect)
    edits = diff_tokens(good_tokens, incorrect_tokens)

    def discarded(reason: str, note: str = "") -> ProjectedItem:
        return ProjectedItem(
            item_id=item.item_id, language=item.language, phenomenon=item.phenomenon,
            mqm_category=item.mqm_category, status=DISCARDED, reason=reason,
            reference_tokens=len(reference_tokens), note=note,
        )

    contentful = [
        edit for edit in edits
        if any(is_contentful(tok) for tok in good_tokens[edit.good_start:edit.good_end])
    ]
    if len(contentful) > 1:
        return discarded("multiple_diffs")
    if not contentful:
        insertions = [
            edit for edit in edits
            if edit.kind == "insert"
            and any(is_contentful(tok) for tok in
                    incorrect_tokens[edit.incorrect_start:edit.incorrect_end])
        ]
        if insertions:
            return discarded("no_reference_match", note="zero-width insertion edit")
        return discarded("non_contentful")

    edit = contentful[0]
    needle = good_tokens[edit.good_start:edit.good_end]
    occurrences = find_token_subsequence(needle, reference_tokens)
    if not occurrences:
        return discarded("no_reference_match")
    if len(occurrences) > 1:
        return discarded("ambiguous_reference_match")

    start = occurrences[0]
    end = start + len(needle)
    return ProjectedItem(
        item_id=item.item_id, language=item.language, phenomenon=item.phenomenon,
        mqm_category=item.mqm_category, status=KEPT,
        gold_start=start, gold_end=end,
        gold_text=" ".join(reference_tokens[start:end]),
        reference_tokens=len(reference_tokens),
    )


def project_items(items: Iterable[AcesItem]) -> list[ProjectedItem]:
    return [project(item) for item in items]


@dataclass(frozen=True)
class PhenomenonScore:
    phenomenon: str
    mqm_category: str
    n_items: int
    tp: int
    fp: int
    fn: int
    tp_tolerant: int
    fp_tolerant: int
    fn_tolerant: int
    precision: float
    recall: float
    f1: float
    precision_tolerant: float
    recall_tolerant: float
    f1_tolerant: float


def _tolerant_correct(pred: tuple[int, int], gold: tuple[int, int], k: int) -> bool:
    (ps, pe), (gs, ge) = pred, gold
    return ps <= gs and pe >= ge and gs - ps <= k and pe - ge <= k


def score_spans(items: Iterable[ProjectedItem],
                predictions: Mapping[str, Sequence[tuple[int, int]]],
                k: int = 3) -> list[PhenomenonScore]:
    """Classic and tolerant span scores, micro-averaged per phenomenon.

    Each kept item has exactly one gold span, so per-item TP is 0 or 1 under
    either criterion; every further prediction on the item counts as FP.
    Predictions for unknown or discarded items are ignored.
    """
    if k < 0:
        raise ParameterError("boundary slack k must be >= 0")
    from .matching import prf

    sums: dict[str, list[int]] = {}
    categories: dict[str, str] = {}
    for item in items:
        if item.status != KEPT:
            continue
        preds = list(predictions.get(item.item_id, []))
        for start, end in preds:
            if start < 0 or end > item.reference_tokens or start >= end:
                raise ValidationError(
                    f"prediction [{start}, {end}) out of token range for item "
                    f"{item.item_id!r} ({item.reference_tokens} reference tokens)"
                )
        gold = (item.gold_start, item.gold_end)
        tp = int(any((start, end) == gold for start, end in preds))
        tp_tol = int(any(_tolerant_correct(pred, gold, k) for pred in preds))
        acc = sums.setdefault(item.phenomenon, [0, 0, 0, 0, 0, 0, 0])
        categories[item.phenomenon] = item.mqm_category
        acc[0] += 1
        acc[1] += tp
        acc[2] += len(preds) - tp
        acc[3] += 1 - tp
        acc[4] += tp_tol
        acc[5] += len(preds) - tp_tol
        acc[6] += 1 - tp_tol

    scores = []
    for phenomenon in sorted(sums):
        n, tp, fp, fn, tp_t, fp_t, fn_t = sums[phenomenon]
        p, r, f1 = prf(tp, fp, fn)
        p_t, r_t, f1_t = prf(tp_t, fp_t, fn_t)
        scores.append(PhenomenonScore(
            phenomenon=phenomenon, mqm_category=categories[phenomenon], n_items=n,
            tp=tp, fp=fp, fn=fn, tp_tolerant=tp_t, fp_tolerant=fp_t, fn_tolerant=fn_t,
            precision=p, recall=r, f1=f1,
            precision_tolerant=p_t, recall_tolerant=r_t, f1_tolerant=f1_t,
        ))
    return scores


MEAN_N = "meanN"
MEAN_CAP = "meanCap"
DEFAULT_CAP = 25


@dataclass(frozen=True)
class CategoryScore:
    mqm_category: str
    scheme: str
    n_items: int
    n_phenomena: int
    weight_total: float
    f1: float
    recall: float
    f1_tolerant: float
    recall_tolerant: float


def aggregate(scores: Iterable[PhenomenonScore],
              mapping: Mapping[str, Mapping[str, str]],
              scheme: str, cap: int = DEFAULT_CAP) -> dict[str, CategoryScore]:
    """Weighted per-category means: meanN weights each phenomenon by its
    sample count, meanCap by the count capped at ``cap``."""
    if scheme not in (MEAN_N, MEAN_CAP):
        raise ParameterError(f"unknown aggregation scheme {scheme!r}")
    if cap < 1:
        raise ParameterError("cap must be >= 1")

    grouped: dict[str, list[PhenomenonScore]] = {}
    for score in scores:
        category = _category_for(score.phenomenon, mapping)
        grouped.setdefault(category, []).append(score)

    out = {}
    for category in sorted(grouped):
        members = grouped[category]
        weights = [
            float(s.n_items if scheme == MEAN_N else min(s.n_items, cap))
            for s in members
        ]
        total = sum(weights)
        def wmean(values: list[float]) -> float:
            if total == 0:
                return 0.0
            return sum(w * v for w, v in zip(weights, values)) / total
        out[category] = CategoryScore(
            mqm_category=category, scheme=scheme,
            n_items=sum(s.n_items for s in members),
            n_phenomena=len(members),
            weight_total=total,
            f1=wmean([s.f1 for s in members]),
            recall=wmean([s.recall for s in members]),
            f1_tolerant=wmean([s.f1_tolerant for s in members]),
            recall_tolerant=wmean([s.recall_tolerant for s in members]),
        )
    return out
