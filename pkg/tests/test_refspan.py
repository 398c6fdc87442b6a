import random

import pytest

from tqspan.records import ParameterError, ValidationError
from tqspan.refspan import (
    AcesItem,
    MEAN_CAP,
    MEAN_N,
    PhenomenonScore,
    aggregate,
    diff_tokens,
    find_token_subsequence,
    is_contentful,
    load_phenomenon_mapping,
    project,
    project_items,
    score_spans,
    token_diff,
    tokenize,
)


def aces(good, incorrect, reference, item_id="t1", phenomenon="addition", language="de"):
    return AcesItem(item_id=item_id, language=language, phenomenon=phenomenon,
                    mqm_category="Accuracy", reference=reference, good=good,
                    incorrect=incorrect)


def brute_force_lcs_len(a, b):
    if not a or not b:
        return 0
    if a[0] == b[0]:
        return 1 + brute_force_lcs_len(a[1:], b[1:])
    return max(brute_force_lcs_len(a[1:], b), brute_force_lcs_len(a, b[1:]))


class TestTokenize:
    def test_punctuation_detached(self):
        assert tokenize("Der Ausschuss genehmigte den Vorschlag.") == \
            ["Der", "Ausschuss", "genehmigte", "den", "Vorschlag", "."]

    def test_leading_and_trailing_marks(self):
        assert tokenize('"Hallo!" sagte er.') == \
            ['"', "Hallo", "!", '"', "sagte", "er", "."]

    def test_interior_punctuation_kept(self):
        assert tokenize("don't over-react") == ["don't", "over-react"]

    def test_pure_punctuation_chunk(self):
        assert tokenize("wait ...") == ["wait", ".", ".", "."]

    def test_contentful(self):
        assert is_contentful("Wort")
        assert is_contentful("3rd")
        assert not is_contentful(",")
        assert not is_contentful("...")


class TestTokenDiff:
    def test_identical_texts(self):
        assert token_diff("ein guter Satz", "ein guter Satz") == []

    def test_single_replacement(self):
        edits = token_diff("der alte Mann", "der junge Mann")
        assert len(edits) == 1
        edit = edits[0]
        assert (edit.good_start, edit.good_end) == (1, 2)
        assert (edit.incorrect_start, edit.incorrect_end) == (1, 2)

    def test_two_separated_substitutions(self):
        good = "a b c d e f".split()
        incorrect = "a X c d Y f".split()
        edits = diff_tokens(good, incorrect)
        assert len(edits) == 2
        assert [(e.good_start, e.good_end) for e in edits] == [(1, 2), (4, 5)]
        assert brute_force_lcs_len(good, incorrect) == 4

    def test_edits_reconstruct_incorrect_side(self):
        rng = random.Random(71)
        vocab = ["a", "b", "c", "d", "e"]
        for _ in range(300):
            good = [rng.choice(vocab) for _ in range(rng.randrange(0, 9))]
            incorrect = [rng.choice(vocab) for _ in range(rng.randrange(0, 9))]
            edits = diff_tokens(good, incorrect)
            rebuilt = list(good)
            for edit in reversed(edits):
                rebuilt[edit.good_start:edit.good_end] = \
                    incorrect[edit.incorrect_start:edit.incorrect_end]
            assert rebuilt == incorrect
            # minimality: total matched tokens equals the true LCS length
            matched = len(good) - sum(e.good_end - e.good_start for e in edits)
            assert matched == brute_force_lcs_len(good, incorrect)


class TestProject:
    def test_toy_projection_kept(self):
        item = aces(
            good="Der Ausschuss genehmigte den Vorschlag.",
            incorrect="Der Ausschuss lehnte den Vorschlag ab.",
            reference="Der Ausschuss genehmigte den Vorschlag.",
        )
        projected = project(item)
        assert projected.status == "kept"
        assert projected.gold_text == "genehmigte"
        assert (projected.gold_start, projected.gold_end) == (2, 3)

    def test_punctuation_only_edit_non_contentful(self):
        item = aces("ein Satz , hier", "ein Satz ; hier", "ein Satz , hier")
        projected = project(item)
        assert projected.status == "discarded"
        assert projected.reason == "non_contentful"

    def test_identical_pair_non_contentful(self):
        item = aces("gleicher Text", "gleicher Text", "gleicher Text")
        assert project(item).reason == "non_contentful"

    def test_two_contentful_edits_multiple_diffs(self):
        item = aces("a b c d e f", "a X c d Y f", "a b c d e f")
        assert project(item).reason == "multiple_diffs"

    def test_repeated_reference_match_ambiguous(self):
        item = aces(good="das Wort und das Wort",
                    incorrect="das Zeichen und das Wort",
                    reference="das Wort und das Wort")
        # the edit replaces the first "Wort"; "Wort" occurs twice in reference
        assert project(item).reason == "ambiguous_reference_match"

    def test_missing_reference_match(self):
        item = aces("ein alter Baum", "ein junger Baum", "eine ganz andere Zeile")
        assert project(item).reason == "no_reference_match"

    def test_pure_insertion_discarded_flagged(self):
        item = aces("der Baum steht", "der alte Baum steht", "der Baum steht")
        projected = project(item)
        assert projected.reason == "no_reference_match"
        assert "insertion" in projected.note

    def test_counts_partition_and_determinism(self):
        items = [
            aces("a b c", "a X c", "a b c", item_id="k"),
            aces("a b c", "a b c", "a b c", item_id="d1"),
            aces("a b c d", "a X c Y", "a b c d", item_id="d2"),
        ]
        first = project_items(items)
        second = project_items(items)
        assert first == second
        kept = sum(1 for p in first if p.status == "kept")
        discarded = sum(1 for p in first if p.status == "discarded")
        assert kept + discarded == len(items)

    def test_round_trip_single_token_substitution(self):
        rng = random.Random(77)
        for trial in range(300):
            n = rng.randrange(3, 12)
            tokens = [f"w{trial}x{i}" for i in range(n)]
            reference = " ".join(tokens)
            pos = rng.randrange(n)
            corrupted = list(tokens)
            corrupted[pos] = "zzz"
            item = aces(good=reference, incorrect=" ".join(corrupted),
                        reference=reference)
            projected = project(item)
            assert projected.status == "kept"
            assert (projected.gold_start, projected.gold_end) == (pos, pos + 1)
            assert projected.gold_text == tokens[pos]


class TestScoreSpans:
    def kept_item(self, gold=(5, 6), n_tokens=20, item_id="t1", phenomenon="addition"):
        reference = " ".join(f"tok{i}" for i in range(n_tokens))
        tokens = reference.split()
        corrupted = list(tokens)
        corrupted[gold[0]:gold[1]] = ["zzz"]
        return project(aces(reference, " ".join(corrupted), reference,
                            item_id=item_id, phenomenon=phenomenon))

    def test_exact_prediction_counts_for_both(self):
        item = self.kept_item()
        scores = score_spans([item], {"t1": [(5, 6)]}, k=3)
        s = scores[0]
        assert (s.tp, s.fp, s.fn) == (1, 0, 0)
        assert (s.tp_tolerant, s.fp_tolerant, s.fn_tolerant) == (1, 0, 0)

    def test_tolerant_containment_with_slack(self):
        item = self.kept_item(gold=(5, 6))
        scores = score_spans([item], {"t1": [(2, 9)]}, k=3)
        s = scores[0]
        assert s.tp == 0 and s.tp_tolerant == 1

    def test_slack_exceeded_on_left(self):
        item = self.kept_item(gold=(5, 6))
        scores = score_spans([item], {"t1": [(1, 6)]}, k=3)
        s = scores[0]
        assert s.tp == 0 and s.tp_tolerant == 0

    def test_k_zero_equals_classic(self):
        rng = random.Random(80)
        for trial in range(200):
            n = 15
            gold_start = rng.randrange(0, n - 1)
            item = self.kept_item(gold=(gold_start, gold_start + 1), n_tokens=n,
                                  item_id=f"i{trial}")
            start = rng.randrange(0, n - 1)
            end = rng.randrange(start + 1, n + 1)
            scores = score_spans([item], {f"i{trial}": [(start, end)]}, k=0)
            assert scores[0].tp == scores[0].tp_tolerant

    def test_tolerant_at_least_classic(self):
        rng = random.Random(81)
        for trial in range(200):
            n = 15
            gold_start = rng.randrange(0, n - 1)
            item = self.kept_item(gold=(gold_start, gold_start + 1), n_tokens=n,
                                  item_id=f"i{trial}")
            preds = []
            for _ in range(rng.randrange(0, 3)):
                start = rng.randrange(0, n - 1)
                preds.append((start, rng.randrange(start + 1, n + 1)))
            k = rng.randrange(0, 4)
            scores = score_spans([item], {f"i{trial}": preds}, k=k)
            s = scores[0]
            assert s.f1_tolerant >= s.f1 - 1e-12
            assert s.recall_tolerant >= s.recall - 1e-12

    def test_out_of_range_prediction_rejected(self):
        item = self.kept_item(n_tokens=10)
        with pytest.raises(ValidationError, match="out of token range"):
            score_spans([item], {"t1": [(5, 11)]}, k=3)

    def test_duplicate_matching_predictions_single_tp(self):
        item = self.kept_item(gold=(5, 6))
        scores = score_spans([item], {"t1": [(5, 6), (5, 6)]}, k=0)
        s = scores[0]
        assert (s.tp, s.fp) == (1, 1)


class TestAggregate:
    def phen(self, name, n, f1):
        return PhenomenonScore(phenomenon=name, mqm_category="Accuracy", n_items=n,
                               tp=0, fp=0, fn=0, tp_tolerant=0, fp_tolerant=0,
                               fn_tolerant=0, precision=0.0, recall=f1, f1=f1,
                               precision_tolerant=0.0, recall_tolerant=f1,
                               f1_tolerant=f1)

    def test_weighted_means_worked_example(self):
        mapping = {"p1": {"category": "Accuracy"}, "p2": {"category": "Accuracy"}}
        scores = [self.phen("p1", 100, 0.2), self.phen("p2", 10, 0.8)]
        mean_n = aggregate(scores, mapping, MEAN_N)["Accuracy"]
        mean_cap = aggregate(scores, mapping, MEAN_CAP, cap=25)["Accuracy"]
        assert abs(mean_n.f1 - 28 / 110) < 1e-12
        assert abs(mean_cap.f1 - 13 / 35) < 1e-12

    def test_single_phenomenon_identity(self):
        mapping = {"p1": {"category": "Accuracy"}}
        scores = [self.phen("p1", 7, 0.42)]
        for scheme in (MEAN_N, MEAN_CAP):
            assert aggregate(scores, mapping, scheme)["Accuracy"].f1 == 0.42

    def test_constant_scores_invariant_to_weighting(self):
        mapping = {f"p{i}": {"category": "Accuracy"} for i in range(4)}
        scores = [self.phen(f"p{i}", 3 + 40 * i, 0.31) for i in range(4)]
        for scheme in (MEAN_N, MEAN_CAP):
            assert abs(aggregate(scores, mapping, scheme)["Accuracy"].f1 - 0.31) < 1e-12

    def test_unknown_phenomenon_lists_inventory(self):
        mapping = load_phenomenon_mapping()
        scores = [self.phen("made-up-phenomenon", 3, 0.5)]
        with pytest.raises(ValidationError, match="addition"):
            aggregate(scores, mapping, MEAN_N)

    def test_unknown_scheme_rejected(self):
        with pytest.raises(ParameterError):
            aggregate([], {}, "median")


class TestMapping:
    def test_shipped_mapping_shape(self):
        mapping = load_phenomenon_mapping()
        assert len(mapping) == 18
        accuracy = [p for p, e in mapping.items() if e["category"] == "Accuracy"]
        fluency = [p for p, e in mapping.items() if e["category"] == "Fluency/Style"]
        assert len(accuracy) == 14 and len(fluency) == 4
        assert len({e["mqm_type"] for p, e in mapping.items()
                    if e["category"] == "Accuracy"}) == 4

    def test_find_token_subsequence(self):
        hay = "a b a b c".split()
        assert find_token_subsequence(["a", "b"], hay) == [0, 2]
        assert find_token_subsequence(["c"], hay) == [4]
        assert find_token_subsequence(["z"], hay) == []
