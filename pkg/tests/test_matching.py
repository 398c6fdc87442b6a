import random
from collections import Counter

import pytest

from conftest import make_segment, make_set, make_span
from tqspan.matching import (
    MatchConfig,
    SegmentMatch,
    annotator_stats,
    greedy_match,
    match_segments,
    micro_aggregate,
    oc_score,
    sim_score,
    source_overlap_rate,
    threshold_sweep,
    trigram_counts,
)
from tqspan.records import ErrorSpan, ParameterError, SourceAnomaly


def rand_spans(rng, n, length=40, max_width=10):
    spans = []
    for _ in range(n):
        s = rng.randrange(0, length - 1)
        e = rng.randrange(s + 1, min(length, s + max_width) + 1)
        spans.append(make_span(s, e))
    return spans


def f1_of(match: SegmentMatch) -> float:
    denom = 2 * match.tp + match.fp + match.fn
    return 2 * match.tp / denom if denom else 0.0


def optimal_tp(gold, pred, cfg):
    """Exhaustive maximum one-to-one matching over threshold-passing pairs."""
    eligible = []
    for gi, g in enumerate(gold):
        for pj, p in enumerate(pred):
            if cfg.criterion == "oc":
                if not (g.offsets_valid and p.offsets_valid):
                    continue
                score = oc_score(g.interval, p.interval)
            else:
                score = sim_score(g.text, p.text)
            if score >= cfg.threshold:
                eligible.append((gi, pj))

    best = 0

    def extend(edges, used_g, used_p, count):
        nonlocal best
        best = max(best, count)
        for idx, (gi, pj) in enumerate(edges):
            if gi in used_g or pj in used_p:
                continue
            extend(edges[idx + 1:], used_g | {gi}, used_p | {pj}, count + 1)

    extend(eligible, frozenset(), frozenset(), 0)
    return best


class TestOcScore:
    def test_worked_example(self):
        assert oc_score((811, 871), (805, 845)) == 34 / 40 == 0.85

    def test_identity(self):
        assert oc_score((3, 9), (3, 9)) == 1.0

    def test_disjoint(self):
        assert oc_score((0, 4), (6, 9)) == 0.0

    def test_zero_length_rejected(self):
        with pytest.raises(ParameterError):
            oc_score((4, 4), (0, 2))

    def test_bounds(self):
        rng = random.Random(3)
        for _ in range(500):
            a, b = rand_spans(rng, 2)
            assert 0.0 <= oc_score(a.interval, b.interval) <= 1.0


class TestSimScore:
    def test_worked_example(self):
        a = "sich stärker verfestigen"
        b = "die Mitglieder der Gruppe A sich stärker verfestigen"
        assert sum(trigram_counts(a).values()) == 22
        assert sum(trigram_counts(b).values()) == 50
        assert abs(sim_score(a, b) - 44 / 72) < 1e-9

    def test_identity(self):
        assert sim_score("kortere tid", "kortere tid") == 1.0

    def test_no_shared_trigram(self):
        assert sim_score("aaaa", "bbbb") == 0.0

    def test_short_strings(self):
        assert sim_score("ab", "ab") == 1.0
        assert sim_score("ab", "cd") == 0.0
        assert sim_score("ab", "abc") == 0.0

    def test_symmetric_and_bounded(self):
        rng = random.Random(4)
        alphabet = "abcde "
        for _ in range(500):
            s1 = "".join(rng.choice(alphabet) for _ in range(rng.randrange(1, 15)))
            s2 = "".join(rng.choice(alphabet) for _ in range(rng.randrange(1, 15)))
            v = sim_score(s1, s2)
            assert v == sim_score(s2, s1)
            assert 0.0 <= v <= 1.0

    def test_empty_rejected(self):
        with pytest.raises(ParameterError):
            sim_score("", "abc")


class TestGreedyMatch:
    def test_identity_case(self):
        gold = [make_span(0, 10)]
        pred = [make_span(0, 10)]
        match = greedy_match(gold, pred, MatchConfig.oc())
        assert (match.tp, match.fp, match.fn) == (1, 0, 0)

    def test_tie_broken_by_gold_start(self):
        gold = [make_span(0, 10), make_span(20, 30)]
        pred = [make_span(0, 30)]
        cfg = MatchConfig.oc()
        match = greedy_match(gold, pred, cfg)
        assert (match.tp, match.fp, match.fn) == (1, 0, 1)
        assert match.pairs == ((0, 0, 1.0),)
        assert optimal_tp(gold, pred, cfg) == 1

    def test_offsetless_gold_counts_as_fn_under_oc(self):
        gold = [make_span(0, 10, valid=False, text="missing here")]
        pred = [make_span(0, 10)]
        match = greedy_match(gold, pred, MatchConfig.oc())
        assert (match.tp, match.fp, match.fn) == (0, 1, 1)

    def test_sim_dedup_keeps_first_occurrence(self):
        gold = [make_span(0, 6, text="abcdef"), make_span(10, 16, text="abcdef")]
        pred = [make_span(0, 6, text="abcdef")]
        match = greedy_match(gold, pred, MatchConfig.sim())
        assert (match.tp, match.fp, match.fn) == (1, 0, 0)
        assert match.pairs[0][0] == 0

    def test_self_agreement_is_perfect(self):
        rng = random.Random(9)
        for _ in range(200):
            spans = rand_spans(rng, rng.randrange(1, 6))
            match = greedy_match(spans, spans, MatchConfig.oc())
            assert (match.fp, match.fn) == (0, 0)
            assert match.tp == len(spans)

    def test_f1_symmetric_both_criteria(self):
        rng = random.Random(10)
        for _ in range(400):
            gold = rand_spans(rng, rng.randrange(0, 6))
            pred = rand_spans(rng, rng.randrange(0, 6))
            for cfg, rcfg in ((MatchConfig.oc(), MatchConfig.oc()),
                              (MatchConfig.sim(), MatchConfig.sim())):
                forward = greedy_match(gold, pred, cfg)
                backward = greedy_match(pred, gold, rcfg)
                assert abs(f1_of(forward) - f1_of(backward)) < 1e-12

    def test_threshold_monotone_tp(self):
        rng = random.Random(12)
        for _ in range(200):
            gold = rand_spans(rng, rng.randrange(0, 6))
            pred = rand_spans(rng, rng.randrange(0, 6))
            tps = [greedy_match(gold, pred, MatchConfig.oc(t)).tp
                   for t in (0.5, 0.7, 0.9, 1.0)]
            assert tps == sorted(tps, reverse=True)

    def test_greedy_bounded_by_optimal(self):
        rng = random.Random(13)
        for _ in range(400):
            gold = rand_spans(rng, rng.randrange(0, 6))
            pred = rand_spans(rng, rng.randrange(0, 6))
            cfg = MatchConfig.oc(rng.choice((0.5, 0.8, 1.0)))
            greedy = greedy_match(gold, pred, cfg).tp
            assert greedy <= optimal_tp(gold, pred, cfg)

    def test_source_spans_excluded_from_matching(self):
        seg = make_segment()
        gold = make_set([make_span(0, 5), make_span(0, 5, side="source")])
        pred = make_set([make_span(0, 5)])
        fragments = match_segments([gold], [pred], MatchConfig.oc())
        assert fragments[seg.segment_id].fn == 0


class TestMicroAggregate:
    def test_counts_sum_within_language(self):
        segments = {"s1": make_segment("s1"), "s2": make_segment("s2")}
        fragments = {"s1": SegmentMatch(1, 0, 0), "s2": SegmentMatch(0, 1, 1)}
        report = micro_aggregate(fragments, segments)
        assert (report.tp, report.fp, report.fn) == (1, 1, 1)
        assert report.precision == report.recall == report.f1 == 0.5

    def test_mean_and_range_over_languages(self):
        segments = {"s1": make_segment("s1", language="de"),
                    "s2": make_segment("s2", language="fr")}
        fragments = {"s1": SegmentMatch(1, 1, 2), "s2": SegmentMatch(3, 1, 3)}
        report = micro_aggregate(fragments, segments)
        de = report.per_language["de"].f1
        fr = report.per_language["fr"].f1
        assert abs(de - 0.4) < 1e-12 and abs(fr - 0.6) < 1e-12
        assert abs(report.mean_f1 - 0.5) < 1e-12
        assert report.f1_range == (0.4, 0.6)

    def test_empty_fragment_set(self, caplog):
        with caplog.at_level("WARNING"):
            report = micro_aggregate({}, {})
        assert report.f1 == 0.0 and report.tp == 0
        assert any("empty" in r.message for r in caplog.records)


class TestThresholdSweep:
    def test_identical_annotations_all_ones(self):
        sets = [make_set(rand_spans(random.Random(1), 3))]
        for criterion in ("oc", "sim"):
            sweep = threshold_sweep(sets, sets, criterion)
            assert all(v == 1.0 for v in sweep.f1_by_threshold.values())
            assert sweep.f1_range == (1.0, 1.0)

    def test_matches_brute_force_per_threshold(self):
        rng = random.Random(21)
        gold_sets, pred_sets = [], []
        for seg in ("s1", "s2", "s3"):
            gold_sets.append(make_set(rand_spans(rng, 3), segment_id=seg))
            pred_sets.append(make_set(rand_spans(rng, 3), segment_id=seg))
        sweep = threshold_sweep(gold_sets, pred_sets, "oc")
        for threshold, reported in sweep.f1_by_threshold.items():
            cfg = MatchConfig.oc(threshold)
            tp = fp = fn = 0
            for g, p in zip(gold_sets, pred_sets):
                m = greedy_match(list(g.spans), list(p.spans), cfg)
                tp, fp, fn = tp + m.tp, fp + m.fp, fn + m.fn
            denom = 2 * tp + fp + fn
            assert abs(reported - (2 * tp / denom if denom else 0.0)) < 1e-12

    def test_sweep_sets(self):
        sets = [make_set([make_span(0, 5)])]
        assert set(threshold_sweep(sets, sets, "oc").f1_by_threshold) == {0.7, 0.8, 0.9}
        assert set(threshold_sweep(sets, sets, "sim").f1_by_threshold) == {0.4, 0.5, 0.6}


class TestAnnotatorStats:
    def test_coverage_from_interval_union(self):
        seg = make_segment(target_text="x" * 100)
        sets = [make_set([make_span(0, 10), make_span(5, 20)])]
        stats = annotator_stats({"s1": seg}, sets)
        assert abs(stats.coverage - 0.20) < 1e-12
        assert stats.per_language["de"].spans_per_sample == 2.0

    def test_spans_per_sample_mean(self):
        segments = {"s1": make_segment("s1"), "s2": make_segment("s2")}
        sets = [make_set(rand_spans(random.Random(2), 2), segment_id="s1"),
                make_set(rand_spans(random.Random(3), 4), segment_id="s2")]
        stats = annotator_stats(segments, sets)
        assert stats.spans_per_sample == 3.0

    def test_no_spans_reports_zero_with_flag(self):
        stats = annotator_stats({"s1": make_segment()}, [])
        assert stats.spans_per_sample == 0.0
        assert stats.median_span_length == 0.0
        assert stats.coverage == 0.0
        assert not stats.median_defined

    def test_median_over_valid_spans(self):
        seg = make_segment(target_text="x" * 100)
        sets = [make_set([make_span(0, 4), make_span(10, 20), make_span(30, 36)])]
        stats = annotator_stats({"s1": seg}, sets)
        assert stats.median_span_length == 6.0


class TestSourceOverlap:
    def anomaly(self, start, end, segment_id="s1"):
        anchor = make_span(start, end)
        return SourceAnomaly(segment_id=segment_id,
                             source_span=make_span(0, 3, side="source"),
                             category="typo", severity="minor", target_anchor=anchor)

    def test_identical_span_counted(self, segments_by_id):
        sets = [make_set([make_span(4, 12)])]
        report = source_overlap_rate(segments_by_id, sets, [self.anomaly(4, 12)])
        assert report.per_language["de"] == 1.0
        assert (report.counted, report.total) == (1, 1)

    def test_disjoint_span_not_counted(self, segments_by_id):
        sets = [make_set([make_span(0, 4)])]
        report = source_overlap_rate(segments_by_id, sets, [self.anomaly(20, 28)])
        assert report.per_language["de"] == 0.0

    def test_span_counted_at_most_once(self, segments_by_id):
        sets = [make_set([make_span(0, 10)])]
        anomalies = [self.anomaly(0, 10), self.anomaly(1, 10)]
        report = source_overlap_rate(segments_by_id, sets, anomalies)
        assert (report.counted, report.total) == (1, 1)

    def test_unlinked_anchor_excluded(self, segments_by_id):
        anchorless = SourceAnomaly(segment_id="s1",
                                   source_span=make_span(0, 3, side="source"),
                                   category="typo", severity="minor",
                                   target_anchor=make_span(0, 10, valid=False))
        sets = [make_set([make_span(0, 10)])]
        report = source_overlap_rate(segments_by_id, sets, [anchorless])
        assert report.per_language["de"] == 0.0
