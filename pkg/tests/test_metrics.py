import dataclasses
import math
import statistics

import numpy as np
import pytest

from corvid.errors import InputError, SchemaError, TrueIdNotInRoster
from corvid.matcher import IdRanking
from corvid.metrics import (
    BaselineReport,
    ErrorStats,
    PeckPrf,
    PropCorrect,
    ReIdReport,
    aggregate,
    cooccurrence_rate,
    error_stats,
    evaluate_video,
    feeding_rate,
    peck_window_prf,
    peck_windows,
    prop_correct_frames,
    random_assignment_baseline,
    reid_report,
    report_to_csv,
    save_report,
    scatter_csvs,
    topk_accuracy,
)
from corvid.tracks import (
    BoundingBox,
    PeckEvent,
    Tracklet,
    VideoData,
    VideoManifest,
    match_frames,
    presence_timeline,
)


def ranking(true_pos, ids, clip_id="c0", empty=False):
    """A ranking whose entries put the true bird at index true_pos."""
    entries = tuple((bird, float(len(ids) - i)) for i, bird in enumerate(ids))
    return IdRanking(
        clip_id=clip_id,
        scope="all",
        entries=entries,
        n_observations=0 if empty else 10,
        n_singletons=0,
    )


def box(x, y, w=10.0, h=10.0):
    return BoundingBox(float(x), float(y), float(w), float(h))


def track(track_id, frame_boxes, bird_id=None):
    return Tracklet.from_boxes(track_id, dict(frame_boxes), bird_id)


class TestTopkAccuracy:
    def _batch(self, positions, roster_size=5):
        ids = [f"b{i}" for i in range(roster_size)]
        out = []
        for pos in positions:
            order = ids.copy()
            order[0], order[pos] = order[pos], order[0]
            out.append((ranking(pos, order), "b0"))
        return out

    def test_counting_oracle(self):
        positions = [0, 0, 1, 2, 4, 0, 3]
        batch = self._batch(positions)
        for k in (1, 2, 3, 5):
            expected = sum(1 for p in positions if p < k) / len(positions)
            assert topk_accuracy(batch, k) == pytest.approx(expected)

    def test_empty_rankings_count_as_misses(self):
        ids = ["b0", "b1"]
        empty = IdRanking("c", "all", (("b0", 0.0), ("b1", 0.0)), 0, 0)
        full = IdRanking("c", "all", (("b0", 2.0), ("b1", 1.0)), 5, 0)
        assert topk_accuracy([(empty, "b0"), (full, "b0")], 1) == pytest.approx(0.5)
        assert topk_accuracy([(empty, "b0")], 2) == 0.0

    def test_true_bird_missing_from_roster_rejected(self):
        r = IdRanking("c", "all", (("b0", 1.0),), 5, 0)
        with pytest.raises(TrueIdNotInRoster, match="b9"):
            topk_accuracy([(r, "b9")], 1)

    def test_no_rankings_rejected(self):
        with pytest.raises(InputError):
            topk_accuracy([], 1)

    def test_report_orders_top1_below_top3(self):
        batch = self._batch([0, 1, 2, 3])
        report = reid_report(batch, "all")
        assert report.top1 <= report.top3
        assert report.top1 == pytest.approx(0.25)
        assert report.top3 == pytest.approx(0.75)
        assert report.n_clips == 4

    def test_inverted_report_rejected(self):
        with pytest.raises(SchemaError):
            ReIdReport(scope="all", top1=0.9, top3=0.5, n_clips=3)


class TestPropCorrect:
    def test_identity_prediction_is_perfect(self):
        tracks = [
            track(1, {f: box(0, 0) for f in range(10)}, "b1"),
            track(2, {f: box(0, 100) for f in range(10)}, "b2"),
        ]
        corr = match_frames(tracks, tracks)
        prop = prop_correct_frames(corr)
        assert prop.strict == 1.0
        assert prop.matched_only == 1.0
        assert prop.total_truth_frames == 20

    def test_swapped_identities_score_zero(self):
        truth = [
            track(1, {f: box(0, 0) for f in range(10)}, "b1"),
            track(2, {f: box(0, 100) for f in range(10)}, "b2"),
        ]
        swapped = [
            dataclasses.replace(truth[0], bird_id="b2"),
            dataclasses.replace(truth[1], bird_id="b1"),
        ]
        corr = match_frames(swapped, truth)
        prop = prop_correct_frames(corr)
        assert prop.strict == 0.0
        assert prop.matched_truth_frames == 20

    def test_partial_coverage_strict_vs_matched(self):
        truth = [track(1, {f: box(0, 0) for f in range(10)}, "b1")]
        pred = [track(1, {f: box(0, 0) for f in range(5)}, "b1")]
        corr = match_frames(pred, truth)
        prop = prop_correct_frames(corr)
        assert prop.strict == pytest.approx(0.5)
        assert prop.matched_only == 1.0

    def test_constructed_fraction(self):
        truth = [
            track(i, {f: box(0, 100 * i) for f in range(4)}, f"b{i}") for i in range(3)
        ]
        pred = [
            dataclasses.replace(truth[0], bird_id="b0"),
            dataclasses.replace(truth[1], bird_id="b0"),  # wrong
            dataclasses.replace(truth[2], bird_id="b2"),
        ]
        prop = prop_correct_frames(match_frames(pred, truth))
        assert prop.strict == pytest.approx(8 / 12)

    def test_override_lists_used_for_identity(self):
        truth = [track(1, {f: box(0, 0) for f in range(6)}, "b1")]
        corr = match_frames(truth, truth)
        relabeled = [dataclasses.replace(truth[0], bird_id="b2")]
        assert prop_correct_frames(corr, predicted=relabeled).strict == 0.0
        assert prop_correct_frames(corr).strict == 1.0

    def test_override_length_mismatch_rejected(self):
        truth = [track(1, {0: box(0, 0)}, "b1")]
        corr = match_frames(truth, truth)
        with pytest.raises(SchemaError):
            prop_correct_frames(corr, predicted=[])

    def test_unidentified_truth_never_counts_correct(self):
        truth = [track(1, {f: box(0, 0) for f in range(5)}, None)]
        pred = [track(1, {f: box(0, 0) for f in range(5)}, None)]
        prop = prop_correct_frames(match_frames(pred, truth))
        assert prop.correct == 0
        assert prop.matched_truth_frames == 5


class TestPeckWindows:
    def test_same_second_shares_a_window(self):
        windows = peck_windows([PeckEvent("b1", 20), PeckEvent("b1", 4)], fps=25.0)
        assert windows == {"b1": {0}}

    def test_next_second_is_next_window(self):
        windows = peck_windows([PeckEvent("b1", 24), PeckEvent("b1", 25)], fps=25.0)
        assert windows == {"b1": {0, 1}}

    def test_window_width_scales_with_parameters(self):
        windows = peck_windows([PeckEvent("b1", 99), PeckEvent("b1", 100)], fps=25.0, window_s=2.0)
        assert windows == {"b1": {1, 2}}

    def test_nonpositive_parameters_rejected(self):
        with pytest.raises(SchemaError):
            peck_windows([], fps=0.0)
        with pytest.raises(SchemaError):
            peck_windows([], fps=25.0, window_s=0.0)


def oracle_prf(pred, truth, fps, window_s):
    """Confusion counting over explicit per-window boolean arrays."""
    span = fps * window_s
    birds = sorted({p.bird_id for p in pred} | {p.bird_id for p in truth})
    frames = [p.frame for p in pred] + [p.frame for p in truth]
    n_windows = int(max(frames) // span) + 1 if frames else 0
    per = {}
    for bird in birds:
        p_arr = np.zeros(n_windows, dtype=bool)
        t_arr = np.zeros(n_windows, dtype=bool)
        for p in pred:
            if p.bird_id == bird:
                p_arr[int(p.frame // span)] = True
        for p in truth:
            if p.bird_id == bird:
                t_arr[int(p.frame // span)] = True
        tp = int((p_arr & t_arr).sum())
        fp = int((p_arr & ~t_arr).sum())
        fn = int((~p_arr & t_arr).sum())
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        per[bird] = (precision, recall, f1)
    return per


class TestPeckWindowPrf:
    def test_perfect_agreement(self):
        pecks = [PeckEvent("b1", 10), PeckEvent("b1", 60), PeckEvent("b2", 30)]
        prf = peck_window_prf(pecks, pecks, fps=25.0)
        assert prf.precision == 1.0 and prf.recall == 1.0 and prf.f1 == 1.0
        assert prf.n_birds == 2

    def test_hand_computed_case(self):
        truth = [PeckEvent("b1", 10), PeckEvent("b1", 30)]  # windows {0, 1}
        pred = [PeckEvent("b1", 12), PeckEvent("b1", 60)]  # windows {0, 2}
        prf = peck_window_prf(pred, truth, fps=25.0)
        assert prf.per_bird["b1"] == pytest.approx((0.5, 0.5, 0.5))

    def test_bird_only_in_truth_gets_zero_precision_and_f1(self):
        prf = peck_window_prf([], [PeckEvent("b1", 5)], fps=25.0)
        assert prf.per_bird["b1"] == (0.0, 0.0, 0.0)

    def test_no_pecks_at_all_macro_undefined(self):
        prf = peck_window_prf([], [], fps=25.0)
        assert prf.precision is None and prf.recall is None and prf.f1 is None
        assert prf.n_birds == 0

    def test_macro_average_over_birds(self):
        truth = [PeckEvent("b1", 10), PeckEvent("b2", 10)]
        pred = [PeckEvent("b1", 12), PeckEvent("b2", 200)]
        prf = peck_window_prf(pred, truth, fps=25.0)
        assert prf.per_bird["b1"] == (1.0, 1.0, 1.0)
        assert prf.per_bird["b2"] == (0.0, 0.0, 0.0)
        assert prf.precision == pytest.approx(0.5)
        assert prf.f1 == pytest.approx(0.5)

    @pytest.mark.parametrize("seed", range(20))
    def test_random_configs_match_window_set_oracle(self, seed):
        rng = np.random.default_rng(400 + seed)
        birds = [f"b{i}" for i in range(int(rng.integers(1, 4)))]
        def sample():
            return [
                PeckEvent(birds[int(rng.integers(len(birds)))], int(rng.integers(0, 500)))
                for _ in range(int(rng.integers(0, 25)))
            ]
        pred, truth = sample(), sample()
        if not pred and not truth:
            pred = [PeckEvent("b0", 1)]
        fps = float(rng.choice([12.5, 25.0, 30.0]))
        window_s = float(rng.choice([0.5, 1.0, 2.0]))
        prf = peck_window_prf(pred, truth, fps, window_s)
        expected = oracle_prf(pred, truth, fps, window_s)
        assert set(prf.per_bird) == set(expected)
        for bird in expected:
            assert prf.per_bird[bird] == pytest.approx(expected[bird], abs=0.0)
        means = np.array(list(expected.values())).mean(axis=0)
        assert prf.precision == pytest.approx(float(means[0]))
        assert prf.recall == pytest.approx(float(means[1]))
        assert prf.f1 == pytest.approx(float(means[2]))


class TestRates:
    def test_feeding_rate_one_minute_video(self):
        assert feeding_rate(10, 1500, 25.0) == pytest.approx(10.0)

    def test_feeding_rate_scales_inversely_with_length(self):
        assert feeding_rate(10, 750, 25.0) == pytest.approx(2 * feeding_rate(10, 1500, 25.0))

    def test_feeding_rate_zero_pecks(self):
        assert feeding_rate(0, 1500, 25.0) == 0.0

    def test_feeding_rate_invalid_video_rejected(self):
        with pytest.raises(SchemaError):
            feeding_rate(1, 0, 25.0)

    def test_cooccurrence_from_intervals(self):
        tracks = [
            track(1, {f: box(0, 0) for f in range(0, 6)}, "b1"),
            track(2, {f: box(0, 100) for f in range(4, 10)}, "b2"),
        ]
        tl = presence_timeline(tracks, 10)
        assert cooccurrence_rate(tl, ("b1", "b2")) == pytest.approx(0.2)  # frames 4, 5

    def test_cooccurrence_matches_mask_oracle(self):
        rng = np.random.default_rng(55)
        tracks = []
        for i, bird in enumerate(["b1", "b2"]):
            frames = sorted(rng.choice(50, size=20, replace=False))
            tracks.append(track(i, {int(f): box(0, 0) for f in frames}, bird))
        tl = presence_timeline(tracks, 50)
        expected = float((tl.mask("b1") & tl.mask("b2")).sum()) / 50
        assert cooccurrence_rate(tl, ("b1", "b2")) == pytest.approx(expected)

    def test_cooccurrence_absent_bird_is_zero(self):
        tl = presence_timeline([track(1, {0: box(0, 0)}, "b1")], 10)
        assert cooccurrence_rate(tl, ("b1", "zz")) == 0.0


class TestErrorStats:
    def test_matches_statistics_module_oracle(self):
        rng = np.random.default_rng(66)
        pred = rng.uniform(0, 10, size=30).tolist()
        truth = rng.uniform(0, 10, size=30).tolist()
        stats = error_stats(pred, truth)
        errors = [abs(p - t) for p, t in zip(pred, truth)]
        assert stats.mean_abs == pytest.approx(statistics.fmean(errors), rel=1e-12)
        assert stats.median_abs == pytest.approx(statistics.median(errors), rel=1e-12)
        assert stats.sd_abs == pytest.approx(statistics.pstdev(errors), rel=1e-12)
        assert stats.pearson_r == pytest.approx(statistics.correlation(pred, truth), rel=1e-12)
        assert stats.degenerate is None
        assert stats.n == 30

    def test_perfect_agreement(self):
        stats = error_stats([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
        assert stats.mean_abs == 0.0
        assert stats.pearson_r == pytest.approx(1.0)

    def test_anticorrelation(self):
        stats = error_stats([3.0, 2.0, 1.0], [1.0, 2.0, 3.0])
        assert stats.pearson_r == pytest.approx(-1.0)

    def test_single_point_r_undefined(self):
        stats = error_stats([2.0], [5.0])
        assert stats.pearson_r is None
        assert stats.degenerate == "fewer than two points"
        assert stats.mean_abs == pytest.approx(3.0)

    def test_constant_side_r_undefined(self):
        stats = error_stats([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])
        assert stats.pearson_r is None
        assert stats.degenerate == "zero variance"

    def test_shape_errors_rejected(self):
        with pytest.raises(InputError):
            error_stats([], [])
        with pytest.raises(InputError):
            error_stats([1.0, 2.0], [1.0])

    def test_to_dict_keys(self):
        doc = error_stats([1.0, 2.0], [2.0, 4.0]).to_dict()
        assert set(doc) == {
            "n",
            "mean_abs_error",
            "median_abs_error",
            "sd_abs_error",
            "pearson_r",
            "degenerate",
        }


def two_bird_video(video_id="v0", length=250, fps=25.0):
    tracks = [
        track(1, {f: box(0, 0) for f in range(0, 100)}, "b1"),
        track(2, {f: box(0, 200) for f in range(50, 200)}, "b2"),
    ]
    pecks = [PeckEvent("b1", 10), PeckEvent("b1", 80), PeckEvent("b2", 60)]
    manifest = VideoManifest(video_id, fps, length)
    return VideoData(tracks, pecks), manifest


class TestEvaluateVideo:
    def test_self_evaluation_is_optimal(self):
        data, manifest = two_bird_video()
        ev = evaluate_video(data, data, manifest)
        assert ev.prop.strict == 1.0
        assert ev.peck.f1 == 1.0
        for pred, tru in ev.feeding.values():
            assert pred == pytest.approx(tru)
        for pred, tru in ev.cooccurrence.values():
            assert pred == pytest.approx(tru)

    def test_feeding_rates_are_pecks_per_minute(self):
        data, manifest = two_bird_video(length=1500)
        ev = evaluate_video(data, data, manifest)
        assert ev.feeding["b1"][1] == pytest.approx(2.0)  # 2 pecks in one minute
        assert ev.feeding["b2"][1] == pytest.approx(1.0)

    def test_vacuous_prediction_scores_zero(self):
        data, manifest = two_bird_video()
        empty = VideoData([], [])
        ev = evaluate_video(empty, data, manifest)
        assert ev.prop.strict == 0.0
        assert ev.prop.matched_truth_frames == 0
        for (pred, tru), bird in zip(ev.feeding.values(), sorted(ev.feeding)):
            assert pred == 0.0
            assert tru > 0.0
        assert ev.cooccurrence[("b1", "b2")][0] == 0.0

    def test_individuals_come_from_truth(self):
        data, manifest = two_bird_video()
        noisy = VideoData(
            data.tracks, data.pecks + [PeckEvent("intruder", 5)]
        )
        ev = evaluate_video(noisy, data, manifest)
        assert set(ev.feeding) == {"b1", "b2"}
        assert ("b1", "b2") in ev.cooccurrence

    def test_precomputed_correspondence_reused(self):
        data, manifest = two_bird_video()
        corr = match_frames(data.tracks, data.tracks)
        relabeled = VideoData(
            [dataclasses.replace(t, bird_id="b1") for t in data.tracks], data.pecks
        )
        ev = evaluate_video(relabeled, data, manifest, correspondence=corr)
        assert 0.0 < ev.prop.strict < 1.0


class TestAggregate:
    def _evaluations(self):
        data_a, man_a = two_bird_video("v0")
        tracks_b = [
            track(1, {f: box(0, 0) for f in range(0, 40)}, "b1"),
            track(2, {f: box(0, 200) for f in range(10, 30)}, "b2"),
        ]
        data_b = VideoData(tracks_b, [PeckEvent("b1", 5), PeckEvent("b2", 20)])
        man_b = VideoManifest("v1", 25.0, 300)
        pred_b = VideoData(
            [dataclasses.replace(t, bird_id="b1") for t in tracks_b], data_b.pecks
        )
        return [
            evaluate_video(data_a, data_a, man_a),
            evaluate_video(pred_b, data_b, man_b),
        ]

    def test_frame_counts_pool_not_average(self):
        evals = self._evaluations()
        report = aggregate(evals)
        correct = sum(e.prop.correct for e in evals)
        total = sum(e.prop.total_truth_frames for e in evals)
        assert report.prop_correct_frames == pytest.approx(correct / total)
        naive_mean = statistics.fmean(e.prop.strict for e in evals)
        assert report.prop_correct_frames != pytest.approx(naive_mean)

    def test_error_stats_over_concatenated_points(self):
        evals = self._evaluations()
        report = aggregate(evals)
        pred = [p for e in evals for _, (p, _) in sorted(e.feeding.items())]
        tru = [t for e in evals for _, (_, t) in sorted(e.feeding.items())]
        expected = error_stats(pred, tru)
        assert report.feeding.n == len(pred) == 4
        assert report.feeding.mean_abs == pytest.approx(expected.mean_abs)
        assert report.feeding.pearson_r == pytest.approx(expected.pearson_r)

    def test_macro_prf_over_video_bird_entries(self):
        evals = self._evaluations()
        report = aggregate(evals)
        rows = [v for e in evals for v in e.peck.per_bird.values()]
        assert report.n_peck_birds == len(rows) == 4
        assert report.peck_f1 == pytest.approx(float(np.array(rows).mean(axis=0)[2]))

    def test_points_carry_video_ids(self):
        report = aggregate(self._evaluations())
        assert [p[0] for p in report.feeding_points] == ["v0", "v0", "v1", "v1"]
        assert all(len(p) == 5 for p in report.cooccurrence_points)

    def test_empty_rejected(self):
        with pytest.raises(InputError):
            aggregate([])


class TestReportSerialization:
    @staticmethod
    def _report():
        data, manifest = two_bird_video()
        return aggregate([evaluate_video(data, data, manifest)])

    def test_csv_flattens_error_stats(self):
        report = self._report()
        text = report_to_csv(report)
        lines = text.splitlines()
        assert lines[0] == "metric,value"
        keys = {line.split(",")[0] for line in lines[1:]}
        assert "prop_correct_frames" in keys
        assert "feeding_rate_mean_abs_error" in keys
        assert "cooccurrence_pearson_r" in keys
        assert "feeding_rate_degenerate" not in keys

    def test_scatter_csv_layout(self):
        report = self._report()
        sheets = scatter_csvs(report)
        feeding = sheets["feeding_scatter.csv"].splitlines()
        assert feeding[0] == "video_id,bird_id,predicted_pecks_per_min,truth_pecks_per_min"
        assert len(feeding) == 1 + report.feeding.n
        cooc = sheets["cooccurrence_scatter.csv"].splitlines()
        assert cooc[0] == "video_id,bird_a,bird_b,predicted_rate,truth_rate"

    def test_save_report_writes_files(self, tmp_path):
        report = self._report()
        written = save_report(report, tmp_path / "out", scatter=True)
        names = {p.name for p in written}
        assert names == {
            "report.json",
            "report.csv",
            "feeding_scatter.csv",
            "cooccurrence_scatter.csv",
        }
        for p in written:
            assert p.exists() and p.stat().st_size > 0


class TestRandomBaseline:
    def test_deterministic_for_fixed_seed(self):
        video = two_bird_video()
        a = random_assignment_baseline([video], n_trials=10, seed=5)
        b = random_assignment_baseline([video], n_trials=10, seed=5)
        assert a == b

    def test_seed_changes_result(self):
        video = two_bird_video()
        a = random_assignment_baseline([video], n_trials=10, seed=5)
        b = random_assignment_baseline([video], n_trials=10, seed=6)
        assert a.prop_correct_mean != b.prop_correct_mean

    def test_single_bird_pool_is_always_right(self):
        tracks = [track(1, {f: box(0, 0) for f in range(50)}, "b1")]
        data = VideoData(tracks, [PeckEvent("b1", 10)])
        manifest = VideoManifest("v", 25.0, 100)
        report = random_assignment_baseline([(data, manifest)], n_trials=5, seed=0)
        assert report.prop_correct_mean == 1.0

    def test_two_bird_pool_hovers_near_half(self):
        video = two_bird_video()
        report = random_assignment_baseline([video], n_trials=200, seed=1)
        assert 0.35 < report.prop_correct_mean < 0.65

    def test_trial_count_validated(self):
        with pytest.raises(InputError):
            random_assignment_baseline([two_bird_video()], n_trials=0)

    def test_report_to_dict_round_trips_fields(self):
        report = random_assignment_baseline([two_bird_video()], n_trials=3, seed=2)
        doc = report.to_dict()
        assert doc["n_trials"] == 3
        assert doc["prop_correct_mean"] == report.prop_correct_mean
        assert "feeding_r_of_mean" in doc
