"""Benchmark metrics for identity rankings and behavioral read-outs.

Covers Top-k accuracy over clip rankings, the per-frame identity
correctness of matched tracks, windowed peck precision/recall/F1, feeding
rates, pairwise co-occurrence rates, and absolute-error/correlation
statistics between predicted and ground-truth values.  Aggregation pools
individuals and pairs across videos into single vectors before computing
error statistics, and a seeded random-assignment baseline puts the
numbers in context.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, replace
from itertools import combinations
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import InputError, SchemaError, TrueIdNotInRoster
from .matcher import IdRanking
from .tracks import (
    Correspondence,
    PeckEvent,
    Tracklet,
    VideoData,
    VideoManifest,
    match_frames,
    peck_covering_tracks,
    presence_timeline,
)


def topk_accuracy(rankings: Sequence[tuple[IdRanking, str]], k: int) -> float:
    """Fraction of clips whose top-k contains the true bird.

    Clips with zero observations rank the whole roster at score zero and
    always count as misses.
    """
    if not rankings:
        raise InputError("cannot compute accuracy over zero rankings")
    hits = 0
    for ranking, true_id in rankings:
        if true_id not in {bird_id for bird_id, _ in ranking.entries}:
            raise TrueIdNotInRoster(
                f"clip {ranking.clip_id}: true bird {true_id!r} not in scope {ranking.scope!r}"
            )
        if not ranking.empty and true_id in ranking.top_k(k):
            hits += 1
    return hits / len(rankings)


@dataclass(frozen=True)
class ReIdReport:
    """Top-1/Top-3 accuracy of one clip set under one gallery scope."""

    scope: str
    top1: float
    top3: float
    n_clips: int

    def __post_init__(self) -> None:
        if not (0.0 <= self.top1 <= self.top3 <= 1.0):
            raise SchemaError(f"need 0 <= top1 <= top3 <= 1, got {self.top1}, {self.top3}")


def reid_report(rankings: Sequence[tuple[IdRanking, str]], scope: str) -> ReIdReport:
    return ReIdReport(
        scope=scope,
        top1=topk_accuracy(rankings, 1),
        top3=topk_accuracy(rankings, 3),
        n_clips=len(rankings),
    )


@dataclass(frozen=True)
class PropCorrect:
    """Identity correctness of matched track frames."""

    correct: int
    matched_truth_frames: int
    total_truth_frames: int

    @property
    def strict(self) -> float:
        """Correct over all ground-truth track frames (unmatched count as wrong)."""
        return self.correct / self.total_truth_frames if self.total_truth_frames else 0.0

    @property
    def matched_only(self) -> float:
        """Correct over matched frames only, the lenient secondary reading."""
        return self.correct / self.matched_truth_frames if self.matched_truth_frames else 0.0


def prop_correct_frames(
    corr: Correspondence,
    predicted: Sequence[Tracklet] | None = None,
    truth: Sequence[Tracklet] | None = None,
) -> PropCorrect:
    """Count matched truth frames whose prediction carries the right bird.

    Track lists may be overridden (e.g. after re-labeling identities) as
    long as they parallel the lists the correspondence was built from.
    """
    predicted = corr.predicted if predicted is None else predicted
    truth = corr.truth if truth is None else truth
    if len(predicted) != len(corr.predicted) or len(truth) != len(corr.truth):
        raise SchemaError("override track lists must parallel the matched ones")
    total = sum(len(t.frames) for t in truth)
    correct = 0
    matched = 0
    for pairs in corr.matches.values():
        for pi, ti, _ in pairs:
            matched += 1
            truth_bird = truth[ti].bird_id
            if truth_bird is not None and predicted[pi].bird_id == truth_bird:
                correct += 1
    return PropCorrect(correct=correct, matched_truth_frames=matched, total_truth_frames=total)


def peck_windows(
    pecks: Sequence[PeckEvent], fps: float, window_s: float = 1.0
) -> dict[str, set[int]]:
    """Binarize pecks into per-bird sets of time-window indexes."""
    if fps <= 0 or window_s <= 0:
        raise SchemaError("fps and window size must be positive")
    span = fps * window_s
    out: dict[str, set[int]] = {}
    for peck in pecks:
        out.setdefault(peck.bird_id, set()).add(math.floor(peck.frame / span))
    return out


@dataclass(frozen=True)
class PeckPrf:
    """Windowed peck detection quality, per bird and macro-averaged."""

    per_bird: dict[str, tuple[float, float, float]]
    precision: float | None
    recall: float | None
    f1: float | None

    @property
    def n_birds(self) -> int:
        return len(self.per_bird)


def peck_window_prf(
    predicted: Sequence[PeckEvent],
    truth: Sequence[PeckEvent],
    fps: float,
    window_s: float = 1.0,
) -> PeckPrf:
    """Per-bird precision/recall/F1 over binarized time windows.

    A true positive is a window where both sides record a peck for the
    bird.  Birds with no peck on either side are excluded; with no
    eligible birds the macro means are undefined (None).
    """
    pred_w = peck_windows(predicted, fps, window_s)
    truth_w = peck_windows(truth, fps, window_s)
    per_bird: dict[str, tuple[float, float, float]] = {}
    for bird in sorted(set(pred_w) | set(truth_w)):
        p_set = pred_w.get(bird, set())
        t_set = truth_w.get(bird, set())
        tp = len(p_set & t_set)
        fp = len(p_set - t_set)
        fn = len(t_set - p_set)
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        per_bird[bird] = (precision, recall, f1)
    if not per_bird:
        return PeckPrf(per_bird={}, precision=None, recall=None, f1=None)
    values = np.array(list(per_bird.values()))
    means = values.mean(axis=0)
    return PeckPrf(
        per_bird=per_bird,
        precision=float(means[0]),
        recall=float(means[1]),
        f1=float(means[2]),
    )


def feeding_rate(n_pecks: int, length_frames: int, fps: float) -> float:
    """Pecks per minute over the whole video."""
    if length_frames <= 0 or fps <= 0:
        raise SchemaError("video length and fps must be positive")
    minutes = length_frames / fps / 60.0
    return n_pecks / minutes


def cooccurrence_rate(timeline, pair: tuple[str, str]) -> float:
    """Fraction of the video during which both birds are detected."""
    a, b = pair
    both = timeline.mask(a) & timeline.mask(b)
    return float(both.sum()) / timeline.video_length


@dataclass(frozen=True)
class ErrorStats:
    """Absolute-error statistics plus Pearson correlation on raw values."""

    n: int
    mean_abs: float
    median_abs: float
    sd_abs: float  # population SD of the absolute errors
    pearson_r: float | None
    degenerate: str | None  # why r is undefined, when it is

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "mean_abs_error": self.mean_abs,
            "median_abs_error": self.median_abs,
            "sd_abs_error": self.sd_abs,
            "pearson_r": self.pearson_r,
            "degenerate": self.degenerate,
        }


def error_stats(predicted: Sequence[float], truth: Sequence[float]) -> ErrorStats:
    """Mean/median/population-SD of |predicted - truth| plus Pearson's r.

    r is computed on the raw paired values.  With fewer than two pairs or
    zero variance on either side it is undefined and reported as None with
    the reason, never coerced to 0.
    """
    p = np.asarray(predicted, dtype=np.float64)
    t = np.asarray(truth, dtype=np.float64)
    if p.shape != t.shape or p.ndim != 1 or p.size == 0:
        raise InputError("error_stats needs two equal-length non-empty vectors")
    errors = np.abs(p - t)
    mean_abs = float(errors.mean())
    median_abs = float(np.median(errors))
    sd_abs = float(np.sqrt(np.mean((errors - errors.mean()) ** 2)))
    if p.size < 2:
        return ErrorStats(p.size, mean_abs, median_abs, sd_abs, None, "fewer than two points")
    dp = p - p.mean()
    dt = t - t.mean()
    denom = math.sqrt(float((dp * dp).sum()) * float((dt * dt).sum()))
    if denom == 0.0:
        return ErrorStats(p.size, mean_abs, median_abs, sd_abs, None, "zero variance")
    r = float((dp * dt).sum() / denom)
    return ErrorStats(p.size, mean_abs, median_abs, sd_abs, r, None)


@dataclass
class VideoEvaluation:
    """All per-video metric ingredients, kept for cross-video pooling."""

    video_id: str
    prop: PropCorrect
    peck: PeckPrf
    feeding: dict[str, tuple[float, float]]  # bird -> (predicted, truth) pecks/min
    cooccurrence: dict[tuple[str, str], tuple[float, float]]  # pair -> (predicted, truth)


def evaluate_video(
    predicted: VideoData,
    truth: VideoData,
    manifest: VideoManifest,
    iou_min: float = 0.5,
    window_s: float = 1.0,
    correspondence: Correspondence | None = None,
) -> VideoEvaluation:
    """Evaluate one video's predictions against its ground truth.

    Individuals are the birds appearing in the ground truth; predicted
    rates for birds the prediction never mentions are zero.  A precomputed
    correspondence may be supplied when only identities changed between
    runs (geometry identical, same track order).
    """
    corr = correspondence
    if corr is None:
        corr = match_frames(predicted.tracks, truth.tracks, iou_min)
    prop = prop_correct_frames(corr, predicted=predicted.tracks, truth=truth.tracks)
    peck = peck_window_prf(predicted.pecks, truth.pecks, manifest.fps, window_s)

    birds = sorted(truth.birds())
    length = manifest.length_frames
    pred_counts: dict[str, int] = {}
    for p in predicted.pecks:
        pred_counts[p.bird_id] = pred_counts.get(p.bird_id, 0) + 1
    truth_counts: dict[str, int] = {}
    for p in truth.pecks:
        truth_counts[p.bird_id] = truth_counts.get(p.bird_id, 0) + 1
    feeding = {
        bird: (
            feeding_rate(pred_counts.get(bird, 0), length, manifest.fps),
            feeding_rate(truth_counts.get(bird, 0), length, manifest.fps),
        )
        for bird in birds
    }

    cooc: dict[tuple[str, str], tuple[float, float]] = {}
    if len(birds) >= 2:
        pred_tl = presence_timeline(predicted.tracks, length)
        truth_tl = presence_timeline(truth.tracks, length)
        for pair in combinations(birds, 2):
            cooc[pair] = (
                cooccurrence_rate(pred_tl, pair),
                cooccurrence_rate(truth_tl, pair),
            )
    return VideoEvaluation(
        video_id=manifest.video_id, prop=prop, peck=peck, feeding=feeding, cooccurrence=cooc
    )


@dataclass
class BenchmarkReport:
    """Cross-video aggregate: identity, pecks, rates, and their errors."""

    n_videos: int
    prop_correct_frames: float
    prop_correct_frames_matched_only: float
    peck_precision: float | None
    peck_recall: float | None
    peck_f1: float | None
    n_peck_birds: int
    feeding: ErrorStats | None
    cooccurrence: ErrorStats | None
    feeding_points: list[tuple[str, str, float, float]] = field(default_factory=list)
    cooccurrence_points: list[tuple[str, str, str, float, float]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "n_videos": self.n_videos,
            "prop_correct_frames": self.prop_correct_frames,
            "prop_correct_frames_matched_only": self.prop_correct_frames_matched_only,
            "peck_precision": self.peck_precision,
            "peck_recall": self.peck_recall,
            "peck_f1": self.peck_f1,
            "n_peck_birds": self.n_peck_birds,
            "feeding_rate": self.feeding.to_dict() if self.feeding else None,
            "cooccurrence": self.cooccurrence.to_dict() if self.cooccurrence else None,
        }


def aggregate(evaluations: Sequence[VideoEvaluation]) -> BenchmarkReport:
    """Pool per-video results into one report.

    Frame counts sum across videos; peck statistics macro-average over all
    (video, bird) entries; feeding and co-occurrence values concatenate
    into single predicted/truth vectors before the error statistics, so a
    bird appearing in several videos contributes one point per video.
    """
    if not evaluations:
        raise InputError("cannot aggregate zero video evaluations")
    correct = sum(e.prop.correct for e in evaluations)
    matched = sum(e.prop.matched_truth_frames for e in evaluations)
    total = sum(e.prop.total_truth_frames for e in evaluations)

    prf_rows = []
    n_peck_birds = 0
    for e in evaluations:
        for values in e.peck.per_bird.values():
            prf_rows.append(values)
            n_peck_birds += 1
    if prf_rows:
        means = np.array(prf_rows).mean(axis=0)
        precision, recall, f1 = (float(v) for v in means)
    else:
        precision = recall = f1 = None

    feeding_points = [
        (e.video_id, bird, pred, tru)
        for e in evaluations
        for bird, (pred, tru) in sorted(e.feeding.items())
    ]
    cooc_points = [
        (e.video_id, a, b, pred, tru)
        for e in evaluations
        for (a, b), (pred, tru) in sorted(e.cooccurrence.items())
    ]
    feeding = (
        error_stats([p[2] for p in feeding_points], [p[3] for p in feeding_points])
        if feeding_points
        else None
    )
    cooccurrence = (
        error_stats([p[3] for p in cooc_points], [p[4] for p in cooc_points])
        if cooc_points
        else None
    )
    return BenchmarkReport(
        n_videos=len(evaluations),
        prop_correct_frames=(correct / total if total else 0.0),
        prop_correct_frames_matched_only=(correct / matched if matched else 0.0),
        peck_precision=precision,
        peck_recall=recall,
        peck_f1=f1,
        n_peck_birds=n_peck_birds,
        feeding=feeding,
        cooccurrence=cooccurrence,
        feeding_points=feeding_points,
        cooccurrence_points=cooc_points,
    )


def report_to_csv(report: BenchmarkReport) -> str:
    """Flat metric,value table mirroring the JSON report."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("metric", "value"))
    doc = report.to_dict()
    for prefix in ("feeding_rate", "cooccurrence"):
        sub = doc.pop(prefix)
        if sub:
            for key, value in sub.items():
                if key != "degenerate":
                    doc[f"{prefix}_{key}"] = value
    for key, value in doc.items():
        writer.writerow((key, "" if value is None else value))
    return buf.getvalue()


def scatter_csvs(report: BenchmarkReport) -> dict[str, str]:
    """Per-individual and per-pair rate tables for external plotting."""
    feeding = io.StringIO()
    writer = csv.writer(feeding, lineterminator="\n")
    writer.writerow(("video_id", "bird_id", "predicted_pecks_per_min", "truth_pecks_per_min"))
    for video_id, bird, pred, tru in report.feeding_points:
        writer.writerow((video_id, bird, pred, tru))
    cooc = io.StringIO()
    writer = csv.writer(cooc, lineterminator="\n")
    writer.writerow(("video_id", "bird_a", "bird_b", "predicted_rate", "truth_rate"))
    for video_id, a, b, pred, tru in report.cooccurrence_points:
        writer.writerow((video_id, a, b, pred, tru))
    return {"feeding_scatter.csv": feeding.getvalue(), "cooccurrence_scatter.csv": cooc.getvalue()}


def save_report(report: BenchmarkReport, out_dir: str | Path, scatter: bool = False) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    json_path = out_dir / "report.json"
    json_path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    written.append(json_path)
    csv_path = out_dir / "report.csv"
    csv_path.write_text(report_to_csv(report))
    written.append(csv_path)
    if scatter:
        for name, content in scatter_csvs(report).items():
            path = out_dir / name
            path.write_text(content)
            written.append(path)
    return written


# --- random-assignment baseline --------------------------------------------

@dataclass
class BaselineReport:
    """Random-assignment context: per-trial means and trial-averaged r."""

    n_trials: int
    prop_correct_mean: float
    peck_f1_mean: float | None
    feeding_r_mean: float | None  # mean of per-trial r over trials where defined
    feeding_r_defined: int
    feeding_r_of_mean: float | None  # r of per-point trial-mean predictions
    cooccurrence_r_mean: float | None
    cooccurrence_r_defined: int
    cooccurrence_r_of_mean: float | None
    feeding_mean_abs_mean: float | None
    cooccurrence_mean_abs_mean: float | None

    def to_dict(self) -> dict:
        return {
            "n_trials": self.n_trials,
            "prop_correct_mean": self.prop_correct_mean,
            "peck_f1_mean": self.peck_f1_mean,
            "feeding_r_mean": self.feeding_r_mean,
            "feeding_r_defined": self.feeding_r_defined,
            "feeding_r_of_mean": self.feeding_r_of_mean,
            "cooccurrence_r_mean": self.cooccurrence_r_mean,
            "cooccurrence_r_defined": self.cooccurrence_r_defined,
            "cooccurrence_r_of_mean": self.cooccurrence_r_of_mean,
            "feeding_mean_abs_mean": self.feeding_mean_abs_mean,
            "cooccurrence_mean_abs_mean": self.cooccurrence_mean_abs_mean,
        }


def _mean_or_none(values: list[float]) -> float | None:
    return float(np.mean(values)) if values else None


def random_assignment_baseline(
    videos: Sequence[tuple[VideoData, VideoManifest]],
    n_trials: int = 100,
    seed: int = 0,
    iou_min: float = 0.5,
    window_s: float = 1.0,
) -> BaselineReport:
    """Chance floor: drop all identity evidence, keep everything else.

    Ground-truth tracks keep their geometry but every track draws a
    uniformly random bird from its video's bird pool; pecks follow their
    covering track's new identity.  Each trial evaluates that assignment
    against the unchanged truth, and trial statistics are averaged.
    """
    if n_trials < 1:
        raise InputError("need at least one baseline trial")
    rng = np.random.default_rng(seed)
    prepared = []
    for data, manifest in videos:
        corr = match_frames(data.tracks, data.tracks, iou_min)
        covers = peck_covering_tracks(data.pecks, data.tracks)
        pool = sorted(data.birds())
        if not pool:
            raise InputError(f"video {manifest.video_id} has no birds to assign")
        prepared.append((data, manifest, corr, covers, pool))

    prop_values: list[float] = []
    f1_values: list[float] = []
    feeding_r: list[float] = []
    cooc_r: list[float] = []
    feeding_abs: list[float] = []
    cooc_abs: list[float] = []
    feeding_pred_sums: dict[tuple[str, str], float] = {}
    feeding_truth: dict[tuple[str, str], float] = {}
    cooc_pred_sums: dict[tuple[str, str, str], float] = {}
    cooc_truth: dict[tuple[str, str, str], float] = {}

    for _ in range(n_trials):
        evaluations = []
        for data, manifest, corr, covers, pool in prepared:
            assigned = {
                track.track_id: pool[int(rng.integers(len(pool)))] for track in data.tracks
            }
            pred_tracks = [replace(t, bird_id=assigned[t.track_id]) for t in data.tracks]
            pred_pecks = [
                PeckEvent(bird_id=assigned[cover], frame=peck.frame)
                for peck, cover in covers
                if cover is not None
            ]
            evaluations.append(
                evaluate_video(
                    VideoData(pred_tracks, pred_pecks),
                    data,
                    manifest,
                    iou_min=iou_min,
                    window_s=window_s,
                    correspondence=corr,
                )
            )
        report = aggregate(evaluations)
        prop_values.append(report.prop_correct_frames)
        if report.peck_f1 is not None:
            f1_values.append(report.peck_f1)
        if report.feeding is not None:
            feeding_abs.append(report.feeding.mean_abs)
            if report.feeding.pearson_r is not None:
                feeding_r.append(report.feeding.pearson_r)
        if report.cooccurrence is not None:
            cooc_abs.append(report.cooccurrence.mean_abs)
            if report.cooccurrence.pearson_r is not None:
                cooc_r.append(report.cooccurrence.pearson_r)
        for video_id, bird, pred, tru in report.feeding_points:
            key = (video_id, bird)
            feeding_pred_sums[key] = feeding_pred_sums.get(key, 0.0) + pred
            feeding_truth[key] = tru
        for video_id, a, b, pred, tru in report.cooccurrence_points:
            key = (video_id, a, b)
            cooc_pred_sums[key] = cooc_pred_sums.get(key, 0.0) + pred
            cooc_truth[key] = tru

    def r_of_mean(
        pred_sums: Mapping[tuple, float], truth: Mapping[tuple, float]
    ) -> float | None:
        if len(pred_sums) < 2:
            return None
        keys = sorted(pred_sums)
        stats = error_stats(
            [pred_sums[k] / n_trials for k in keys], [truth[k] for k in keys]
        )
        return stats.pearson_r

    return BaselineReport(
        n_trials=n_trials,
        prop_correct_mean=float(np.mean(prop_values)),
        peck_f1_mean=_mean_or_none(f1_values),
        feeding_r_mean=_mean_or_none(feeding_r),
        feeding_r_defined=len(feeding_r),
        feeding_r_of_mean=r_of_mean(feeding_pred_sums, feeding_truth),
        cooccurrence_r_mean=_mean_or_none(cooc_r),
        cooccurrence_r_defined=len(cooc_r),
        cooccurrence_r_of_mean=r_of_mean(cooc_pred_sums, cooc_truth),
        feeding_mean_abs_mean=_mean_or_none(feeding_abs),
        cooccurrence_mean_abs_mean=_mean_or_none(cooc_abs),
    )
