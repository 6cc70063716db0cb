"""Clip-level bird identification from ring detections.

Per frame, ring detections are linked into leg pairs by greedy
nearest-centroid matching under a distance threshold; unpaired rings stay
as singletons.  Each observation becomes a joint color-probability table
(top color x bottom color, with an extra ABSENT column for singletons),
tables are pooled over the clip, and each roster candidate is scored by
summing its best per-frame leg assignment.  The candidate list sorted by
score is the clip's identity ranking.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import classifier as _classifier
from .classifier import ClassifierModel
from .errors import EmptyRoster, InputError, SchemaError, UnknownColorCode
from .identity import ABSENT, ColorTable, Roster


@dataclass(frozen=True)
class RingDetection:
    """One classified ring in one frame: centroid plus color probabilities."""

    frame: int
    centroid: tuple[float, float]
    probs: np.ndarray  # aligned with the color table's code order

    def __post_init__(self) -> None:
        cx, cy = self.centroid
        if not (math.isfinite(cx) and math.isfinite(cy)):
            raise SchemaError("ring centroid must be finite")
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 1 or p.size == 0:
            raise SchemaError("ring probabilities must be a non-empty vector")
        if (p < 0).any() or not math.isfinite(p.sum()):
            raise SchemaError("ring probabilities must be non-negative and finite")
        if abs(p.sum() - 1.0) > 1e-6:
            raise SchemaError(f"ring probabilities sum to {p.sum():.8f}, expected 1")
        object.__setattr__(self, "probs", p / p.sum())


@dataclass(frozen=True)
class RingPairObservation:
    """Two rings on one leg, or a singleton whose partner was not detected."""

    frame: int
    top: RingDetection
    bottom: RingDetection | None  # None encodes ABSENT

    def __post_init__(self) -> None:
        if self.bottom is not None and self.top.centroid[1] > self.bottom.centroid[1]:
            raise SchemaError("pair observation must place the smaller-y ring on top")

    @property
    def is_singleton(self) -> bool:
        return self.bottom is None


@dataclass(frozen=True)
class PairProbabilityMatrix:
    """Summed joint color tables of a clip; total mass equals the pair count."""

    mass: np.ndarray  # (n_colors, n_colors + 1); last column is ABSENT
    frames_pooled: int
    pairs_pooled: int

    @property
    def empty(self) -> bool:
        return self.pairs_pooled == 0


@dataclass(frozen=True)
class IdRanking:
    """Roster candidates sorted by descending score."""

    clip_id: str
    scope: str
    entries: tuple[tuple[str, float], ...]  # (bird_id, score)
    n_observations: int
    n_singletons: int

    @property
    def empty(self) -> bool:
        return self.n_observations == 0

    def top_k(self, k: int) -> list[str]:
        return top_k(self, k)


def pair_rings(detections: Sequence[RingDetection], threshold: float) -> list[RingPairObservation]:
    """Link one frame's detections into pairs, closest centroids first.

    Repeatedly joins the globally closest unmatched pair whose distance is
    at most the threshold; whatever remains becomes singleton observations.
    Ties are broken by input order for reproducibility.
    """
    if threshold <= 0:
        raise InputError(f"pairing threshold must be positive, got {threshold}")
    frames = {d.frame for d in detections}
    if len(frames) > 1:
        raise SchemaError(f"pair_rings expects one frame, got {sorted(frames)}")

    edges = []
    for i in range(len(detections)):
        for j in range(i + 1, len(detections)):
            d = math.dist(detections[i].centroid, detections[j].centroid)
            if d <= threshold:
                edges.append((d, i, j))
    edges.sort()

    used: set[int] = set()
    observations = []
    for _, i, j in edges:
        if i in used or j in used:
            continue
        used.update((i, j))
        a, b = detections[i], detections[j]
        # same-y pairs ordered by x, then input index, to stay deterministic
        if (a.centroid[1], a.centroid[0], i) > (b.centroid[1], b.centroid[0], j):
            a, b = b, a
        observations.append(RingPairObservation(frame=a.frame, top=a, bottom=b))
    for i, det in enumerate(detections):
        if i not in used:
            observations.append(RingPairObservation(frame=det.frame, top=det, bottom=None))
    return observations


def pair_probability(obs: RingPairObservation, n_colors: int) -> np.ndarray:
    """Joint (top, bottom) color table of one observation; sums to 1.

    Paired rings use the independence product of the two probability
    vectors; singletons put their whole vector in the ABSENT column.
    """
    table = np.zeros((n_colors, n_colors + 1))
    if obs.bottom is None:
        table[:, n_colors] = obs.top.probs
    else:
        table[:, :n_colors] = np.outer(obs.top.probs, obs.bottom.probs)
    return table


def pool_clip(observations: Sequence[RingPairObservation], n_colors: int) -> PairProbabilityMatrix:
    """Elementwise sum of all observation tables in a clip."""
    mass = np.zeros((n_colors, n_colors + 1))
    for obs in observations:
        mass += pair_probability(obs, n_colors)
    return PairProbabilityMatrix(
        mass=mass,
        frames_pooled=len({obs.frame for obs in observations}),
        pairs_pooled=len(observations),
    )


def _leg_lookup(leg: tuple[str, str], table: ColorTable) -> tuple[int, float]:
    """Flat index into a raveled observation table for one candidate leg.

    A leg with a single visible ring reads the ABSENT column under that
    ring's color, whichever nominal position is empty: a singleton
    detection cannot tell top from bottom. Returns (index, weight) with
    weight 0 for a fully absent leg, which valid combinations never have.
    """
    n = len(table.codes)
    top, bottom = leg
    if top != ABSENT and bottom != ABSENT:
        return table.index[top] * (n + 1) + table.index[bottom], 1.0
    present = bottom if top == ABSENT else top
    if present == ABSENT:
        return 0, 0.0
    return table.index[present] * (n + 1) + n, 1.0


def score_candidates(
    matrix: PairProbabilityMatrix,
    per_frame: Mapping[int, Sequence[RingPairObservation]],
    roster: Roster,
    table: ColorTable,
) -> tuple[tuple[str, float], ...]:
    """Score every roster member against a clip's grouped observations.

    A frame's contribution to a candidate is the best way of attributing
    the frame's observations to the candidate's two legs: with a single
    observation, the better of the two legs; with several, the best
    ordered pair of distinct observations (one per leg).  Scores sum over
    frames.  Output is sorted by descending score, then ascending
    combination string.
    """
    if not roster.members:
        raise EmptyRoster(f"cannot rank against empty roster {roster.scope.value!r}")
    n_obs = sum(len(v) for v in per_frame.values())
    if n_obs != matrix.pairs_pooled:
        raise SchemaError(
            f"pooled matrix holds {matrix.pairs_pooled} observations, frames hold {n_obs}"
        )

    n_candidates = len(roster.members)
    left = np.empty(n_candidates, dtype=np.intp)
    left_w = np.empty(n_candidates)
    right = np.empty(n_candidates, dtype=np.intp)
    right_w = np.empty(n_candidates)
    for c, member in enumerate(roster.members):
        left[c], left_w[c] = _leg_lookup(member.combination.left_leg, table)
        right[c], right_w[c] = _leg_lookup(member.combination.right_leg, table)

    totals = np.zeros(n_candidates)
    for frame in sorted(per_frame):
        observations = per_frame[frame]
        if not observations:
            continue
        flats = [pair_probability(obs, len(table.codes)).ravel() for obs in observations]
        if len(flats) == 1:
            t = flats[0]
            best = np.maximum(t[left] * left_w, t[right] * right_w)
        else:
            best = None
            for i, ti in enumerate(flats):
                for j, tj in enumerate(flats):
                    if i == j:
                        continue
                    cand = ti[left] * left_w + tj[right] * right_w
                    best = cand if best is None else np.maximum(best, cand)
        totals += best

    order = sorted(
        range(n_candidates),
        key=lambda c: (-totals[c], str(roster.members[c].combination)),
    )
    return tuple((roster.members[c].bird_id, float(totals[c])) for c in order)


def top_k(ranking: IdRanking, k: int) -> list[str]:
    """First min(k, roster size) bird ids of a ranking."""
    if k < 1:
        raise InputError(f"k must be at least 1, got {k}")
    return [bird_id for bird_id, _ in ranking.entries[:k]]


# --- clip files -------------------------------------------------------------

@dataclass(frozen=True)
class ClipRing:
    """Raw per-frame ring record before classification."""

    cx: float
    cy: float
    crop: np.ndarray | None = None
    probs: dict[str, float] | None = None
    width: float | None = None
    height: float | None = None


@dataclass(frozen=True)
class Clip:
    """Parsed clip detection file: frames of raw ring records."""

    clip_id: str
    frames: tuple[tuple[int, tuple[ClipRing, ...]], ...]

    @property
    def n_rings(self) -> int:
        return sum(len(rings) for _, rings in self.frames)


def load_clip(path: str | Path, clip_id: str | None = None) -> Clip:
    """Parse a clip detection file (JSON lines, one frame per line).

    Each line is ``{"frame": n, "rings": [...]}``; a ring carries ``cx``,
    ``cy`` and either ``crop`` (path relative to the clip file, or inline
    base64 PNG) or ``probs`` (code-to-probability map), plus optional
    ``w``/``h``.
    """
    path = Path(path)
    if clip_id is None:
        clip_id = path.name.removesuffix(".jsonl")
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise SchemaError(f"cannot read clip {path}: {exc}") from exc

    frames: list[tuple[int, tuple[ClipRing, ...]]] = []
    seen_frames: set[int] = set()
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
        if not isinstance(record, dict) or "frame" not in record or "rings" not in record:
            raise SchemaError(f"{path}:{lineno}: frame records need 'frame' and 'rings'")
        frame = record["frame"]
        if not isinstance(frame, int) or frame < 0:
            raise SchemaError(f"{path}:{lineno}: frame index must be a non-negative integer")
        if frame in seen_frames:
            raise SchemaError(f"{path}:{lineno}: duplicate frame {frame}")
        seen_frames.add(frame)
        rings = []
        for ring in record["rings"]:
            if not isinstance(ring, dict) or "cx" not in ring or "cy" not in ring:
                raise SchemaError(f"{path}:{lineno}: ring records need 'cx' and 'cy'")
            crop = None
            probs = None
            if "crop" in ring:
                source = ring["crop"]
                if isinstance(source, str) and source.startswith("base64:"):
                    crop = _classifier.crop_from_png_base64(source[len("base64:"):])
                else:
                    crop = _classifier.load_crop(path.parent / source)
            elif "probs" in ring:
                if not isinstance(ring["probs"], dict):
                    raise SchemaError(f"{path}:{lineno}: 'probs' must be a mapping")
                probs = {str(k): float(v) for k, v in ring["probs"].items()}
            else:
                raise SchemaError(f"{path}:{lineno}: ring needs either 'crop' or 'probs'")
            rings.append(
                ClipRing(
                    cx=float(ring["cx"]),
                    cy=float(ring["cy"]),
                    crop=crop,
                    probs=probs,
                    width=float(ring["w"]) if "w" in ring else None,
                    height=float(ring["h"]) if "h" in ring else None,
                )
            )
        frames.append((frame, tuple(rings)))
    frames.sort(key=lambda fr: fr[0])
    return Clip(clip_id=clip_id, frames=tuple(frames))


def _probs_vector(probs: dict[str, float], table: ColorTable) -> np.ndarray:
    unknown = sorted(set(probs) - set(table.codes))
    if unknown:
        raise UnknownColorCode(f"probability vector uses unknown color codes {unknown}")
    vec = np.array([probs.get(code, 0.0) for code in table.codes])
    if (vec < 0).any():
        raise SchemaError("ring probabilities must be non-negative")
    total = vec.sum()
    if abs(total - 1.0) > 1e-6:
        raise SchemaError(f"ring probabilities sum to {total:.8f}, expected 1")
    return vec / total


def classify_clip(
    clip: Clip, model: ClassifierModel | None, table: ColorTable
) -> dict[int, list[RingDetection]]:
    """Turn raw clip rings into classified detections, batching crop scoring."""
    crops: list[np.ndarray] = []
    slots: list[tuple[int, int]] = []  # (frame position, ring position) per crop
    for fi, (_, rings) in enumerate(clip.frames):
        for ri, ring in enumerate(rings):
            if ring.crop is not None:
                crops.append(ring.crop)
                slots.append((fi, ri))
    if crops and model is None:
        raise InputError(f"clip {clip.clip_id} contains raw crops but no model was given")
    if model is not None and model.codes != table.codes:
        raise SchemaError("model classes do not match the active color table")
    crop_probs = model.predict_crops(crops) if crops else None

    by_slot = {slot: crop_probs[i] for i, slot in enumerate(slots)} if crops else {}
    detections: dict[int, list[RingDetection]] = {}
    for fi, (frame, rings) in enumerate(clip.frames):
        dets = []
        for ri, ring in enumerate(rings):
            if (fi, ri) in by_slot:
                vec = by_slot[(fi, ri)]
            else:
                vec = _probs_vector(ring.probs, table)
            dets.append(RingDetection(frame=frame, centroid=(ring.cx, ring.cy), probs=vec))
        detections[frame] = dets
    return detections


def default_pair_threshold(clip: Clip) -> float:
    """Half the median ring-crop diagonal, the scale-relative pairing default."""
    diagonals = []
    for _, rings in clip.frames:
        for ring in rings:
            if ring.width is not None and ring.height is not None:
                diagonals.append(math.hypot(ring.width, ring.height))
            elif ring.crop is not None:
                h, w = ring.crop.shape[:2]
                diagonals.append(math.hypot(w, h))
    if not diagonals:
        raise InputError(
            f"clip {clip.clip_id} has no ring sizes; pass an explicit pairing threshold"
        )
    return 0.5 * float(np.median(diagonals))


def identify_clip(
    clip: Clip,
    model: ClassifierModel | None,
    roster: Roster,
    table: ColorTable,
    threshold: float | None = None,
) -> IdRanking:
    """Full per-clip pipeline: classify, pair, pool, rank the roster."""
    detections = classify_clip(clip, model, table)
    if threshold is None:
        threshold = default_pair_threshold(clip)
    per_frame = {
        frame: pair_rings(dets, threshold) for frame, dets in detections.items() if dets
    }
    observations = [obs for frame in sorted(per_frame) for obs in per_frame[frame]]
    matrix = pool_clip(observations, len(table.codes))
    if matrix.empty:
        entries = tuple(
            (m.bird_id, 0.0)
            for m in sorted(roster.members, key=lambda m: str(m.combination))
        )
        if not entries:
            raise EmptyRoster(f"cannot rank against empty roster {roster.scope.value!r}")
    else:
        entries = score_candidates(matrix, per_frame, roster, table)
    return IdRanking(
        clip_id=clip.clip_id,
        scope=roster.scope.value,
        entries=entries,
        n_observations=matrix.pairs_pooled,
        n_singletons=sum(1 for o in observations if o.is_singleton),
    )


def ranking_to_dict(ranking: IdRanking) -> dict:
    return {
        "clip": ranking.clip_id,
        "scope": ranking.scope,
        "ranking": [
            {"bird_id": bird_id, "score": score} for bird_id, score in ranking.entries
        ],
        "empty": ranking.empty,
        "n_observations": ranking.n_observations,
        "n_singleton_observations": ranking.n_singletons,
    }


def save_rankings(rankings: Iterable[IdRanking], path: str | Path) -> None:
    docs = [ranking_to_dict(r) for r in rankings]
    Path(path).write_text(json.dumps(docs, indent=2, sort_keys=True) + "\n")
