"""Seeded synthetic data: crops, clips, videos, and their ground truth.

Everything here exists to make the pipeline testable at desk scale with
known answers.  A fixed seed fully determines every file: crops are noisy
disks in a class's reference color, clips place ring detections with
leg-consistent geometry, and videos are piecewise-linear tracks in
disjoint lanes with Poisson peck events.  Controlled corruption (identity
permutation, peck jitter, box jitter) turns truth into degraded
predictions whose error profile is known by construction.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .classifier import crop_to_png_base64, save_crop
from .errors import InputError, UnknownColorCode
from .identity import (
    ABSENT,
    ColorTable,
    RingCombination,
    Roster,
    RosterMember,
    Scope,
    all_four_ring_combinations,
    roster_to_dict,
)
from .matcher import Clip, ClipRing
from .tracks import (
    BoundingBox,
    PeckEvent,
    Tracklet,
    VideoData,
    VideoManifest,
    reattribute_pecks,
    save_manifest,
    save_pecks,
    save_tracks,
)

CROP_SIZE = 24
CROP_RADIUS = 9.0
# leg geometry: rings on one leg sit well inside the default pairing
# threshold (half the crop diagonal, ~17 px); legs sit far outside it
WITHIN_LEG_DY = 12.0
LEG_SEPARATION = 60.0
CENTROID_JITTER = 2.0
_LEFT_X, _RIGHT_X, _TOP_Y = 30.0, 30.0 + LEG_SEPARATION, 40.0

_BIRD_LANE_BASE = 80.0
_BIRD_LANE_STEP = 160.0
_BIRD_BOX_SIZE = 40.0


@dataclass(frozen=True)
class SynthConfig:
    """Knobs for the generator; the seed pins down every byte."""

    seed: int = 0
    n_birds: int = 12
    noise_sigma: float = 0.0
    frames_per_clip: int = 25
    drop_prob: float = 0.0
    video_length_frames: int = 1500
    fps: float = 25.0
    n_clips: int = 20
    n_videos: int = 2
    n_train_crops: int = 8
    peck_rate_per_min: float = 4.0
    corruption_rate: float = 0.0
    peck_jitter_frames: int = 0
    box_jitter_px: float = 0.0
    territory_size: int = 3
    neighbours_size: int = 15

    def __post_init__(self) -> None:
        for name in ("drop_prob", "corruption_rate"):
            value = getattr(self, name)
            if not (0.0 <= value <= 1.0):
                raise InputError(f"{name} must be in [0, 1], got {value}")
        if self.noise_sigma < 0:
            raise InputError(f"noise_sigma must be non-negative, got {self.noise_sigma}")
        if self.n_birds < 1:
            raise InputError("need at least one bird")
        if self.frames_per_clip < 1 or self.video_length_frames < 1:
            raise InputError("frame counts must be positive")
        if self.fps <= 0:
            raise InputError("fps must be positive")

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in self.__dataclass_fields__}


def gen_ring_crop(
    color: str, sigma: float, rng: np.random.Generator | int, table: ColorTable
) -> np.ndarray:
    """A masked disk in the class's reference color plus clipped noise.

    Background pixels are exactly (0,0,0), which downstream histogram
    extraction treats as mask.
    """
    if color not in table.index:
        raise UnknownColorCode(f"unknown color code {color!r}")
    if isinstance(rng, int):
        rng = np.random.default_rng(rng)
    table.require_rgb()
    reference = table.by_code[color].rgb
    center = (CROP_SIZE - 1) / 2.0
    yy, xx = np.mgrid[0:CROP_SIZE, 0:CROP_SIZE]
    mask = (yy - center) ** 2 + (xx - center) ** 2 <= CROP_RADIUS**2
    crop = np.zeros((CROP_SIZE, CROP_SIZE, 3), dtype=np.float64)
    crop[mask] = reference
    if sigma > 0:
        crop[mask] += rng.normal(0.0, sigma, size=(int(mask.sum()), 3))
    return np.clip(np.round(crop), 0, 255).astype(np.uint8)


def _ring_positions(combination: RingCombination) -> list[tuple[str, float, float]]:
    """(color, cx, cy) for each present position, in fixed position order."""
    out = []
    for code, x, dy in (
        (combination.codes[0], _LEFT_X, 0.0),
        (combination.codes[1], _LEFT_X, WITHIN_LEG_DY),
        (combination.codes[2], _RIGHT_X, 0.0),
        (combination.codes[3], _RIGHT_X, WITHIN_LEG_DY),
    ):
        if code != ABSENT:
            out.append((code, x, _TOP_Y + dy))
    return out


def gen_clip(
    combination: RingCombination,
    config: SynthConfig,
    rng: np.random.Generator,
    clip_id: str,
    table: ColorTable,
) -> Clip:
    """One detection clip for one bird: jittered, dropout-thinned rings."""
    frames = []
    for frame in range(config.frames_per_clip):
        rings = []
        for code, base_x, base_y in _ring_positions(combination):
            drop = rng.uniform()
            jx = rng.uniform(-CENTROID_JITTER, CENTROID_JITTER)
            jy = rng.uniform(-CENTROID_JITTER, CENTROID_JITTER)
            if drop < config.drop_prob:
                continue
            crop = gen_ring_crop(code, config.noise_sigma, rng, table)
            rings.append(
                ClipRing(
                    cx=base_x + jx,
                    cy=base_y + jy,
                    crop=crop,
                    width=float(CROP_SIZE),
                    height=float(CROP_SIZE),
                )
            )
        frames.append((frame, tuple(rings)))
    return Clip(clip_id=clip_id, frames=tuple(frames))


def write_clip(clip: Clip, path: str | Path) -> None:
    """Serialize a clip to JSON lines with inline base64 crops."""
    lines = []
    for frame, rings in clip.frames:
        records = []
        for ring in rings:
            record: dict = {"cx": ring.cx, "cy": ring.cy}
            if ring.width is not None:
                record["w"] = ring.width
            if ring.height is not None:
                record["h"] = ring.height
            if ring.crop is not None:
                record["crop"] = "base64:" + crop_to_png_base64(ring.crop)
            elif ring.probs is not None:
                record["probs"] = ring.probs
            records.append(record)
        lines.append(json.dumps({"frame": frame, "rings": records}, sort_keys=True))
    Path(path).write_text("\n".join(lines) + "\n")


@dataclass
class SynthPopulation:
    """Sampled birds plus the three nested gallery rosters."""

    members: list[RosterMember]
    rosters: dict[Scope, Roster]

    def combination_of(self, bird_id: str) -> RingCombination:
        for member in self.members:
            if member.bird_id == bird_id:
                return member.combination
        raise KeyError(bird_id)


def gen_population(config: SynthConfig, rng: np.random.Generator, table: ColorTable) -> SynthPopulation:
    """Sample distinct birds from the full fixed-aluminium combination space.

    All sampled birds wear four rings with the aluminium ring top-left, so
    no two distinct birds share a score under every leg assignment (mirror
    pairs and singleton ambiguities are exercised separately in tests).
    """
    space = all_four_ring_combinations(table)
    if config.n_birds > len(space):
        raise InputError(
            f"cannot sample {config.n_birds} birds from {len(space)} distinct combinations"
        )
    order = rng.permutation(len(space))[: config.n_birds]
    members = [
        RosterMember(bird_id=f"bird{i:04d}", combination=space[int(idx)])
        for i, idx in enumerate(order)
    ]
    t = min(config.territory_size, len(members))
    m = min(max(config.neighbours_size, t), len(members))
    rosters = {
        Scope.WITHIN_TERRITORY: Roster(Scope.WITHIN_TERRITORY, tuple(members[:t])),
        Scope.WITH_NEIGHBOURS: Roster(Scope.WITH_NEIGHBOURS, tuple(members[:m])),
        Scope.ALL: Roster(Scope.ALL, tuple(members)),
    }
    return SynthPopulation(members=members, rosters=rosters)


def gen_video(
    population: SynthPopulation,
    config: SynthConfig,
    rng: np.random.Generator,
    video_id: str,
) -> tuple[VideoData, VideoManifest]:
    """Ground-truth tracks and pecks for the territory birds of one video.

    Each bird moves linearly inside its own horizontal lane (so boxes of
    different birds never overlap), its presence is split into a few
    tracklets with short gaps, and its peck count is Poisson with a rate
    proportional to its index, which guarantees between-bird variance for
    correlation statistics.
    """
    length = config.video_length_frames
    birds = population.rosters[Scope.WITHIN_TERRITORY].members
    tracks: list[Tracklet] = []
    pecks: list[PeckEvent] = []
    next_track = 0
    for i, member in enumerate(birds):
        lane = _BIRD_LANE_BASE + _BIRD_LANE_STEP * i
        start = int(rng.integers(0, max(1, length // 8)))
        end = length - 1 - int(rng.integers(0, max(1, length // 8)))
        n_fragments = int(rng.integers(2, 4))
        cuts = sorted(rng.integers(start + 1, end, size=n_fragments - 1).tolist())
        bounds = [start] + cuts + [end]
        present: list[int] = []
        for k in range(n_fragments):
            frag_start = bounds[k] if k == 0 else bounds[k] + int(rng.integers(3, 11))
            frag_end = bounds[k + 1]
            if frag_end - frag_start < 2:
                continue
            x0 = float(rng.uniform(0.0, 800.0))
            vx = float(rng.uniform(-1.0, 1.0))
            vy = float(rng.uniform(-0.1, 0.1))
            boxes = {}
            for offset, frame in enumerate(range(frag_start, frag_end + 1)):
                boxes[frame] = BoundingBox(
                    x=x0 + vx * offset,
                    y=lane + vy * offset,
                    w=_BIRD_BOX_SIZE,
                    h=_BIRD_BOX_SIZE,
                )
            tracks.append(Tracklet.from_boxes(next_track, boxes, member.bird_id))
            next_track += 1
            present.extend(boxes)
        rate = config.peck_rate_per_min * (1 + i)
        minutes = length / config.fps / 60.0
        n_pecks = min(int(rng.poisson(rate * minutes)), len(present))
        if n_pecks > 0:
            chosen = rng.choice(np.array(sorted(present)), size=n_pecks, replace=False)
            pecks.extend(PeckEvent(member.bird_id, int(f)) for f in sorted(chosen))
    manifest = VideoManifest(
        video_id=video_id,
        fps=config.fps,
        length_frames=length,
        rosters={
            scope.value: roster_to_dict(roster)
            for scope, roster in population.rosters.items()
        },
    )
    return VideoData(tracks=tracks, pecks=pecks), manifest


def corrupt_video(
    truth: VideoData,
    rate: float,
    rng: np.random.Generator,
    peck_jitter_frames: int = 0,
    box_jitter_px: float = 0.0,
    video_length: int | None = None,
) -> VideoData:
    """Derive degraded predictions from truth by seeded corruption.

    Identity corruption draws, per track, one uniform u and one wrong-bird
    target before applying any threshold, so sweeping the rate with a
    fixed seed corrupts a growing superset of tracks with stable targets:
    degradation is monotone by construction.  Pecks follow their covering
    track's (possibly wrong) identity, then jitter; boxes jitter last.
    """
    birds = sorted({t.bird_id for t in truth.tracks if t.bird_id is not None})
    draws = []
    for track in truth.tracks:
        u = float(rng.uniform())
        others = [b for b in birds if b != track.bird_id]
        wrong = others[int(rng.integers(len(others)))] if others else track.bird_id
        draws.append((u, wrong))
    pred_tracks = [
        replace(track, bird_id=wrong if u < rate else track.bird_id)
        for track, (u, wrong) in zip(truth.tracks, draws)
    ]
    pred_pecks = reattribute_pecks(truth.pecks, truth.tracks, pred_tracks)
    if peck_jitter_frames > 0:
        jittered = []
        for peck in pred_pecks:
            shift = int(rng.integers(-peck_jitter_frames, peck_jitter_frames + 1))
            frame = max(0, peck.frame + shift)
            if video_length is not None:
                frame = min(frame, video_length - 1)
            jittered.append(replace(peck, frame=frame))
        pred_pecks = jittered
    if box_jitter_px > 0:
        shaken = []
        for track in pred_tracks:
            boxes = {}
            for frame, box in track.frames:
                dx = float(rng.uniform(-box_jitter_px, box_jitter_px))
                dy = float(rng.uniform(-box_jitter_px, box_jitter_px))
                boxes[frame] = replace(box, x=box.x + dx, y=box.y + dy)
            shaken.append(Tracklet.from_boxes(track.track_id, boxes, track.bird_id))
        pred_tracks = shaken
    return VideoData(tracks=pred_tracks, pecks=pred_pecks)


@dataclass
class DatasetPaths:
    """Locations of everything one generator run wrote."""

    root: Path
    color_table: Path
    crop_manifest: Path
    roster_files: dict[str, Path]
    clip_files: dict[str, Path]  # clip_id -> path
    truth_json: Path
    video_truth_dir: Path
    video_pred_dir: Path
    video_ids: list[str] = field(default_factory=list)


def generate_dataset(
    config: SynthConfig, out_dir: str | Path, table: ColorTable | None = None
) -> DatasetPaths:
    """Emit a complete dataset: crops, rosters, clips, videos, truth.

    The layout mirrors what the pipeline consumes: a crop manifest for
    training, per-scope roster files and detection clips for
    identification, and truth/predictions video directories for
    evaluation.  truth.json records the true bird of every clip.
    """
    table = table or ColorTable.default()
    table.require_rgb()
    out_dir = Path(out_dir)
    streams = np.random.SeedSequence(config.seed).spawn(4)
    rng_pop = np.random.default_rng(streams[0])
    rng_crops = np.random.default_rng(streams[1])
    rng_clips = np.random.default_rng(streams[2])
    rng_videos = np.random.default_rng(streams[3])

    population = gen_population(config, rng_pop, table)

    (out_dir / "crops").mkdir(parents=True, exist_ok=True)
    table_path = out_dir / "color_table.csv"
    table.save(table_path)
    manifest_lines = []
    for code in table.codes:
        for i in range(config.n_train_crops):
            crop = gen_ring_crop(code, config.noise_sigma, rng_crops, table)
            name = f"{code}_{i:03d}.png"
            save_crop(crop, out_dir / "crops" / name)
            manifest_lines.append(json.dumps({"image": name, "label": code}))
    crop_manifest = out_dir / "crops" / "manifest.jsonl"
    crop_manifest.write_text("\n".join(manifest_lines) + "\n")

    (out_dir / "rosters").mkdir(exist_ok=True)
    roster_files = {}
    for scope, roster in population.rosters.items():
        path = out_dir / "rosters" / f"{scope.value}.json"
        path.write_text(json.dumps(roster_to_dict(roster), indent=2, sort_keys=True) + "\n")
        roster_files[scope.value] = path

    (out_dir / "clips").mkdir(exist_ok=True)
    clip_files = {}
    clip_truth = {}
    territory = population.rosters[Scope.WITHIN_TERRITORY].members
    for i in range(config.n_clips):
        member = territory[i % len(territory)]
        clip_id = f"clip{i:04d}"
        clip = gen_clip(member.combination, config, rng_clips, clip_id, table)
        path = out_dir / "clips" / f"{clip_id}.jsonl"
        write_clip(clip, path)
        clip_files[clip_id] = path
        clip_truth[clip_id] = member.bird_id

    truth_dir = out_dir / "videos" / "truth"
    pred_dir = out_dir / "videos" / "predictions"
    truth_dir.mkdir(parents=True, exist_ok=True)
    pred_dir.mkdir(parents=True, exist_ok=True)
    video_ids = []
    for v in range(config.n_videos):
        video_id = f"video{v:02d}"
        video_ids.append(video_id)
        truth, manifest = gen_video(population, config, rng_videos, video_id)
        predicted = corrupt_video(
            truth,
            config.corruption_rate,
            rng_videos,
            peck_jitter_frames=config.peck_jitter_frames,
            box_jitter_px=config.box_jitter_px,
            video_length=config.video_length_frames,
        )
        save_manifest(manifest, truth_dir / f"{video_id}.manifest.json")
        save_tracks(truth.tracks, truth_dir / f"{video_id}.tracks.csv")
        save_pecks(truth.pecks, truth_dir / f"{video_id}.pecks.csv")
        save_tracks(predicted.tracks, pred_dir / f"{video_id}.tracks.csv")
        save_pecks(predicted.pecks, pred_dir / f"{video_id}.pecks.csv")

    truth_json = out_dir / "truth.json"
    truth_json.write_text(
        json.dumps(
            {
                "clips": clip_truth,
                "birds": {
                    member.bird_id: str(member.combination)
                    for member in population.members
                },
                "videos": video_ids,
                "config": config.to_dict(),
            },
            indent=2,
            sort_keys=True,
        )
        + "\n"
    )
    return DatasetPaths(
        root=out_dir,
        color_table=table_path,
        crop_manifest=crop_manifest,
        roster_files=roster_files,
        clip_files=clip_files,
        truth_json=truth_json,
        video_truth_dir=truth_dir,
        video_pred_dir=pred_dir,
        video_ids=video_ids,
    )
