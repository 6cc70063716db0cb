"""Tracks, identities over tracks, and frame-level correspondence.

Tracklets are per-frame bounding boxes with an optional bird identity.
This module joins same-bird tracklets across gaps by linear interpolation,
matches predicted to ground-truth boxes per frame by maximum total IoU,
and compresses per-bird detections into presence intervals.  Track and
peck files use the CSV layouts shared with MOT-style tooling.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import IdentityMismatch, OverlapError, SchemaError

TRACK_HEADER = ("frame", "track_id", "x", "y", "w", "h", "bird_id")
PECK_HEADER = ("frame", "bird_id")


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box, top-left origin, in pixels."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self) -> None:
        values = (self.x, self.y, self.w, self.h)
        if not all(math.isfinite(v) for v in values):
            raise SchemaError(f"bounding box must be finite, got {values}")
        if self.w <= 0 or self.h <= 0:
            raise SchemaError(f"bounding box needs positive size, got w={self.w}, h={self.h}")

    @property
    def area(self) -> float:
        return self.w * self.h


@dataclass(frozen=True)
class Tracklet:
    """One track: strictly increasing frames, each with a box."""

    track_id: int | str
    frames: tuple[tuple[int, BoundingBox], ...]
    bird_id: str | None = None

    def __post_init__(self) -> None:
        if not self.frames:
            raise SchemaError(f"track {self.track_id!r} has no frames")
        indexes = [f for f, _ in self.frames]
        if any(b <= a for a, b in zip(indexes, indexes[1:])):
            raise SchemaError(f"track {self.track_id!r} frames must strictly increase")

    @classmethod
    def from_boxes(
        cls, track_id: int | str, boxes: Mapping[int, BoundingBox], bird_id: str | None = None
    ) -> "Tracklet":
        return cls(track_id, tuple(sorted(boxes.items())), bird_id)

    @property
    def first_frame(self) -> int:
        return self.frames[0][0]

    @property
    def last_frame(self) -> int:
        return self.frames[-1][0]

    @property
    def boxes(self) -> dict[int, BoundingBox]:
        return dict(self.frames)

    def frame_set(self) -> set[int]:
        return {f for f, _ in self.frames}


@dataclass(frozen=True)
class PeckEvent:
    """One food peck of one bird at one frame."""

    bird_id: str
    frame: int

    def __post_init__(self) -> None:
        if self.frame < 0:
            raise SchemaError(f"peck frame must be non-negative, got {self.frame}")


def join_tracks(a: Tracklet, b: Tracklet) -> Tracklet:
    """Join two tracks of the same bird, filling the gap by interpolation.

    Every gap frame gets a box whose x, y, w and h are interpolated
    independently between a's last and b's first box; the originals are
    preserved exactly.  Adjacent tracks concatenate without synthesis.
    """
    if a.bird_id != b.bird_id:
        raise IdentityMismatch(
            f"cannot join tracks of different birds: {a.bird_id!r} vs {b.bird_id!r}"
        )
    if a.last_frame >= b.first_frame:
        raise OverlapError(
            f"tracks overlap or are out of order: {a.last_frame} >= {b.first_frame}"
        )
    box_a = a.frames[-1][1]
    box_b = b.frames[0][1]
    span = b.first_frame - a.last_frame
    filled = []
    for frame in range(a.last_frame + 1, b.first_frame):
        t = (frame - a.last_frame) / span
        filled.append(
            (
                frame,
                BoundingBox(
                    x=box_a.x + (box_b.x - box_a.x) * t,
                    y=box_a.y + (box_b.y - box_a.y) * t,
                    w=box_a.w + (box_b.w - box_a.w) * t,
                    h=box_a.h + (box_b.h - box_a.h) * t,
                ),
            )
        )
    return Tracklet(
        track_id=a.track_id,
        frames=a.frames + tuple(filled) + b.frames,
        bird_id=a.bird_id,
    )


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two boxes, in [0, 1]."""
    ix = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    iy = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


@dataclass
class Correspondence:
    """Per-frame one-to-one box matching between two track sets.

    ``matches[frame]`` lists (predicted index, truth index, IoU) triples,
    indexes referring to the tracklet lists held alongside.
    """

    predicted: Sequence[Tracklet]
    truth: Sequence[Tracklet]
    iou_min: float
    matches: dict[int, tuple[tuple[int, int, float], ...]] = field(default_factory=dict)

    def total_iou(self) -> float:
        return sum(m[2] for pairs in self.matches.values() for m in pairs)

    def matched_pairs(self) -> tuple[np.ndarray, np.ndarray]:
        """All matched (predicted index, truth index) pairs as flat arrays."""
        pred, tru = [], []
        for frame in sorted(self.matches):
            for pi, ti, _ in self.matches[frame]:
                pred.append(pi)
                tru.append(ti)
        return np.asarray(pred, dtype=np.intp), np.asarray(tru, dtype=np.intp)


def match_frames(
    predicted: Sequence[Tracklet], truth: Sequence[Tracklet], iou_min: float = 0.5
) -> Correspondence:
    """Match predicted to truth boxes per frame, maximizing total IoU.

    Pairs below the IoU floor never match.  Uses the rectangular
    assignment solver on the IoU gain matrix, so the result is a true
    optimum, not a greedy approximation.
    """
    if not (0.0 < iou_min <= 1.0):
        raise SchemaError(f"iou_min must be in (0, 1], got {iou_min}")
    pred_frames: dict[int, list[tuple[int, BoundingBox]]] = {}
    for i, track in enumerate(predicted):
        for frame, box in track.frames:
            pred_frames.setdefault(frame, []).append((i, box))
    truth_frames: dict[int, list[tuple[int, BoundingBox]]] = {}
    for i, track in enumerate(truth):
        for frame, box in track.frames:
            truth_frames.setdefault(frame, []).append((i, box))

    corr = Correspondence(predicted=predicted, truth=truth, iou_min=iou_min)
    for frame in sorted(set(pred_frames) | set(truth_frames)):
        p = pred_frames.get(frame, [])
        t = truth_frames.get(frame, [])
        if not p or not t:
            corr.matches[frame] = ()
            continue
        gain = np.zeros((len(p), len(t)))
        for pi, (_, pbox) in enumerate(p):
            for ti, (_, tbox) in enumerate(t):
                value = iou(pbox, tbox)
                if value >= iou_min:
                    gain[pi, ti] = value
        rows, cols = linear_sum_assignment(gain, maximize=True)
        pairs = tuple(
            (p[pi][0], t[ti][0], float(gain[pi, ti]))
            for pi, ti in zip(rows, cols)
            if gain[pi, ti] >= iou_min
        )
        corr.matches[frame] = pairs
    return corr


@dataclass
class PresenceTimeline:
    """Per-bird detection intervals over a fixed-length video."""

    video_length: int
    intervals: dict[str, tuple[tuple[int, int], ...]]  # bird -> ((start, end) inclusive, ...)

    def mask(self, bird_id: str) -> np.ndarray:
        out = np.zeros(self.video_length, dtype=bool)
        for start, end in self.intervals.get(bird_id, ()):
            out[start : end + 1] = True
        return out

    def birds(self) -> list[str]:
        return sorted(self.intervals)


def _compress(frames: set[int]) -> tuple[tuple[int, int], ...]:
    if not frames:
        return ()
    ordered = sorted(frames)
    intervals = []
    start = prev = ordered[0]
    for f in ordered[1:]:
        if f == prev + 1:
            prev = f
            continue
        intervals.append((start, prev))
        start = prev = f
    intervals.append((start, prev))
    return tuple(intervals)


def presence_timeline(tracklets: Iterable[Tracklet], video_length: int) -> PresenceTimeline:
    """Union each bird's tracklet frames into disjoint sorted intervals."""
    per_bird: dict[str, set[int]] = {}
    for track in tracklets:
        if track.bird_id is None:
            continue
        if track.last_frame >= video_length:
            raise SchemaError(
                f"track {track.track_id!r} reaches frame {track.last_frame}, "
                f"video has only {video_length}"
            )
        per_bird.setdefault(track.bird_id, set()).update(track.frame_set())
    return PresenceTimeline(
        video_length=video_length,
        intervals={bird: _compress(frames) for bird, frames in per_bird.items()},
    )


# --- file formats -----------------------------------------------------------

def _parse_track_id(raw: str) -> int | str:
    try:
        return int(raw)
    except ValueError:
        return raw


def load_tracks(path: str | Path) -> list[Tracklet]:
    """Read a track CSV (``frame,track_id,x,y,w,h,bird_id``; header optional).

    An empty bird_id column means the track is unidentified.  Rows of one
    track must agree on its bird_id.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise SchemaError(f"cannot read track file {path}: {exc}") from exc
    rows = list(csv.reader(text.splitlines()))
    if rows and tuple(v.strip() for v in rows[0]) == TRACK_HEADER:
        rows = rows[1:]
    boxes: dict[int | str, dict[int, BoundingBox]] = {}
    birds: dict[int | str, str | None] = {}
    for lineno, row in enumerate(rows, start=1):
        if not row:
            continue
        if len(row) != len(TRACK_HEADER):
            raise SchemaError(f"{path}:{lineno}: expected {len(TRACK_HEADER)} columns")
        try:
            frame = int(row[0])
            track_id = _parse_track_id(row[1])
            box = BoundingBox(float(row[2]), float(row[3]), float(row[4]), float(row[5]))
        except ValueError as exc:
            raise SchemaError(f"{path}:{lineno}: {exc}") from exc
        bird = row[6].strip() or None
        per_track = boxes.setdefault(track_id, {})
        if frame in per_track:
            raise SchemaError(f"{path}:{lineno}: duplicate frame {frame} in track {track_id!r}")
        per_track[frame] = box
        if track_id in birds and birds[track_id] != bird:
            raise SchemaError(f"{path}:{lineno}: track {track_id!r} has conflicting bird ids")
        birds[track_id] = bird
    return [
        Tracklet.from_boxes(track_id, per_track, birds[track_id])
        for track_id, per_track in sorted(boxes.items(), key=lambda kv: str(kv[0]))
    ]


def save_tracks(tracks: Iterable[Tracklet], path: str | Path) -> None:
    lines = [",".join(TRACK_HEADER)]
    for track in tracks:
        for frame, box in track.frames:
            bird = track.bird_id if track.bird_id is not None else ""
            lines.append(
                f"{frame},{track.track_id},{box.x},{box.y},{box.w},{box.h},{bird}"
            )
    Path(path).write_text("\n".join(lines) + "\n")


def load_pecks(path: str | Path, video_length: int | None = None) -> list[PeckEvent]:
    """Read a peck CSV (``frame,bird_id``; header optional)."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise SchemaError(f"cannot read peck file {path}: {exc}") from exc
    rows = list(csv.reader(text.splitlines()))
    if rows and tuple(v.strip() for v in rows[0]) == PECK_HEADER:
        rows = rows[1:]
    pecks = []
    for lineno, row in enumerate(rows, start=1):
        if not row:
            continue
        if len(row) != 2:
            raise SchemaError(f"{path}:{lineno}: expected 2 columns")
        try:
            frame = int(row[0])
        except ValueError as exc:
            raise SchemaError(f"{path}:{lineno}: {exc}") from exc
        if video_length is not None and not (0 <= frame < video_length):
            raise SchemaError(
                f"{path}:{lineno}: peck frame {frame} outside video of {video_length} frames"
            )
        pecks.append(PeckEvent(bird_id=row[1].strip(), frame=frame))
    return pecks


def save_pecks(pecks: Iterable[PeckEvent], path: str | Path) -> None:
    lines = [",".join(PECK_HEADER)]
    for peck in sorted(pecks, key=lambda p: (p.frame, p.bird_id)):
        lines.append(f"{peck.frame},{peck.bird_id}")
    Path(path).write_text("\n".join(lines) + "\n")


@dataclass(frozen=True)
class VideoManifest:
    """Sidecar describing one video: id, fps, length and roster documents."""

    video_id: str
    fps: float
    length_frames: int
    rosters: dict[str, dict] = field(default_factory=dict)  # scope string -> roster doc

    def __post_init__(self) -> None:
        if self.fps <= 0:
            raise SchemaError(f"fps must be positive, got {self.fps}")
        if self.length_frames <= 0:
            raise SchemaError(f"length_frames must be positive, got {self.length_frames}")


def load_manifest(path: str | Path) -> VideoManifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise SchemaError(f"cannot read manifest {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON: {exc}") from exc
    try:
        return VideoManifest(
            video_id=str(doc["video_id"]),
            fps=float(doc["fps"]),
            length_frames=int(doc["length_frames"]),
            rosters=dict(doc.get("rosters", {})),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"{path}: malformed manifest: {exc}") from exc


def save_manifest(manifest: VideoManifest, path: str | Path) -> None:
    doc = {
        "video_id": manifest.video_id,
        "fps": manifest.fps,
        "length_frames": manifest.length_frames,
        "rosters": manifest.rosters,
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


@dataclass
class VideoData:
    """One side of an evaluation: identified tracks plus peck events."""

    tracks: list[Tracklet]
    pecks: list[PeckEvent]

    def birds(self) -> set[str]:
        out = {t.bird_id for t in self.tracks if t.bird_id is not None}
        out.update(p.bird_id for p in self.pecks)
        return out


def peck_covering_tracks(
    truth_pecks: Sequence[PeckEvent], truth_tracks: Sequence[Tracklet]
) -> list[tuple[PeckEvent, int | str | None]]:
    """For each peck, the track_id of its bird's track covering its frame.

    None when no track of that bird spans the peck's frame.  First
    matching track in input order wins, which is unambiguous whenever a
    bird's tracks do not overlap in time.
    """
    frame_sets = [(track, track.frame_set()) for track in truth_tracks]
    covers: list[tuple[PeckEvent, int | str | None]] = []
    for peck in truth_pecks:
        cover = None
        for track, frames in frame_sets:
            if track.bird_id == peck.bird_id and peck.frame in frames:
                cover = track.track_id
                break
        covers.append((peck, cover))
    return covers


def reattribute_pecks(
    truth_pecks: Sequence[PeckEvent],
    truth_tracks: Sequence[Tracklet],
    predicted_tracks: Sequence[Tracklet],
) -> list[PeckEvent]:
    """Re-label pecks through the predicted identity of their covering track.

    Each truth peck is located on the truth track of its bird covering its
    frame; the peck is then attributed to whatever bird the predicted
    track with the same track_id carries.  Pecks whose track has no
    predicted counterpart (or no identity) are dropped, mirroring how an
    id-swapped tracker would mis-report feeding.
    """
    predicted_by_id = {t.track_id: t for t in predicted_tracks}
    out = []
    for peck, cover in peck_covering_tracks(truth_pecks, truth_tracks):
        if cover is None:
            continue
        counterpart = predicted_by_id.get(cover)
        if counterpart is None or counterpart.bird_id is None:
            continue
        out.append(PeckEvent(bird_id=counterpart.bird_id, frame=peck.frame))
    return out
