"""Ring-crop color classification.

A crop of a single leg ring is converted to HSV, resized to 20x20 with
bilinear interpolation (half-pixel centers), summarised as concatenated
per-channel histograms (18 hue + 8 saturation + 8 value bins) and scored
against per-class mean-histogram prototypes.  Class probabilities are the
softmax of negative chi-square distances divided by a temperature.

Crops arrive pre-masked: pixels that are exactly zero in all channels are
background and are excluded from the histograms.  Any other implementation
mapping a crop to a normalized probability vector over the color table can
be plugged in downstream; this one is deterministic and dependency-light.
"""
from __future__ import annotations

import base64
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from matplotlib import colors as mcolors
from PIL import Image

from .errors import MissingClass, SchemaError, UnknownColorCode
from .identity import ColorTable

H_BINS, S_BINS, V_BINS = 18, 8, 8
FEATURE_DIM = H_BINS + S_BINS + V_BINS
RESIZE_SHAPE = (20, 20)


@dataclass(frozen=True)
class RingCrop:
    """A pre-masked RGB crop of one ring plus its source-image location."""

    pixels: np.ndarray
    source_frame: int
    centroid: tuple[float, float]

    def __post_init__(self) -> None:
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise SchemaError("crop must be an HxWx3 raster")
        if self.pixels.shape[0] < 1 or self.pixels.shape[1] < 1:
            raise SchemaError("crop must be at least 1x1")
        cx, cy = self.centroid
        if not (math.isfinite(cx) and math.isfinite(cy)) or cx < 0 or cy < 0:
            raise SchemaError("crop centroid must be finite and non-negative")


def rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    """Convert an 8-bit RGB raster to float HSV with H in [0,360), S,V in [0,1]."""
    arr = np.asarray(rgb, dtype=np.float64) / 255.0
    hsv = mcolors.rgb_to_hsv(arr)
    hsv[..., 0] = (hsv[..., 0] * 360.0) % 360.0
    return hsv


def hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    """Inverse of :func:`rgb_to_hsv`, back to an 8-bit raster."""
    arr = np.array(hsv, dtype=np.float64, copy=True)
    arr[..., 0] = arr[..., 0] / 360.0
    rgb = mcolors.hsv_to_rgb(arr)
    return np.clip(np.round(rgb * 255.0), 0, 255).astype(np.uint8)


def resize_bilinear(img: np.ndarray, out_h: int = RESIZE_SHAPE[0], out_w: int = RESIZE_SHAPE[1]) -> np.ndarray:
    """Bilinear resize with the half-pixel-center convention.

    Output pixel (i,j) samples the source at ((i+0.5)*H/out_h - 0.5,
    (j+0.5)*W/out_w - 0.5), clamped to the image.  A same-size resize is an
    exact identity and constant input stays constant.
    """
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[:2]
    if h < 1 or w < 1:
        raise SchemaError("cannot resize an empty raster")

    def axis_coords(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0.0, n_in - 1.0)
        lo = np.floor(src).astype(np.intp)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, src - lo

    y0, y1, fy = axis_coords(h, out_h)
    x0, x1, fx = axis_coords(w, out_w)
    fy = fy.reshape(-1, 1) if img.ndim == 2 else fy.reshape(-1, 1, 1)
    fx = fx.reshape(1, -1) if img.ndim == 2 else fx.reshape(1, -1, 1)

    top = img[np.ix_(y0, x0)] * (1.0 - fx) + img[np.ix_(y0, x1)] * fx
    bottom = img[np.ix_(y1, x0)] * (1.0 - fx) + img[np.ix_(y1, x1)] * fx
    return top * (1.0 - fy) + bottom * fy


@dataclass(frozen=True)
class HsvHistogram:
    """Concatenated per-channel histograms of a 20x20 HSV raster."""

    counts: np.ndarray
    pixels_counted: int

    @property
    def normalized(self) -> np.ndarray:
        out = self.counts.astype(np.float64)
        for lo, hi in channel_slices():
            total = out[lo:hi].sum()
            if total > 0:
                out[lo:hi] /= total
        return out


def channel_slices() -> tuple[tuple[int, int], tuple[int, int], tuple[int, int]]:
    return (
        (0, H_BINS),
        (H_BINS, H_BINS + S_BINS),
        (H_BINS + S_BINS, FEATURE_DIM),
    )


def extract_histogram(hsv: np.ndarray) -> HsvHistogram:
    """Per-channel histogram of an HSV raster, skipping masked (all-zero) pixels."""
    hsv = np.asarray(hsv, dtype=np.float64)
    flat = hsv.reshape(-1, 3)
    keep = ~np.all(flat == 0.0, axis=1)
    if not keep.any():
        keep = np.ones(len(flat), dtype=bool)  # fully masked crop: count everything
    pix = flat[keep]
    h_counts = np.histogram(pix[:, 0], bins=H_BINS, range=(0.0, 360.0))[0]
    s_counts = np.histogram(pix[:, 1], bins=S_BINS, range=(0.0, 1.0))[0]
    v_counts = np.histogram(pix[:, 2], bins=V_BINS, range=(0.0, 1.0))[0]
    counts = np.concatenate([h_counts, s_counts, v_counts])
    return HsvHistogram(counts=counts, pixels_counted=int(keep.sum()))


def histogram_features(rgb_crop: np.ndarray) -> np.ndarray:
    """Full feature pipeline: RGB crop -> HSV -> 20x20 -> normalized histogram."""
    hsv = rgb_to_hsv(rgb_crop)
    resized = resize_bilinear(hsv) if hsv.shape[:2] != RESIZE_SHAPE else hsv
    return extract_histogram(resized).normalized


def chi_square_distances(features: np.ndarray, prototypes: np.ndarray) -> np.ndarray:
    """Pairwise chi-square distance between feature rows and prototype rows."""
    f = np.asarray(features, dtype=np.float64)[:, None, :]
    p = np.asarray(prototypes, dtype=np.float64)[None, :, :]
    num = (f - p) ** 2
    den = f + p
    terms = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    return terms.sum(axis=2)


@dataclass
class ClassifierModel:
    """Per-class mean-histogram prototypes with softmax scoring."""

    codes: tuple[str, ...]
    prototypes: np.ndarray  # (n_classes, FEATURE_DIM)
    scales: np.ndarray  # (n_classes,), distance divisors, 1.0 from training
    temperature: float
    color_table_hash: str
    metadata: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.temperature <= 0:
            raise SchemaError("temperature must be positive")
        if self.prototypes.shape != (len(self.codes), FEATURE_DIM):
            raise SchemaError("prototype matrix shape does not match class list")

    def predict_features(self, features: np.ndarray) -> np.ndarray:
        """Probability matrix (n_crops, n_classes) for pre-computed features."""
        features = np.atleast_2d(np.asarray(features, dtype=np.float64))
        dist = chi_square_distances(features, self.prototypes) / self.scales[None, :]
        logits = -dist / self.temperature
        logits -= logits.max(axis=1, keepdims=True)
        expd = np.exp(logits)
        return expd / expd.sum(axis=1, keepdims=True)

    def predict_crops(self, crops: list[np.ndarray]) -> np.ndarray:
        feats = np.stack([histogram_features(c) for c in crops])
        return self.predict_features(feats)

    def to_dict(self) -> dict:
        return {
            "format_version": 1,
            "histogram": {
                "h_bins": H_BINS,
                "s_bins": S_BINS,
                "v_bins": V_BINS,
                "resize": list(RESIZE_SHAPE),
            },
            "temperature": self.temperature,
            "color_table_hash": self.color_table_hash,
            "classes": [
                {
                    "code": code,
                    "scale": float(self.scales[i]),
                    "prototype": [float(v) for v in self.prototypes[i]],
                }
                for i, code in enumerate(self.codes)
            ],
            "metadata": self.metadata,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def from_dict(cls, doc: dict, source: str = "<model>") -> "ClassifierModel":
        try:
            if doc["format_version"] != 1:
                raise SchemaError(f"{source}: unsupported model format {doc['format_version']}")
            hist = doc["histogram"]
            if (hist["h_bins"], hist["s_bins"], hist["v_bins"]) != (H_BINS, S_BINS, V_BINS):
                raise SchemaError(f"{source}: unsupported histogram binning")
            codes = tuple(c["code"] for c in doc["classes"])
            prototypes = np.array([c["prototype"] for c in doc["classes"]], dtype=np.float64)
            scales = np.array([c["scale"] for c in doc["classes"]], dtype=np.float64)
            return cls(
                codes=codes,
                prototypes=prototypes,
                scales=scales,
                temperature=float(doc["temperature"]),
                color_table_hash=str(doc["color_table_hash"]),
                metadata=doc.get("metadata", {}),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"{source}: malformed model file: {exc}") from exc

    @classmethod
    def load(cls, path: str | Path) -> "ClassifierModel":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except OSError as exc:
            raise SchemaError(f"cannot read model {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: invalid JSON: {exc}") from exc
        return cls.from_dict(doc, source=str(path))


def train(
    samples: list[tuple[np.ndarray, str]],
    table: ColorTable,
    temperature: float = 1.0,
) -> ClassifierModel:
    """Fit per-class prototypes from labeled crops.

    Every class in the table needs at least one sample; the prototype is the
    mean normalized histogram of its samples, so training is deterministic
    for a fixed sample order.
    """
    by_code: dict[str, list[np.ndarray]] = {code: [] for code in table.codes}
    for crop, label in samples:
        if label not in by_code:
            raise UnknownColorCode(f"sample labeled with unknown color code {label!r}")
        by_code[label].append(histogram_features(crop))
    missing = [code for code, feats in by_code.items() if not feats]
    if missing:
        raise MissingClass(f"no training samples for classes: {missing}")
    prototypes = np.stack([np.mean(by_code[code], axis=0) for code in table.codes])
    return ClassifierModel(
        codes=table.codes,
        prototypes=prototypes,
        scales=np.ones(len(table.codes)),
        temperature=temperature,
        color_table_hash=table.sha256(),
        metadata={"n_samples": {code: len(by_code[code]) for code in table.codes}},
    )


def predict(model: ClassifierModel, crop: np.ndarray | RingCrop) -> dict[str, float]:
    """Probability of each color class for one crop, keyed by color code."""
    pixels = crop.pixels if isinstance(crop, RingCrop) else crop
    probs = model.predict_crops([pixels])[0]
    return {code: float(p) for code, p in zip(model.codes, probs)}


# --- crop (de)serialization used by clip files and manifests ---

def crop_to_png_base64(crop: np.ndarray) -> str:
    buf = io.BytesIO()
    Image.fromarray(np.asarray(crop, dtype=np.uint8), mode="RGB").save(
        buf, format="PNG", compress_level=1
    )
    return base64.b64encode(buf.getvalue()).decode("ascii")


def crop_from_png_base64(payload: str) -> np.ndarray:
    try:
        raw = base64.b64decode(payload.encode("ascii"), validate=True)
        img = Image.open(io.BytesIO(raw)).convert("RGB")
    except Exception as exc:
        raise SchemaError(f"undecodable inline crop: {exc}") from exc
    return np.asarray(img, dtype=np.uint8)


def load_crop(path: str | Path) -> np.ndarray:
    try:
        img = Image.open(path).convert("RGB")
    except OSError as exc:
        raise SchemaError(f"cannot read crop image {path}: {exc}") from exc
    return np.asarray(img, dtype=np.uint8)


def save_crop(crop: np.ndarray, path: str | Path) -> None:
    Image.fromarray(np.asarray(crop, dtype=np.uint8), mode="RGB").save(
        path, format="PNG", compress_level=1
    )


def load_crop_manifest(path: str | Path) -> list[tuple[np.ndarray, str]]:
    """Read a labeled-crop manifest (JSON lines of ``{"image":…, "label":…}``).

    Image paths are resolved relative to the manifest's directory.
    """
    path = Path(path)
    samples = []
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise SchemaError(f"cannot read crop manifest {path}: {exc}") from exc
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
        if not isinstance(record, dict) or "image" not in record or "label" not in record:
            raise SchemaError(f"{path}:{lineno}: records need 'image' and 'label'")
        crop = load_crop(path.parent / record["image"])
        samples.append((crop, str(record["label"])))
    return samples
