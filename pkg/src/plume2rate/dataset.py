"""Sample assembly: normalization, augmentation, corpus merging and splits."""

from __future__ import annotations

import datetime as dt
import json
from dataclasses import dataclass, field as dc_field, replace
from enum import Enum
from pathlib import Path

import numpy as np
from scipy.ndimage import map_coordinates

from .core_grid import Channel
from .errors import (
    EmptyDataset,
    InvalidAugment,
    SchemaError,
    UnbinnedSample,
)

CHANNEL_ORDER = (Channel.XCO2, Channel.NO2, Channel.WIND_U, Channel.WIND_V)
WIND_U_IDX = 2
WIND_V_IDX = 3


class Source(str, Enum):
    SIMULATED = "SIMULATED"
    SATELLITE = "SATELLITE"


class Split(str, Enum):
    TRAIN = "TRAIN"
    VALID = "VALID"
    TEST = "TEST"


@dataclass(frozen=True)
class Sample:
    """One 4-channel 64x64 feature patch with its scalar emission target."""

    PATCH_SIZE = 64
    N_CHANNELS = 4

    features: np.ndarray            # (4, 64, 64) float32, channel order per CHANNEL_ORDER
    target_mt_per_yr: float
    plant_id: str
    date: dt.date
    source: Source
    cell_size_km: float

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float32)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "source", Source(self.source))
        if feats.shape != (self.N_CHANNELS, self.PATCH_SIZE, self.PATCH_SIZE):
            raise SchemaError(f"features must be (4, 64, 64), got {feats.shape}")
        if not np.isfinite(feats).all():
            raise SchemaError("features must be finite")
        if not self.target_mt_per_yr > 0:
            raise SchemaError("target_mt_per_yr must be positive")

    @property
    def sample_id(self) -> str:
        return f"{self.plant_id}_{self.date:%Y%m%d}_{self.source.value[:3].lower()}"


@dataclass(frozen=True)
class NormStats:
    """Per-channel min/max envelopes fitted on the training split."""

    mins: np.ndarray    # (4,)
    maxs: np.ndarray    # (4,)

    def __post_init__(self):
        mins = np.asarray(self.mins, dtype=np.float64)
        maxs = np.asarray(self.maxs, dtype=np.float64)
        object.__setattr__(self, "mins", mins)
        object.__setattr__(self, "maxs", maxs)
        if mins.shape != (Sample.N_CHANNELS,) or maxs.shape != (Sample.N_CHANNELS,):
            raise ValueError("stats need one (min, max) pair per channel")
        if not (np.isfinite(mins).all() and np.isfinite(maxs).all()):
            raise ValueError("stats must be finite")
        if (maxs < mins).any():
            raise ValueError("max must be >= min per channel")


def fit_norm_stats(train: list[Sample]) -> NormStats:
    """Per-channel min/max over every pixel of the training samples."""
    if not train:
        raise EmptyDataset("cannot fit normalization stats on an empty training list")
    stacked = np.stack([s.features for s in train])  # (n, 4, 64, 64)
    return NormStats(
        mins=stacked.min(axis=(0, 2, 3)).astype(np.float64),
        maxs=stacked.max(axis=(0, 2, 3)).astype(np.float64),
    )


def normalize(sample: Sample, stats: NormStats) -> Sample:
    """Min-max rescale each channel; a degenerate channel (max == min) maps to 0.

    The target stays in physical Mt/yr. Values outside the fitted envelope
    (validation/test pixels) are not clipped.
    """
    span = stats.maxs - stats.mins
    span = np.where(span == 0.0, 1.0, span)
    shifted = sample.features.astype(np.float64) - stats.mins[:, None, None]
    shifted = np.where((stats.maxs - stats.mins)[:, None, None] == 0.0, 0.0, shifted)
    return replace(sample, features=(shifted / span[:, None, None]).astype(np.float32))


def denormalize(sample: Sample, stats: NormStats) -> Sample:
    """Inverse of normalize; degenerate channels return to their min."""
    span = stats.maxs - stats.mins
    restored = sample.features.astype(np.float64) * span[:, None, None] + stats.mins[:, None, None]
    return replace(sample, features=restored.astype(np.float32))


class AugmentKind(str, Enum):
    ROT90 = "ROT90"
    FLIP_H = "FLIP_H"
    FLIP_V = "FLIP_V"
    ZOOM = "ZOOM"


@dataclass(frozen=True)
class AugmentOp:
    kind: AugmentKind
    k: int = 1              # ROT90 steps, 1..3
    scale: float = 1.0      # ZOOM factor, 0.9..1.1

    def __post_init__(self):
        object.__setattr__(self, "kind", AugmentKind(self.kind))
        if self.kind is AugmentKind.ROT90 and self.k not in (1, 2, 3):
            raise InvalidAugment(f"ROT90 steps must be 1..3, got {self.k}")
        if self.kind is AugmentKind.ZOOM and not 0.9 <= self.scale <= 1.1:
            raise InvalidAugment(f"zoom scale must lie in [0.9, 1.1], got {self.scale}")


def _zoom_channel(arr: np.ndarray, scale: float) -> np.ndarray:
    # output pixel (i, j) samples the input at c + (idx - c) / scale; for
    # scale < 1 the sampled window exceeds the patch and clamps to the edge
    n = arr.shape[0]
    c = (n - 1) / 2.0
    pos = c + (np.arange(n) - c) / scale
    coords = np.meshgrid(pos, pos, indexing="ij")
    return map_coordinates(arr.astype(np.float64), coords, order=1, mode="nearest")


def augment(sample: Sample, op: AugmentOp) -> Sample:
    """Geometrically transform a sample, co-transforming the wind vectors.

    ROT90 is counterclockwise in the grid's (x right, y up) frame; each step
    maps wind (u, v) -> (-v, u) pointwise after the spatial rotation. FLIP_H
    mirrors x and negates u, FLIP_V mirrors y and negates v. ZOOM rescales
    geometry only, leaving wind values as-is. Targets never change.
    """
    feats = sample.features
    if op.kind is AugmentKind.ROT90:
        # row index runs along +y here, so a physical CCW step is rot90(k=-1)
        out = np.rot90(feats, k=-op.k, axes=(1, 2)).copy()
        for _ in range(op.k):
            u = out[WIND_U_IDX].copy()
            out[WIND_U_IDX] = -out[WIND_V_IDX]
            out[WIND_V_IDX] = u
    elif op.kind is AugmentKind.FLIP_H:
        out = feats[:, :, ::-1].copy()
        out[WIND_U_IDX] = -out[WIND_U_IDX]
    elif op.kind is AugmentKind.FLIP_V:
        out = feats[:, ::-1, :].copy()
        out[WIND_V_IDX] = -out[WIND_V_IDX]
    elif op.kind is AugmentKind.ZOOM:
        out = np.stack([_zoom_channel(ch, op.scale) for ch in feats]).astype(np.float32)
    else:  # pragma: no cover
        raise InvalidAugment(f"unknown augment kind {op.kind}")
    return replace(sample, features=out)


@dataclass(frozen=True)
class SplitManifest:
    """Seeded assignment of every sample id to exactly one split."""

    assignments: dict[str, Split]
    bin_edges: tuple[float, ...]
    ratios: tuple[float, float, float]
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "assignments", {k: Split(v) for k, v in self.assignments.items()})
        object.__setattr__(self, "bin_edges", tuple(float(e) for e in self.bin_edges))
        object.__setattr__(self, "ratios", tuple(float(r) for r in self.ratios))
        if len(self.ratios) != 3 or any(r < 0 for r in self.ratios):
            raise ValueError("ratios must be 3 nonnegative reals")
        if abs(sum(self.ratios) - 1.0) > 1e-9:
            raise ValueError("ratios must sum to 1")

    def ids_for(self, split: Split) -> list[str]:
        return sorted(k for k, v in self.assignments.items() if v is split)


DEFAULT_BIN_EDGES = (0.0, 5.0, 10.0, 15.0, 20.0, 30.0, 60.0)
DEFAULT_RATIOS = (0.70, 0.15, 0.15)


def _bin_index(target: float, edges: tuple[float, ...]) -> int:
    n_bins = len(edges) - 1
    if target < edges[0] or target > edges[-1]:
        return -1
    if target == edges[-1]:
        return n_bins - 1          # last bin is right-closed
    return int(np.searchsorted(edges, target, side="right")) - 1


def _largest_remainder(n: int, ratios: tuple[float, float, float]) -> list[int]:
    exact = [r * n for r in ratios]
    base = [int(np.floor(e)) for e in exact]
    leftovers = n - sum(base)
    fractions = [e - b for e, b in zip(exact, base)]
    order = sorted(range(3), key=lambda i: (-fractions[i], i))
    for i in order[:leftovers]:
        base[i] += 1
    return base


def stratified_redistribution(
    samples: list[Sample],
    bin_edges: tuple[float, ...] = DEFAULT_BIN_EDGES,
    ratios: tuple[float, float, float] = DEFAULT_RATIOS,
    seed: int = 0,
) -> SplitManifest:
    """Allocate samples to train/valid/test within each emission bin.

    Samples in a bin are shuffled with the seeded generator and cut into
    contiguous blocks sized by largest-remainder rounding of the ratios, so
    each bin's split shares deviate from the exact ratios by at most one
    sample. Deterministic for a fixed seed.
    """
    edges = tuple(float(e) for e in bin_edges)
    if len(edges) < 2 or any(b <= a for a, b in zip(edges, edges[1:])):
        raise ValueError("bin_edges must be ascending with at least two entries")

    ids = [s.sample_id for s in samples]
    if len(set(ids)) != len(ids):
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        raise ValueError(f"duplicate sample ids: {dupes[:5]}")

    by_bin: dict[int, list[str]] = {}
    unbinned = []
    for s in samples:
        b = _bin_index(s.target_mt_per_yr, edges)
        if b < 0:
            unbinned.append(s.sample_id)
        else:
            by_bin.setdefault(b, []).append(s.sample_id)
    if unbinned:
        raise UnbinnedSample(f"targets outside bins {edges}: {unbinned[:10]}")

    rng = np.random.default_rng(seed)
    assignments: dict[str, Split] = {}
    for b in sorted(by_bin):
        members = by_bin[b]
        perm = rng.permutation(len(members))
        shuffled = [members[i] for i in perm]
        n_train, n_valid, _ = _largest_remainder(len(members), tuple(ratios))
        for pos, sid in enumerate(shuffled):
            if pos < n_train:
                assignments[sid] = Split.TRAIN
            elif pos < n_train + n_valid:
                assignments[sid] = Split.VALID
            else:
                assignments[sid] = Split.TEST

    return SplitManifest(assignments=assignments, bin_edges=edges, ratios=tuple(ratios), seed=seed)


def merge_datasets(simulated: list[Sample], satellite: list[Sample]) -> list[Sample]:
    """Concatenate corpora; per-sample cell_size_km and source tags survive.

    No resampling happens: both corpora are already 64x64 patches and the
    models consume fixed-size patches regardless of physical footprint.
    """
    merged = list(simulated) + list(satellite)
    for s in merged:
        if s.features.shape != (Sample.N_CHANNELS, Sample.PATCH_SIZE, Sample.PATCH_SIZE):
            raise SchemaError(f"sample {s.sample_id} has shape {s.features.shape}")
    return merged


def split_samples(samples: list[Sample], manifest: SplitManifest) -> dict[Split, list[Sample]]:
    """Group samples by their manifest assignment."""
    out: dict[Split, list[Sample]] = {sp: [] for sp in Split}
    for s in samples:
        sid = s.sample_id
        if sid not in manifest.assignments:
            raise ValueError(f"manifest does not cover sample {sid}")
        out[manifest.assignments[sid]].append(s)
    return out


def dataset_histogram(
    samples: list[Sample],
    manifest: SplitManifest,
    bin_edges: tuple[float, ...],
) -> np.ndarray:
    """Counts per (emission bin, split); rows are bins, columns TRAIN/VALID/TEST."""
    edges = tuple(float(e) for e in bin_edges)
    counts = np.zeros((len(edges) - 1, 3), dtype=int)
    split_col = {Split.TRAIN: 0, Split.VALID: 1, Split.TEST: 2}
    for s in samples:
        sid = s.sample_id
        if sid not in manifest.assignments:
            raise ValueError(f"manifest does not cover sample {sid}")
        b = _bin_index(s.target_mt_per_yr, edges)
        if b < 0:
            raise UnbinnedSample(f"sample {sid} target {s.target_mt_per_yr} outside bins")
        counts[b, split_col[manifest.assignments[sid]]] += 1
    return counts


def render_histogram(counts: np.ndarray, bin_edges: tuple[float, ...]) -> str:
    lines = [f"{'bin (Mt/yr)':>16}  {'TRAIN':>6} {'VALID':>6} {'TEST':>6}"]
    for b in range(counts.shape[0]):
        label = f"[{bin_edges[b]:g}, {bin_edges[b + 1]:g})"
        if b == counts.shape[0] - 1:
            label = label[:-1] + "]"
        lines.append(f"{label:>16}  {counts[b, 0]:>6d} {counts[b, 1]:>6d} {counts[b, 2]:>6d}")
    total = counts.sum(axis=0)
    lines.append(f"{'total':>16}  {total[0]:>6d} {total[1]:>6d} {total[2]:>6d}")
    return "\n".join(lines)


# dataset directory layout:
#   <root>/samples/<id>.f32   float32 LE, channel-major (4, 64, 64)
#   <root>/samples/<id>.json  target + provenance
#   <root>/manifest.json, <root>/normstats.json

def save_samples(samples: list[Sample], root: str | Path) -> None:
    root = Path(root)
    (root / "samples").mkdir(parents=True, exist_ok=True)
    for s in samples:
        stem = root / "samples" / s.sample_id
        s.features.astype("<f4").tofile(stem.with_suffix(".f32"))
        meta = {
            "target_mt_per_yr": s.target_mt_per_yr,
            "plant_id": s.plant_id,
            "date": s.date.isoformat(),
            "source": s.source.value,
            "cell_size_km": s.cell_size_km,
        }
        with open(stem.with_suffix(".json"), "w") as f:
            json.dump(meta, f, indent=2, sort_keys=True)


def load_samples(root: str | Path) -> list[Sample]:
    root = Path(root)
    samples = []
    for meta_path in sorted((root / "samples").glob("*.json")):
        with open(meta_path) as f:
            meta = json.load(f)
        feats = np.fromfile(meta_path.with_suffix(".f32"), dtype="<f4").reshape(
            Sample.N_CHANNELS, Sample.PATCH_SIZE, Sample.PATCH_SIZE
        )
        samples.append(Sample(
            features=feats,
            target_mt_per_yr=float(meta["target_mt_per_yr"]),
            plant_id=meta["plant_id"],
            date=dt.date.fromisoformat(meta["date"]),
            source=Source(meta["source"]),
            cell_size_km=float(meta["cell_size_km"]),
        ))
    return samples


def save_manifest(manifest: SplitManifest, path: str | Path) -> None:
    doc = {
        "assignments": {k: v.value for k, v in sorted(manifest.assignments.items())},
        "bin_edges": list(manifest.bin_edges),
        "ratios": list(manifest.ratios),
        "seed": manifest.seed,
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)


def load_manifest(path: str | Path) -> SplitManifest:
    with open(path) as f:
        doc = json.load(f)
    return SplitManifest(
        assignments={k: Split(v) for k, v in doc["assignments"].items()},
        bin_edges=tuple(doc["bin_edges"]),
        ratios=tuple(doc["ratios"]),
        seed=int(doc["seed"]),
    )


def save_norm_stats(stats: NormStats, path: str | Path) -> None:
    doc = {
        "channels": [c.value for c in CHANNEL_ORDER],
        "min": stats.mins.tolist(),
        "max": stats.maxs.tolist(),
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=2)


def load_norm_stats(path: str | Path) -> NormStats:
    with open(path) as f:
        doc = json.load(f)
    return NormStats(mins=np.array(doc["min"]), maxs=np.array(doc["max"]))
