"""Synthetic localizer phantoms, training-time augmentation, and dataset I/O.

A phantom stack is a bright body ellipse (constant across slices, with
additive noise) containing a few interior "organ" ellipses whose
cross-sections swell and shrink smoothly along the slice axis.  The label
is the bounding box of the organs at full extent, dilated by a margin and
clipped inside the body, snapped outward to integer pixel coordinates.

A fraction of slices are degraded by a simulated acquisition artifact
(signal attenuation plus heavy broadband noise), as happens in real
localizer stacks; at least one slice per stack is always left clean.  The
label is geometric and unaffected, so a good predictor must discount the
degraded slices.

Datasets persist as a manifest.json plus one 8-bit binary PGM per slice.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import netpbm
from .errors import (
    DataError,
    LabelBoundsError,
    ManifestError,
    MissingSliceError,
    SplitOverlapError,
)
from .geometry import Box, ROWS

SPLITS = ("train", "val", "test")
SPLIT_FRACTIONS = (0.7, 0.1, 0.2)

# shift sets specified for 512-pixel images; scaled to the working size
BASE_SHIFTS_X = (-10, -5, 0, 5, 10)
BASE_SHIFTS_Y = (-20, -10, 0, 10, 20)
BASE_SIZE = 512


def shift_sets(size: int):
    sx = sorted({round(v * size / BASE_SIZE) for v in BASE_SHIFTS_X})
    sy = sorted({round(v * size / BASE_SIZE) for v in BASE_SHIFTS_Y})
    return tuple(sx), tuple(sy)


@dataclass(frozen=True)
class PhantomSpec:
    size: int = 64
    min_slices: int = 3
    max_slices: int = 8
    body_half_axes: tuple = (0.30, 0.45)     # fraction of size
    body_jitter: float = 0.04                # center jitter, fraction of size
    organ_count: tuple = (2, 4)
    organ_half_axes: tuple = (0.05, 0.15)    # fraction of size
    roi_margin: float = 2.0                  # pixels
    noise: float = 6.0                       # additive amplitude on 0..255
    artifact_prob: float = 0.2               # per-slice degradation probability
    artifact_noise: float = 80.0             # artifact noise amplitude on 0..255
    seed: int = 0

    def __post_init__(self):
        if not (1 <= self.min_slices <= self.max_slices):
            raise DataError("invalid slice-count range")
        if not (0.0 <= self.artifact_prob < 1.0):
            raise DataError("artifact_prob must be in [0, 1)")
        if self.organ_half_axes[1] >= self.body_half_axes[0]:
            raise DataError("infeasible spec: organ larger than body")


@dataclass(eq=False)
class DatasetRecord:
    stack_id: str
    slices: np.ndarray            # (S, H, W) uint8
    phase_encode_axis: str
    label: Box
    split: str
    provenance: dict = field(default_factory=dict)

    @property
    def height(self) -> int:
        return self.slices.shape[1]

    @property
    def width(self) -> int:
        return self.slices.shape[2]

    def __eq__(self, other):
        return (
            isinstance(other, DatasetRecord)
            and self.stack_id == other.stack_id
            and self.phase_encode_axis == other.phase_encode_axis
            and self.label == other.label
            and self.split == other.split
            and self.provenance == other.provenance
            and self.slices.shape == other.slices.shape
            and bool(np.all(self.slices == other.slices))
        )


def _ellipse(yy, xx, cy, cx, ay, ax):
    return ((yy - cy) / ay) ** 2 + ((xx - cx) / ax) ** 2 <= 1.0


def generate_phantom(spec: PhantomSpec, index: int, split: str = "train") -> DatasetRecord:
    """Deterministic record from (spec.seed, index)."""
    rng = np.random.default_rng([spec.seed, index])
    size = spec.size
    n_slices = int(rng.integers(spec.min_slices, spec.max_slices + 1))

    jitter = spec.body_jitter * size
    cy = size / 2 + rng.uniform(-jitter, jitter)
    cx = size / 2 + rng.uniform(-jitter, jitter)
    ay = rng.uniform(*spec.body_half_axes) * size
    ax = rng.uniform(*spec.body_half_axes) * size
    ay = min(ay, cy - 1.0, size - 1.0 - cy)
    ax = min(ax, cx - 1.0, size - 1.0 - cx)
    base = rng.uniform(150.0, 220.0)

    inset = spec.roi_margin + 2.0  # keeps the label strictly inside the body mask
    organs = []
    n_organs = int(rng.integers(spec.organ_count[0], spec.organ_count[1] + 1))
    for _ in range(n_organs):
        oy = rng.uniform(*spec.organ_half_axes) * size
        ox = rng.uniform(*spec.organ_half_axes) * size
        oy = min(oy, ay - inset - 0.5)
        ox = min(ox, ax - inset - 0.5)
        if oy <= 0 or ox <= 0:
            raise DataError("infeasible spec: organ larger than body")
        ocy = rng.uniform(cy - ay + oy + inset, cy + ay - oy - inset)
        ocx = rng.uniform(cx - ax + ox + inset, cx + ax - ox - inset)
        delta = float(rng.choice([-1.0, 1.0])) * rng.uniform(35.0, 85.0)
        center_slice = int(rng.integers(0, n_slices))
        # wide profile: every slice shows most of the organ's full extent
        depth = rng.uniform(2.5, 4.0) * n_slices
        organs.append((ocy, ocx, oy, ox, delta, center_slice, depth))

    yy, xx = np.ogrid[0:size, 0:size]
    body = _ellipse(yy, xx, cy, cx, ay, ax)
    noise = rng.uniform(0.0, spec.noise, size=(n_slices, size, size))
    slices = np.empty((n_slices, size, size), dtype=np.uint8)
    for k in range(n_slices):
        img = body * base
        for ocy, ocx, oy, ox, delta, c, depth in organs:
            scale = math.sqrt(max(0.0, 1.0 - ((k - c) / depth) ** 2))
            if scale <= 0.0:
                continue
            img = img + delta * _ellipse(yy, xx, ocy, ocx, oy * scale, ox * scale)
        img = img + noise[k] * body
        slices[k] = np.clip(img, 0.0, 255.0).astype(np.uint8)

    # degrade a random subset of slices, always keeping one clean
    clean_k = int(rng.integers(0, n_slices))
    for k in range(n_slices):
        degrade = rng.random() < spec.artifact_prob
        attenuation = rng.uniform(0.1, 0.35)
        artifact = rng.uniform(0.0, spec.artifact_noise, size=(size, size))
        if degrade and k != clean_k:
            img = slices[k] * attenuation + artifact
            slices[k] = np.clip(img, 0.0, 255.0).astype(np.uint8)

    top = min(o[0] - o[2] for o in organs) - spec.roi_margin
    bottom = max(o[0] + o[2] for o in organs) + spec.roi_margin
    left = min(o[1] - o[3] for o in organs) - spec.roi_margin
    right = max(o[1] + o[3] for o in organs) + spec.roi_margin
    top = max(top, cy - ay)
    bottom = min(bottom, cy + ay)
    left = max(left, cx - ax)
    right = min(right, cx + ax)
    label = Box(
        float(math.floor(top)), float(math.ceil(bottom)),
        float(math.floor(left)), float(math.ceil(right)),
    )

    return DatasetRecord(
        stack_id=f"stack_{index:05d}",
        slices=slices,
        phase_encode_axis=ROWS,
        label=label,
        split=split,
        provenance={"seed": spec.seed, "index": index},
    )


def assign_splits(ids):
    """Deterministic 70/10/20 split: rank ids by md5 hash, slice by fraction."""
    ranked = sorted(ids, key=lambda i: hashlib.md5(str(i).encode()).hexdigest())
    n = len(ranked)
    n_train = round(SPLIT_FRACTIONS[0] * n)
    n_val = round(SPLIT_FRACTIONS[1] * n)
    out = {}
    for pos, stack_id in enumerate(ranked):
        if pos < n_train:
            out[stack_id] = "train"
        elif pos < n_train + n_val:
            out[stack_id] = "val"
        else:
            out[stack_id] = "test"
    return out


def generate_dataset(spec: PhantomSpec, count: int):
    ids = [f"stack_{i:05d}" for i in range(count)]
    splits = assign_splits(ids)
    return [
        generate_phantom(spec, i, split=splits[f"stack_{i:05d}"])
        for i in range(count)
    ]


def augment_flip(record: DatasetRecord) -> DatasetRecord:
    """Mirror every slice left-right and transform the label to match."""
    w = record.width
    label = Box(
        record.label.top, record.label.bottom,
        w - record.label.right, w - record.label.left,
    )
    prov = dict(record.provenance)
    if prov.pop("flipped", False):
        stack_id = record.stack_id.removesuffix("_flip")
    else:
        prov["flipped"] = True
        stack_id = record.stack_id + "_flip"
    return replace(
        record,
        stack_id=stack_id,
        slices=record.slices[:, :, ::-1].copy(),
        label=label,
        provenance=prov,
    )


def augment_cyclic_shift(record: DatasetRecord, dx: int, dy: int):
    """Cyclically shift pixels by (dx, dy) and move the label with them.

    Returns (record, accepted).  A shift that would push any label boundary
    outside the image is rejected and the record comes back unchanged.
    """
    h, w = record.height, record.width
    shifted = record.label.shift(dy, dx)
    if shifted.top < 0 or shifted.bottom > h or shifted.left < 0 or shifted.right > w:
        return record, False
    if dx == 0 and dy == 0:
        return record, True
    prov = dict(record.provenance)
    sx, sy = prov.pop("shift", [0, 0])
    if (sx + dx, sy + dy) != (0, 0):
        prov["shift"] = [sx + dx, sy + dy]
    return replace(
        record,
        slices=np.roll(record.slices, (dy, dx), axis=(1, 2)),
        label=shifted,
        provenance=prov,
    ), True


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

MANIFEST_NAME = "manifest.json"
SLICE_DIR = "slices"


def save_dataset(records, directory, extra: dict | None = None):
    os.makedirs(os.path.join(directory, SLICE_DIR), exist_ok=True)
    entries = []
    for rec in records:
        names = []
        for k in range(rec.slices.shape[0]):
            name = f"{rec.stack_id}_{k}.pgm"
            netpbm.write_pgm(os.path.join(directory, SLICE_DIR, name), rec.slices[k])
            names.append(name)
        entries.append({
            "id": rec.stack_id,
            "slices": names,
            "height": rec.height,
            "width": rec.width,
            "phase_encode_axis": rec.phase_encode_axis,
            "label": list(rec.label.as_tuple()),
            "split": rec.split,
            "provenance": rec.provenance,
        })
    manifest = {"format": "scanscribe-dataset", "version": 1, "records": entries}
    if extra:
        manifest.update(extra)
    with open(os.path.join(directory, MANIFEST_NAME), "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
        f.write("\n")


def load_dataset(directory):
    path = os.path.join(directory, MANIFEST_NAME)
    try:
        with open(path) as f:
            manifest = json.load(f)
    except FileNotFoundError as exc:
        raise ManifestError(f"no manifest at {path}") from exc
    except json.JSONDecodeError as exc:
        raise ManifestError(f"malformed manifest: {exc}") from exc
    if manifest.get("format") != "scanscribe-dataset":
        raise ManifestError("not a scanscribe dataset manifest")

    records = []
    seen = {}
    for entry in manifest.get("records", []):
        try:
            stack_id = entry["id"]
            h, w = int(entry["height"]), int(entry["width"])
            label_vals = entry["label"]
            split = entry["split"]
            slice_names = entry["slices"]
            axis = entry["phase_encode_axis"]
        except (KeyError, TypeError) as exc:
            raise ManifestError(f"malformed manifest record: {exc}") from exc
        if split not in SPLITS:
            raise ManifestError(f"unknown split {split!r} for {stack_id}")
        if stack_id in seen:
            raise SplitOverlapError(
                f"split overlap: {stack_id} listed in {seen[stack_id]} and {split}")
        seen[stack_id] = split
        label = Box(*[float(v) for v in label_vals])
        if label.top < 0 or label.bottom > h or label.left < 0 or label.right > w:
            raise LabelBoundsError(f"label out of bounds for {stack_id}")
        slices = np.empty((len(slice_names), h, w), dtype=np.uint8)
        for k, name in enumerate(slice_names):
            slice_path = os.path.join(directory, SLICE_DIR, name)
            if not os.path.exists(slice_path):
                raise MissingSliceError(f"missing slice {name}")
            img = netpbm.read_pgm(slice_path)
            if img.shape != (h, w):
                raise ManifestError(
                    f"slice {name} is {img.shape}, manifest says {(h, w)}")
            slices[k] = img
        records.append(DatasetRecord(
            stack_id=stack_id,
            slices=slices,
            phase_encode_axis=axis,
            label=label,
            split=split,
            provenance=entry.get("provenance", {}),
        ))
    return records


def split_records(records, split: str):
    return [r for r in records if r.split == split]
