"""Synthetic cross-modal data, zero-shot class splits, and binary storage.

Every instance is a feature vector tagged with a class id and a modality
flag (0 = sketch, 1 = image). The generator plants one unit-sphere
prototype per class and one global offset per modality, so the gap between
modalities is structured and learnable rather than random per class.

Storage is a little-endian binary format built for bit-exact round trips;
externally computed features in the same layout load identically.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, FormatError, LabelError, ShapeError, VersionError
from .model import IMAGE, SKETCH

__all__ = [
    "CrossModalDataset",
    "SeenUnseenSplit",
    "generate_synthetic",
    "make_split",
    "save_dataset",
    "load_dataset",
]

MAGIC = b"OANDS1"
_HEADER = struct.Struct("<III")  # instances, d_in, classes
_RECORD_META = struct.Struct("<IB")  # class_id, modality


class CrossModalDataset:
    """Immutable feature/label/modality triples covering every class twice.

    Each class must contribute at least one sketch and one image; a class
    that cannot be both queried and retrieved has no place in the task.
    """

    def __init__(self, features, class_ids, modality, num_classes: int | None = None):
        self.features = np.ascontiguousarray(np.asarray(features, dtype=np.float64))
        self.class_ids = np.asarray(class_ids, dtype=np.intp)
        self.modality = np.asarray(modality, dtype=np.intp)
        if self.features.ndim != 2:
            raise ShapeError(f"features must be 2-D, got shape {self.features.shape}")
        n = self.features.shape[0]
        if self.class_ids.shape != (n,) or self.modality.shape != (n,):
            raise ShapeError(
                f"{n} feature rows need matching class_ids/modality, got "
                f"{self.class_ids.shape} and {self.modality.shape}"
            )
        if n == 0:
            raise ShapeError("dataset has no instances")
        if self.modality.size and not np.isin(self.modality, (SKETCH, IMAGE)).all():
            raise LabelError("modality flags must be 0 (sketch) or 1 (image)")
        if (self.class_ids < 0).any():
            raise LabelError("class ids must be non-negative")
        top = int(self.class_ids.max())
        self.num_classes = int(num_classes) if num_classes is not None else top + 1
        if top >= self.num_classes:
            raise LabelError(f"class id {top} out of range for {self.num_classes} classes")
        for c in range(self.num_classes):
            mine = self.modality[self.class_ids == c]
            if not ((mine == SKETCH).any() and (mine == IMAGE).any()):
                raise LabelError(f"class {c} needs at least one sketch and one image")
        self.features.setflags(write=False)
        self.class_ids.setflags(write=False)
        self.modality.setflags(write=False)

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def d_in(self) -> int:
        return self.features.shape[1]

    def subset(self, mask) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(features, class_ids, modality) rows selected by a boolean mask."""
        mask = np.asarray(mask, dtype=bool)
        return self.features[mask].copy(), self.class_ids[mask].copy(), self.modality[mask].copy()

    def same_content(self, other: "CrossModalDataset") -> bool:
        return (
            self.num_classes == other.num_classes
            and self.features.tobytes() == other.features.tobytes()
            and self.class_ids.tolist() == other.class_ids.tolist()
            and self.modality.tolist() == other.modality.tolist()
        )


@dataclass(frozen=True)
class SeenUnseenSplit:
    """Disjoint partition of class ids into training (seen) and zero-shot
    evaluation (unseen) sets."""

    seen: tuple[int, ...]
    unseen: tuple[int, ...]

    def __post_init__(self):
        seen, unseen = set(self.seen), set(self.unseen)
        if not seen:
            raise ConfigError("split needs at least one seen class")
        if not unseen:
            raise ConfigError("split needs at least one unseen class")
        if seen & unseen:
            raise ConfigError(f"classes in both sides of the split: {sorted(seen & unseen)}")
        object.__setattr__(self, "seen", tuple(sorted(seen)))
        object.__setattr__(self, "unseen", tuple(sorted(unseen)))

    @property
    def num_classes(self) -> int:
        return len(self.seen) + len(self.unseen)

    def covers(self, num_classes: int) -> bool:
        return set(self.seen) | set(self.unseen) == set(range(num_classes))

    def seen_index(self) -> dict[int, int]:
        """Dense relabeling of seen classes to 0..len(seen)-1 for the
        classification head."""
        return {c: i for i, c in enumerate(self.seen)}


def generate_synthetic(
    num_classes: int = 15,
    per_class_per_modality: int = 10,
    d_in: int = 4,
    modality_shift: float = 0.5,
    noise_std: float = 0.1,
    seed: int = 7,
) -> CrossModalDataset:
    """Gaussian clusters around per-class prototypes with a global modality gap.

    Sketch instances sit at prototype + shift * sketch_offset, images at
    prototype + shift * image_offset, both plus isotropic noise. The offsets
    are the same for every class, so the gap is removable by a model.
    Deterministic per seed; noise_std = 0 collapses each class-modality
    group to a point while consuming the same random draws.
    """
    if num_classes < 2:
        raise ConfigError(f"num_classes must be >= 2, got {num_classes}")
    if per_class_per_modality < 1:
        raise ConfigError(f"per_class_per_modality must be >= 1, got {per_class_per_modality}")
    if d_in < 1:
        raise ConfigError(f"d_in must be >= 1, got {d_in}")
    if noise_std < 0:
        raise ConfigError(f"noise_std must be >= 0, got {noise_std}")
    if modality_shift < 0:
        raise ConfigError(f"modality_shift must be >= 0, got {modality_shift}")

    rng = np.random.default_rng(seed)

    def unit(rows):
        v = rng.standard_normal((rows, d_in))
        return v / np.linalg.norm(v, axis=1, keepdims=True)

    prototypes = unit(num_classes)
    offsets = unit(2)  # row 0: sketch, row 1: image

    per_class_total = 2 * per_class_per_modality
    n = num_classes * per_class_total
    features = np.empty((n, d_in))
    class_ids = np.empty(n, dtype=np.intp)
    modality = np.empty(n, dtype=np.intp)
    row = 0
    for c in range(num_classes):
        for mod in (SKETCH, IMAGE):
            base = prototypes[c] + modality_shift * offsets[mod]
            noise = noise_std * rng.standard_normal((per_class_per_modality, d_in))
            features[row:row + per_class_per_modality] = base + noise
            class_ids[row:row + per_class_per_modality] = c
            modality[row:row + per_class_per_modality] = mod
            row += per_class_per_modality
    return CrossModalDataset(features, class_ids, modality, num_classes=num_classes)


def make_split(ds: CrossModalDataset, num_unseen: int, seed: int) -> SeenUnseenSplit:
    """Uniform random seen/unseen partition of the dataset's classes."""
    if not 1 <= num_unseen < ds.num_classes:
        raise ConfigError(
            f"num_unseen must be in [1, {ds.num_classes - 1}], got {num_unseen}"
        )
    order = np.random.default_rng(seed).permutation(ds.num_classes)
    return SeenUnseenSplit(
        seen=tuple(int(c) for c in order[num_unseen:]),
        unseen=tuple(int(c) for c in order[:num_unseen]),
    )


def save_dataset(ds: CrossModalDataset, path) -> None:
    """Write the binary layout: magic, u32 counts, then per-instance records."""
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(_HEADER.pack(len(ds), ds.d_in, ds.num_classes))
        for i in range(len(ds)):
            f.write(_RECORD_META.pack(int(ds.class_ids[i]), int(ds.modality[i])))
            f.write(ds.features[i].astype("<f8").tobytes())


def load_dataset(path) -> CrossModalDataset:
    """Read the binary layout back; malformed input fails with the byte offset."""
    with open(path, "rb") as f:
        blob = f.read()

    def need(offset, count, what):
        if offset + count > len(blob):
            raise FormatError(
                f"truncated file: need {count} bytes for {what} at offset {offset}, "
                f"have {len(blob) - offset}"
            )

    need(0, len(MAGIC), "magic")
    magic = blob[: len(MAGIC)]
    if magic != MAGIC:
        if magic[:5] == MAGIC[:5]:
            raise VersionError(
                f"unsupported format version {magic!r} at offset 0, expected {MAGIC!r}"
            )
        raise FormatError(f"bad magic {magic!r} at offset 0, expected {MAGIC!r}")
    pos = len(MAGIC)
    need(pos, _HEADER.size, "header")
    n, d_in, classes = _HEADER.unpack_from(blob, pos)
    pos += _HEADER.size
    if n == 0 or d_in == 0 or classes == 0:
        raise FormatError(f"header at offset {len(MAGIC)} has zero counts: "
                          f"instances={n}, d_in={d_in}, classes={classes}")

    features = np.empty((n, d_in))
    class_ids = np.empty(n, dtype=np.intp)
    modality = np.empty(n, dtype=np.intp)
    feat_bytes = d_in * 8
    for i in range(n):
        need(pos, _RECORD_META.size, f"record {i} metadata")
        cid, mod = _RECORD_META.unpack_from(blob, pos)
        if cid >= classes:
            raise FormatError(
                f"record {i} at offset {pos}: class id {cid} out of range for {classes} classes"
            )
        if mod not in (SKETCH, IMAGE):
            raise FormatError(f"record {i} at offset {pos}: bad modality byte {mod}")
        pos += _RECORD_META.size
        need(pos, feat_bytes, f"record {i} features")
        features[i] = np.frombuffer(blob, dtype="<f8", count=d_in, offset=pos)
        class_ids[i] = cid
        modality[i] = mod
        pos += feat_bytes
    if pos != len(blob):
        raise FormatError(f"{len(blob) - pos} trailing bytes at offset {pos}")
    try:
        return CrossModalDataset(features, class_ids, modality, num_classes=classes)
    except (LabelError, ShapeError) as exc:
        raise FormatError(f"file decodes but violates dataset rules: {exc}") from exc
