"""Per-class key dictionary with momentum updates on the unit sphere.

The dictionary holds one key vector per known class. Keys are *not* learned
by gradient descent; after each optimizer step they absorb the batch's
embeddings through an exponential blend

    key <- momentum * key + (1 - momentum) * batch_mean_value

followed by renormalization to unit length. A small momentum means keys
track the encoder closely while still smoothing over batch noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    ConfigError,
    DegenerateVectorError,
    EmptyBatchError,
    LabelError,
    ShapeError,
)

__all__ = ["BatchValues", "OntologyDictionary", "init_dictionary"]

_ZERO_NORM_FLOOR = 1e-12

DEFAULT_MOMENTUM = 0.01


def _unit_rows(arr: np.ndarray, what: str) -> np.ndarray:
    norms = np.sqrt((arr * arr).sum(axis=1, keepdims=True))
    if (norms < _ZERO_NORM_FLOOR).any():
        raise DegenerateVectorError(f"{what}: row with near-zero norm cannot be normalized")
    return arr / norms


@dataclass
class BatchValues:
    """A batch of embedding vectors paired with their integer class ids."""

    values: np.ndarray
    class_ids: np.ndarray

    def __post_init__(self):
        self.values = np.ascontiguousarray(np.asarray(self.values, dtype=np.float64))
        self.class_ids = np.asarray(self.class_ids, dtype=np.intp)
        if self.values.ndim != 2:
            raise ShapeError(f"values must be 2-D, got shape {self.values.shape}")
        if self.class_ids.ndim != 1:
            raise ShapeError(f"class_ids must be 1-D, got shape {self.class_ids.shape}")
        if self.values.shape[0] != self.class_ids.shape[0]:
            raise ShapeError(
                f"{self.values.shape[0]} values but {self.class_ids.shape[0]} class ids"
            )
        if self.values.shape[0] == 0:
            raise EmptyBatchError("batch contains no instances")
        if (self.class_ids < 0).any():
            raise LabelError("class ids must be non-negative")

    def __len__(self) -> int:
        return self.values.shape[0]


class OntologyDictionary:
    """Unit-norm key vectors, one per class, updated by momentum blending.

    Construction rescales every row of ``keys`` to exact unit norm, so
    round-tripping through storage can never drift off the sphere.
    """

    def __init__(self, keys: np.ndarray, momentum: float = DEFAULT_MOMENTUM):
        keys = np.ascontiguousarray(np.asarray(keys, dtype=np.float64))
        if keys.ndim != 2:
            raise ShapeError(f"keys must be 2-D, got shape {keys.shape}")
        if keys.shape[0] < 1 or keys.shape[1] < 1:
            raise ShapeError(f"keys must be non-empty, got shape {keys.shape}")
        momentum = float(momentum)
        if not 0.0 <= momentum < 1.0:
            raise ConfigError(f"momentum must be in [0, 1), got {momentum}")
        self.keys = _unit_rows(keys, "keys")
        self.momentum = momentum

    @classmethod
    def from_unit_keys(cls, keys: np.ndarray, momentum: float = DEFAULT_MOMENTUM) -> "OntologyDictionary":
        """Adopt rows that are already unit-norm without rescaling them.

        Rescaling a stored key by its recomputed norm can flip low-order
        bits, so restoring from disk goes through this path to keep
        round-trips exact. Rows further than 1e-9 from unit norm are
        rejected rather than silently fixed.
        """
        d = cls.__new__(cls)
        arr = np.ascontiguousarray(np.asarray(keys, dtype=np.float64))
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ShapeError(f"keys must be a non-empty 2-D matrix, got shape {arr.shape}")
        momentum = float(momentum)
        if not 0.0 <= momentum < 1.0:
            raise ConfigError(f"momentum must be in [0, 1), got {momentum}")
        norms = np.sqrt((arr * arr).sum(axis=1))
        if np.abs(norms - 1.0).max() > 1e-9:
            raise DegenerateVectorError("keys are not unit-norm; use the regular constructor")
        d.keys = arr
        d.momentum = momentum
        return d

    @property
    def num_classes(self) -> int:
        return self.keys.shape[0]

    @property
    def dim(self) -> int:
        return self.keys.shape[1]

    def lookup(self, class_ids) -> np.ndarray:
        """Key rows for the given class ids (a fresh array, repeats allowed)."""
        ids = np.asarray(class_ids, dtype=np.intp)
        if ids.ndim != 1:
            raise ShapeError(f"class_ids must be 1-D, got shape {ids.shape}")
        if ids.size and (ids.min() < 0 or ids.max() >= self.num_classes):
            raise LabelError(f"class id out of range for {self.num_classes} classes")
        return self.keys[ids].copy()

    def update(self, batch: BatchValues) -> np.ndarray:
        """Blend batch values into the keys of the classes they belong to.

        Instances sharing a class are averaged first, which makes the update
        independent of instance order within the batch. Classes absent from
        the batch keep their keys bit-for-bit. Returns the ids of the classes
        that were touched, in ascending order.
        """
        if batch.values.shape[1] != self.dim:
            raise ShapeError(
                f"value dim {batch.values.shape[1]} does not match key dim {self.dim}"
            )
        if batch.class_ids.max() >= self.num_classes:
            raise LabelError(f"class id out of range for {self.num_classes} classes")

        touched = np.unique(batch.class_ids)
        sums = np.zeros((touched.size, self.dim))
        counts = np.zeros(touched.size)
        pos = np.searchsorted(touched, batch.class_ids)
        np.add.at(sums, pos, batch.values)
        np.add.at(counts, pos, 1.0)
        means = sums / counts[:, None]

        blended = self.momentum * self.keys[touched] + (1.0 - self.momentum) * means
        self.keys[touched] = _unit_rows(blended, "updated keys")
        return touched

    def copy(self) -> "OntologyDictionary":
        return OntologyDictionary(self.keys.copy(), self.momentum)


def init_dictionary(
    num_classes: int,
    dim: int,
    rng: np.random.Generator,
    momentum: float = DEFAULT_MOMENTUM,
) -> OntologyDictionary:
    """Fresh dictionary with isotropic random unit keys."""
    if num_classes < 1:
        raise ConfigError(f"num_classes must be >= 1, got {num_classes}")
    if dim < 1:
        raise ConfigError(f"dim must be >= 1, got {dim}")
    keys = rng.standard_normal((num_classes, dim))
    return OntologyDictionary(keys, momentum=momentum)
