"""Student network and frozen teacher.

The student is a small fully-connected trunk over precomputed feature
vectors: input (d_in) -> hidden (h, ReLU) -> embedding (d), with a learned
additive vector per modality mixed into the input as conditioning. Two
linear heads read the embedding: a logit head G (d -> M, distilled against
the teacher) and a classification head C (d -> T_s seen classes).

The teacher shares the trunk+G architecture but holds plain arrays: its
forward pass never touches a tape, so it cannot receive gradients by
construction. Its tempered softmax supplies the semantic targets.
"""

from __future__ import annotations

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor
from .errors import ConfigError, LabelError, ShapeError

__all__ = ["OanModel", "TeacherModel", "init_model", "PARAM_NAMES", "TEACHER_PARAM_NAMES"]

SKETCH, IMAGE = 0, 1

# parameter order is load-bearing: rng draws at init and checkpoint
# manifests both follow it
PARAM_NAMES = (
    "modality_embedding",
    "w1",
    "b1",
    "w2",
    "b2",
    "wg",
    "bg",
    "wc",
    "bc",
)

# the teacher keeps the trunk and the logit head, never the classifier head
TEACHER_PARAM_NAMES = ("modality_embedding", "w1", "b1", "w2", "b2", "wg", "bg")


def _check_modality(modality, n: int) -> np.ndarray:
    m = np.asarray(modality, dtype=np.intp)
    if m.shape != (n,):
        raise ShapeError(f"need one modality flag per instance, got {m.shape} for {n} rows")
    if m.size and not np.isin(m, (SKETCH, IMAGE)).all():
        raise LabelError("modality flags must be 0 (sketch) or 1 (image)")
    return m


class OanModel:
    """Trainable embedding trunk with logit and classification heads."""

    def __init__(self, params: dict[str, Tensor]):
        missing = [n for n in PARAM_NAMES if n not in params]
        if missing:
            raise ConfigError(f"missing parameters: {missing}")
        self.params = {n: params[n] for n in PARAM_NAMES}
        me, w1, w2, wg, wc = (self.params[n] for n in ("modality_embedding", "w1", "w2", "wg", "wc"))
        if me.rows != 2 or me.cols != w1.rows:
            raise ShapeError(
                f"modality embedding {me.shape} must be 2x{w1.rows} to match the input layer"
            )
        if w1.cols != w2.rows or w2.cols != wg.rows or wg.rows != wc.rows:
            raise ShapeError("layer dimensions do not chain: "
                             f"w1 {w1.shape}, w2 {w2.shape}, wg {wg.shape}, wc {wc.shape}")

    @property
    def d_in(self) -> int:
        return self.params["w1"].rows

    @property
    def hidden(self) -> int:
        return self.params["w1"].cols

    @property
    def d(self) -> int:
        return self.params["w2"].cols

    @property
    def num_semantic(self) -> int:
        return self.params["wg"].cols

    @property
    def num_seen(self) -> int:
        return self.params["wc"].cols

    @property
    def param_count(self) -> int:
        return sum(t.data.size for t in self.params.values())

    def parameters(self) -> dict[str, Tensor]:
        """Name -> tensor, in fixed declaration order."""
        return self.params

    def embed(self, inputs, modality) -> Tensor:
        """Embedding of a batch: trunk(input + modality vector)."""
        x = dc.as_tensor(inputs)
        if x.cols != self.d_in:
            raise ShapeError(f"input dim {x.cols} does not match model d_in {self.d_in}")
        m = _check_modality(modality, x.rows)
        p = self.params
        conditioned = dc.add(x, dc.take_rows(p["modality_embedding"], m))
        hidden = dc.relu(dc.add(dc.matmul(conditioned, p["w1"]), p["b1"]))
        return dc.add(dc.matmul(hidden, p["w2"]), p["b2"])

    def heads(self, emb: Tensor) -> tuple[Tensor, Tensor]:
        """(logit head G, classification head C) applied to an embedding."""
        emb = dc.as_tensor(emb)
        if emb.cols != self.d:
            raise ShapeError(f"embedding dim {emb.cols} does not match model d {self.d}")
        p = self.params
        g = dc.add(dc.matmul(emb, p["wg"]), p["bg"])
        c = dc.add(dc.matmul(emb, p["wc"]), p["bc"])
        return g, c

    def zero_grads(self) -> None:
        for t in self.params.values():
            t.zero_grad()

    def copy(self) -> "OanModel":
        return OanModel(
            {n: Tensor(t.data.copy(), requires_grad=True) for n, t in self.params.items()}
        )


def init_model(d_in: int, h: int, d: int, m: int, t_s: int, seed: int) -> OanModel:
    """Deterministic initialization: Gaussian weights scaled by 1/sqrt(fan_in),
    zero biases, zero modality vectors.

    The modality vectors start at zero so a freshly built model treats both
    modalities identically; training moves them apart. With zero input the
    whole forward pass reduces to the bias terms.
    """
    dims = {"d_in": d_in, "h": h, "d": d, "m": m, "t_s": t_s}
    for name, v in dims.items():
        if int(v) < 1:
            raise ConfigError(f"{name} must be >= 1, got {v}")
    rng = np.random.default_rng(seed)

    def weight(fan_in, fan_out):
        return Tensor(rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in), requires_grad=True)

    params = {
        "modality_embedding": Tensor(np.zeros((2, d_in)), requires_grad=True),
        "w1": weight(d_in, h),
        "b1": Tensor(np.zeros((1, h)), requires_grad=True),
        "w2": weight(h, d),
        "b2": Tensor(np.zeros((1, d)), requires_grad=True),
        "wg": weight(d, m),
        "bg": Tensor(np.zeros((1, m)), requires_grad=True),
        "wc": weight(d, t_s),
        "bc": Tensor(np.zeros((1, t_s)), requires_grad=True),
    }
    return OanModel(params)


def _numpy_forward_logits(params: dict[str, np.ndarray], x: np.ndarray, m: np.ndarray) -> np.ndarray:
    """Tape-free forward through trunk + logit head, mirroring OanModel.embed/heads."""
    conditioned = x + params["modality_embedding"][m]
    hidden = np.maximum(conditioned @ params["w1"] + params["b1"], 0.0)
    emb = hidden @ params["w2"] + params["b2"]
    return emb @ params["wg"] + params["bg"]


class TeacherModel:
    """Frozen trunk + logit head emitting tempered softmax distributions.

    Parameters are plain arrays copied out of a trained model; nothing here
    participates in gradient tracking, so the teacher is frozen by
    construction rather than by convention.
    """

    def __init__(self, params: dict[str, np.ndarray], tau: float = 1.0):
        tau = float(tau)
        if not tau > 0.0:
            raise ConfigError(f"tau must be > 0, got {tau}")
        missing = [n for n in TEACHER_PARAM_NAMES if n not in params]
        if missing:
            raise ConfigError(f"missing teacher parameters: {missing}")
        self.params = {n: np.ascontiguousarray(np.asarray(params[n], dtype=np.float64)).copy()
                       for n in TEACHER_PARAM_NAMES}
        self.tau = tau

    @classmethod
    def from_model(cls, model: OanModel, tau: float = 1.0) -> "TeacherModel":
        return cls({n: t.data for n, t in model.parameters().items()
                    if n in TEACHER_PARAM_NAMES}, tau=tau)

    @property
    def num_semantic(self) -> int:
        return self.params["wg"].shape[1]

    def logits(self, inputs, modality) -> np.ndarray:
        """Raw logit-head outputs (pre-temperature), as a plain array."""
        x = np.asarray(inputs, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.params["w1"].shape[0]:
            raise ShapeError(
                f"teacher input must be Nx{self.params['w1'].shape[0]}, got {x.shape}"
            )
        m = _check_modality(modality, x.shape[0])
        return _numpy_forward_logits(self.params, x, m)

    def distribution(self, inputs, modality) -> np.ndarray:
        """Row-stochastic semantic targets: softmax(logits / tau)."""
        logits = self.logits(inputs, modality) / self.tau
        shifted = np.exp(logits - logits.max(axis=1, keepdims=True))
        return shifted / shifted.sum(axis=1, keepdims=True)
