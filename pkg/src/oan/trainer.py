"""Mini-batch SGD training with a momentum-updated class dictionary.

One training step runs the whole pipeline on a mixed-modality batch:

    embed -> unit-normalize -> heads -> losses -> backward -> SGD step
    -> dictionary update (detached, after the step)

The semantic targets come from a small teacher network that is pre-trained
for a few epochs on a coarse auxiliary labeling and then frozen. Everything
is seeded through a single root seed so two runs with the same config and
data produce bit-identical parameters, metrics, and checkpoints.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import struct
from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from .diffcore import Tape, Tensor
from .dataset import CrossModalDataset, SeenUnseenSplit, make_split
from .errors import (
    ConfigError,
    DegenerateVectorError,
    FormatError,
    LabelError,
    NumericError,
    ShapeError,
    VersionError,
)
from .losses import (
    HypersphereKernel,
    InterClassLossConfig,
    LossWeights,
    batch_categories,
    classification_loss,
    inter_class_loss,
    self_distill_hcr,
    semantic_loss,
    teacher_student_hcr,
    total_loss,
)
from .memory import BatchValues, OntologyDictionary, init_dictionary
from .model import (
    IMAGE,
    PARAM_NAMES,
    SKETCH,
    TEACHER_PARAM_NAMES,
    OanModel,
    TeacherModel,
    init_model,
)
from .retrieval import RetrievalReport, evaluate_retrieval

__all__ = [
    "TrainConfig",
    "TrainState",
    "TrainResult",
    "sgd_step",
    "train_epoch",
    "fit_loop",
    "prepare_state",
    "pretrain_teacher",
    "run_training",
    "evaluate_split",
    "save_checkpoint",
    "load_checkpoint",
    "LoadedCheckpoint",
    "CHECKPOINT_MAGIC",
]

logger = logging.getLogger("oan.trainer")

CHECKPOINT_MAGIC = b"OANCK1"
_CK_LEN = struct.Struct("<I")

# per-epoch metric keys, in reporting order
METRIC_KEYS = ("classification", "semantic", "independence", "consistency", "total")


@dataclass
class TrainConfig:
    """Everything a training run depends on, in one serializable bundle.

    The defaults are the benchmark configuration: they train on the default
    synthetic dataset in a couple of seconds and reproduce the ablation
    ordering (plain baseline < +independence < +independence+consistency).
    ``beta`` is large because it multiplies the independence logits while
    the term's mixing weight is small (0.001); their product sets the
    effective strength of the pull toward class keys.
    """

    epochs: int = 15
    batch_size: int = 16
    learning_rate: float = 0.01
    seed: int = 1
    loss_weights: LossWeights = field(default_factory=LossWeights)
    enable_independence: bool = True
    enable_self_hcr: bool = True
    enable_teacher_hcr: bool = False
    literal_coefficients: bool = False
    beta: float = 200.0
    eta: float = 0.1
    momentum: float = 0.01
    tau: float = 1.0
    d_in: int = 4
    hidden: int = 128
    embed_dim: int = 32
    num_semantic: int = 8
    mu: float = 0.0
    sigma_sq: float = 0.5
    num_unseen: int = 5
    teacher_epochs: int = 3
    eval_ks: tuple = (5, 10)

    def __post_init__(self):
        if int(self.epochs) != self.epochs or self.epochs < 1:
            raise ConfigError(f"epochs must be a positive integer, got {self.epochs}")
        if int(self.batch_size) != self.batch_size or self.batch_size < 2:
            raise ConfigError(f"batch_size must be an integer >= 2, got {self.batch_size}")
        self.epochs = int(self.epochs)
        self.batch_size = int(self.batch_size)
        self.learning_rate = float(self.learning_rate)
        if not (np.isfinite(self.learning_rate) and self.learning_rate > 0):
            raise ConfigError(f"learning_rate must be finite and > 0, got {self.learning_rate}")
        if int(self.seed) != self.seed or self.seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {self.seed}")
        self.seed = int(self.seed)
        if not isinstance(self.loss_weights, LossWeights):
            raise ConfigError("loss_weights must be a LossWeights instance")
        self.beta = float(self.beta)
        if not (np.isfinite(self.beta) and self.beta >= 0):
            raise ConfigError(f"beta must be finite and >= 0, got {self.beta}")
        self.eta = float(self.eta)
        if not 0.0 <= self.eta < 1.0:
            raise ConfigError(f"eta must be in [0, 1), got {self.eta}")
        self.momentum = float(self.momentum)
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        self.tau = float(self.tau)
        if not (np.isfinite(self.tau) and self.tau > 0):
            raise ConfigError(f"tau must be finite and > 0, got {self.tau}")
        for name in ("d_in", "hidden", "embed_dim", "num_semantic"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v}")
            setattr(self, name, int(v))
        self.mu = float(self.mu)
        self.sigma_sq = float(self.sigma_sq)
        if not (np.isfinite(self.sigma_sq) and self.sigma_sq > 0):
            raise ConfigError(f"sigma_sq must be finite and > 0, got {self.sigma_sq}")
        if int(self.num_unseen) != self.num_unseen or self.num_unseen < 1:
            raise ConfigError(f"num_unseen must be a positive integer, got {self.num_unseen}")
        self.num_unseen = int(self.num_unseen)
        if int(self.teacher_epochs) != self.teacher_epochs or self.teacher_epochs < 0:
            raise ConfigError(
                f"teacher_epochs must be a non-negative integer, got {self.teacher_epochs}"
            )
        self.teacher_epochs = int(self.teacher_epochs)
        ks = tuple(int(k) for k in self.eval_ks)
        if len(ks) == 0 or any(k < 1 for k in ks):
            raise ConfigError(f"eval_ks must be non-empty positive integers, got {self.eval_ks}")
        self.eval_ks = ks
        for name in (
            "enable_independence",
            "enable_self_hcr",
            "enable_teacher_hcr",
            "literal_coefficients",
        ):
            setattr(self, name, bool(getattr(self, name)))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["eval_ks"] = list(self.eval_ks)
        return d

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        if not isinstance(raw, dict):
            raise ConfigError(f"config must be a mapping, got {type(raw).__name__}")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        kwargs = dict(raw)
        if "loss_weights" in kwargs and not isinstance(kwargs["loss_weights"], LossWeights):
            lw = kwargs["loss_weights"]
            if not isinstance(lw, dict):
                raise ConfigError("loss_weights must be a mapping of lambda1/lambda2/lambda3")
            bad = sorted(set(lw) - {"lambda1", "lambda2", "lambda3"})
            if bad:
                raise ConfigError(f"unknown loss_weights keys: {bad}")
            kwargs["loss_weights"] = LossWeights(**lw)
        return cls(**kwargs)

    def kernel(self) -> HypersphereKernel:
        return HypersphereKernel(mu=self.mu, sigma_sq=self.sigma_sq)

    def independence_config(self) -> InterClassLossConfig:
        return InterClassLossConfig(
            beta=self.beta, eta=self.eta, literal_coefficients=self.literal_coefficients
        )


@dataclass
class TrainState:
    """Mutable pieces of a run: networks, dictionary, shuffler, metrics."""

    model: OanModel
    dictionary: OntologyDictionary
    teacher: TeacherModel
    rng: np.random.Generator
    history: list = field(default_factory=list)
    consumed_classes: set = field(default_factory=set)


@dataclass
class TrainResult:
    state: TrainState
    split: SeenUnseenSplit
    report_real: RetrievalReport
    report_binary: RetrievalReport


def sgd_step(params: dict, grads: dict, learning_rate: float) -> dict:
    """In-place p <- p - lr * g for every parameter that has a gradient.

    Non-finite gradients abort the step with the parameter named, so a blown
    run fails loudly instead of writing NaNs into the model.
    """
    lr = float(learning_rate)
    if not (np.isfinite(lr) and lr >= 0):
        raise ConfigError(f"learning_rate must be finite and >= 0, got {lr}")
    for name, tensor in params.items():
        g = grads.get(name)
        if g is None:
            continue
        g = np.asarray(g, dtype=np.float64)
        if g.shape != tensor.data.shape:
            raise ShapeError(
                f"gradient for '{name}' has shape {g.shape}, parameter is {tensor.data.shape}"
            )
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient for parameter '{name}'")
        tensor.data -= lr * g
    return params


def _derive_seeds(seed: int) -> dict:
    """Independent child seeds for every random consumer, in a fixed order."""
    draws = np.random.default_rng(seed).integers(0, 2**63 - 1, size=6)
    names = ("split", "teacher_init", "teacher_shuffle", "model_init", "dictionary", "shuffle")
    return {n: int(s) for n, s in zip(names, draws)}


def _dense_labels(class_ids: np.ndarray, seen_sorted: np.ndarray) -> np.ndarray:
    """Map raw class ids to dense indices into the sorted seen-class list.

    Doubles as the leak audit: any id outside the seen list is a hard error,
    so no batch can ever push an unseen class into the model or dictionary.
    """
    idx = np.searchsorted(seen_sorted, class_ids)
    safe = np.minimum(idx, seen_sorted.size - 1)
    bad = (idx >= seen_sorted.size) | (seen_sorted[safe] != class_ids)
    if bad.any():
        leaked = sorted(int(c) for c in np.unique(np.asarray(class_ids)[bad]))
        raise LabelError(f"classes {leaked} are not in the training split")
    return idx.astype(np.intp)


def _batch_indices(rng: np.random.Generator, n: int, batch_size: int):
    """Shuffled batches; a trailing singleton is dropped (pairwise terms
    need at least two rows) and reported to the caller."""
    order = rng.permutation(n)
    batches = []
    dropped = 0
    for start in range(0, n, batch_size):
        chunk = order[start : start + batch_size]
        if chunk.size == 1:
            dropped += 1
            continue
        batches.append(chunk)
    return batches, dropped


def _unit_rows(arr: np.ndarray) -> np.ndarray:
    norms = np.sqrt((arr * arr).sum(axis=1, keepdims=True))
    if (norms < 1e-12).any():
        raise DegenerateVectorError("embedding row with near-zero norm cannot be normalized")
    return arr / norms


def embed_for_retrieval(model: OanModel, features, modality) -> np.ndarray:
    """Unit-normalized embeddings as a plain array, outside any tape."""
    emb = model.embed(features, modality)
    return _unit_rows(emb.data)


def _zero_scalar() -> Tensor:
    return Tensor(np.zeros((1, 1)))


def train_epoch(
    state: TrainState,
    dataset: CrossModalDataset,
    seen_classes,
    cfg: TrainConfig,
) -> dict:
    """One pass over the seen-class subset. Returns per-term epoch means."""
    seen_sorted = np.asarray(sorted(int(c) for c in seen_classes), dtype=np.intp)
    mask = np.isin(dataset.class_ids, seen_sorted)
    pool = np.flatnonzero(mask)
    if pool.size < 2:
        raise ConfigError("training needs at least two instances of seen classes")

    feats = dataset.features[pool]
    labels = _dense_labels(dataset.class_ids[pool], seen_sorted)
    mods = dataset.modality[pool]

    kernel = cfg.kernel()
    ind_cfg = cfg.independence_config()
    weights = cfg.loss_weights

    batches, dropped = _batch_indices(state.rng, pool.size, cfg.batch_size)
    if dropped:
        logger.info("dropped %d singleton batch(es) this epoch", dropped)

    sums = {k: 0.0 for k in METRIC_KEYS}
    for rows in batches:
        x = feats[rows]
        y = labels[rows]
        m = mods[rows]
        state.consumed_classes.update(int(c) for c in seen_sorted[y])

        teacher_dist = state.teacher.distribution(x, m)
        teacher_logits = state.teacher.logits(x, m) if cfg.enable_teacher_hcr else None

        with Tape() as tape:
            emb = state.model.embed(x, m)
            values = dc.l2_normalize_rows(emb)
            g, c = state.model.heads(emb)

            cls = classification_loss(c, y)
            se = semantic_loss(g, teacher_dist)

            if cfg.enable_independence:
                distinct, cat_index = batch_categories(y)
                key_rows = state.dictionary.lookup(distinct)
                ind = inter_class_loss(values, cat_index, key_rows, ind_cfg)
            else:
                ind = _zero_scalar()

            # the similarity kernel is calibrated for pair distances of order
            # one; head outputs grow without bound during training, so the
            # consistency terms see unit-normalized rows of each head
            hcr_terms = []
            if cfg.enable_self_hcr or cfg.enable_teacher_hcr:
                c_n = dc.l2_normalize_rows(c)
            if cfg.enable_self_hcr:
                g_n = dc.l2_normalize_rows(g)
                hcr_terms.append(self_distill_hcr(c_n, g_n, kernel))
            if cfg.enable_teacher_hcr:
                t_n = _unit_rows(teacher_logits)
                hcr_terms.append(teacher_student_hcr(c_n, Tensor(t_n), kernel))
            if not hcr_terms:
                hcr = _zero_scalar()
            elif len(hcr_terms) == 1:
                hcr = hcr_terms[0]
            else:
                hcr = dc.add(hcr_terms[0], hcr_terms[1])

            total = total_loss(cls, se, ind, hcr, weights)

        tape.backward(total)
        grads = {n: t.grad for n, t in state.model.parameters().items()}
        sgd_step(state.model.parameters(), grads, cfg.learning_rate)
        state.model.zero_grads()
        # keys absorb this batch's (detached) values only after the step,
        # so the update can never feed back into the same step's gradients
        state.dictionary.update(BatchValues(values.data.copy(), y))

        sums["classification"] += cls.item()
        sums["semantic"] += se.item()
        sums["independence"] += ind.item()
        sums["consistency"] += hcr.item()
        sums["total"] += total.item()

    metrics = {k: float(sums[k] / len(batches)) for k in METRIC_KEYS}
    metrics["batches"] = len(batches)
    metrics["dropped"] = dropped
    return metrics


def pretrain_teacher(
    cfg: TrainConfig,
    dataset: CrossModalDataset,
    seen_classes,
    init_seed: int,
    shuffle_seed: int,
) -> TeacherModel:
    """Train a fresh network's logit head on coarse auxiliary labels, then
    freeze it.

    The auxiliary labeling folds the seen classes into ``num_semantic``
    groups, giving the teacher a structure-bearing but deliberately coarser
    view than the class labels themselves.
    """
    seen_sorted = np.asarray(sorted(int(c) for c in seen_classes), dtype=np.intp)
    mask = np.isin(dataset.class_ids, seen_sorted)
    pool = np.flatnonzero(mask)
    if pool.size < 2:
        raise ConfigError("teacher pre-training needs at least two seen instances")

    feats = dataset.features[pool]
    dense = _dense_labels(dataset.class_ids[pool], seen_sorted)
    aux = (dense % cfg.num_semantic).astype(np.intp)
    mods = dataset.modality[pool]

    net = init_model(
        cfg.d_in, cfg.hidden, cfg.embed_dim, cfg.num_semantic, cfg.num_semantic, init_seed
    )
    rng = np.random.default_rng(shuffle_seed)
    for _ in range(cfg.teacher_epochs):
        batches, _ = _batch_indices(rng, pool.size, cfg.batch_size)
        for rows in batches:
            with Tape() as tape:
                emb = net.embed(feats[rows], mods[rows])
                g, _ = net.heads(emb)
                loss = classification_loss(g, aux[rows])
            tape.backward(loss)
            grads = {n: t.grad for n, t in net.parameters().items()}
            sgd_step(net.parameters(), grads, cfg.learning_rate)
            net.zero_grads()
    return TeacherModel.from_model(net, tau=cfg.tau)


def prepare_state(cfg: TrainConfig, dataset: CrossModalDataset, seen_classes) -> TrainState:
    """Build model, dictionary, teacher, and shuffler from the root seed."""
    if dataset.d_in != cfg.d_in:
        raise ShapeError(
            f"dataset features have dim {dataset.d_in}, config expects {cfg.d_in}"
        )
    seeds = _derive_seeds(cfg.seed)
    teacher = pretrain_teacher(
        cfg, dataset, seen_classes, seeds["teacher_init"], seeds["teacher_shuffle"]
    )
    model = init_model(
        cfg.d_in,
        cfg.hidden,
        cfg.embed_dim,
        cfg.num_semantic,
        len(tuple(seen_classes)),
        seeds["model_init"],
    )
    dictionary = init_dictionary(
        len(tuple(seen_classes)),
        cfg.embed_dim,
        np.random.default_rng(seeds["dictionary"]),
        momentum=cfg.momentum,
    )
    return TrainState(
        model=model,
        dictionary=dictionary,
        teacher=teacher,
        rng=np.random.default_rng(seeds["shuffle"]),
    )


def fit_loop(
    state: TrainState, dataset: CrossModalDataset, seen_classes, cfg: TrainConfig
) -> TrainState:
    for epoch in range(cfg.epochs):
        metrics = train_epoch(state, dataset, seen_classes, cfg)
        metrics["epoch"] = epoch
        state.history.append(metrics)
        logger.info(
            "epoch %d: total %.6f cls %.6f sem %.6f ind %.6f cons %.6f",
            epoch,
            metrics["total"],
            metrics["classification"],
            metrics["semantic"],
            metrics["independence"],
            metrics["consistency"],
        )
    return state


def evaluate_split(model: OanModel, dataset: CrossModalDataset, classes, ks=(10, 100)):
    """Sketch-queries-against-image-gallery retrieval on a class subset.

    Returns (real-valued report, binarized report).
    """
    wanted = np.asarray(sorted(int(c) for c in classes), dtype=np.intp)
    member = np.isin(dataset.class_ids, wanted)
    sk = member & (dataset.modality == SKETCH)
    im = member & (dataset.modality == IMAGE)
    if not sk.any() or not im.any():
        raise ConfigError("evaluation needs at least one sketch query and one gallery image")
    q = embed_for_retrieval(model, dataset.features[sk], dataset.modality[sk])
    g = embed_for_retrieval(model, dataset.features[im], dataset.modality[im])
    q_labels = dataset.class_ids[sk]
    g_labels = dataset.class_ids[im]
    real = evaluate_retrieval(q, q_labels, g, g_labels, ks=ks, mode="real")
    binary = evaluate_retrieval(q, q_labels, g, g_labels, ks=ks, mode="binary")
    return real, binary


def run_training(cfg: TrainConfig, dataset: CrossModalDataset) -> TrainResult:
    """Full experiment: split, pre-train teacher, train, evaluate zero-shot."""
    seeds = _derive_seeds(cfg.seed)
    split = make_split(dataset, cfg.num_unseen, seeds["split"])
    state = prepare_state(cfg, dataset, split.seen)
    fit_loop(state, dataset, split.seen, cfg)
    report_real, report_binary = evaluate_split(state.model, dataset, split.unseen, cfg.eval_ks)
    logger.info(
        "zero-shot on %d unseen classes: map %.4f (real) %.4f (binary)",
        len(split.unseen),
        report_real.map_all,
        report_binary.map_all,
    )
    return TrainResult(
        state=state, split=split, report_real=report_real, report_binary=report_binary
    )


# ---------------------------------------------------------------------------
# checkpoint serialization
#
# layout: magic | u32 header length | header JSON (utf-8) | raw arrays.
# The header carries the config, completed epochs, metric history, the
# class split, and an array manifest (name, rows, cols) whose order fixes
# the byte layout. Arrays are float64 little-endian, C order.


@dataclass
class LoadedCheckpoint:
    config: TrainConfig
    model: OanModel
    teacher: TeacherModel
    dictionary: OntologyDictionary
    split: SeenUnseenSplit
    epochs_completed: int
    history: list


def _checkpoint_arrays(state: TrainState) -> list:
    arrays = [(f"student.{n}", state.model.parameters()[n].data) for n in PARAM_NAMES]
    arrays += [(f"teacher.{n}", state.teacher.params[n]) for n in TEACHER_PARAM_NAMES]
    arrays.append(("dictionary.keys", state.dictionary.keys))
    return arrays


def save_checkpoint(path, cfg: TrainConfig, state: TrainState, split: SeenUnseenSplit) -> None:
    arrays = _checkpoint_arrays(state)
    header = {
        "config": cfg.to_dict(),
        "epochs_completed": len(state.history),
        "history": state.history,
        "seen": [int(c) for c in split.seen],
        "unseen": [int(c) for c in split.unseen],
        "arrays": [[name, int(a.shape[0]), int(a.shape[1])] for name, a in arrays],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(_CK_LEN.pack(len(blob)))
        fh.write(blob)
        for _, a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path) -> LoadedCheckpoint:
    with open(path, "rb") as fh:
        buf = fh.read()

    def need(cond: bool, msg: str, offset: int):
        if not cond:
            raise FormatError(f"{msg} (byte {offset})")

    need(len(buf) >= len(CHECKPOINT_MAGIC), "file too short for magic", 0)
    magic = buf[: len(CHECKPOINT_MAGIC)]
    if magic != CHECKPOINT_MAGIC:
        if magic[:5] == CHECKPOINT_MAGIC[:5]:
            raise VersionError(
                f"unsupported checkpoint version {magic!r}, expected {CHECKPOINT_MAGIC!r}"
            )
        raise FormatError(f"bad magic {magic!r} (byte 0)")
    pos = len(CHECKPOINT_MAGIC)
    need(len(buf) >= pos + _CK_LEN.size, "file too short for header length", pos)
    (header_len,) = _CK_LEN.unpack_from(buf, pos)
    pos += _CK_LEN.size
    need(len(buf) >= pos + header_len, "file too short for header", pos)
    try:
        header = json.loads(buf[pos : pos + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"header is not valid JSON (byte {pos}): {exc}") from exc
    pos += header_len

    for key in ("config", "epochs_completed", "history", "seen", "unseen", "arrays"):
        need(key in header, f"header missing key '{key}'", pos)
    try:
        cfg = TrainConfig.from_dict(header["config"])
    except (ConfigError, TypeError) as exc:
        raise FormatError(f"invalid config in header: {exc}") from exc

    manifest = header["arrays"]
    expected = (
        [f"student.{n}" for n in PARAM_NAMES]
        + [f"teacher.{n}" for n in TEACHER_PARAM_NAMES]
        + ["dictionary.keys"]
    )
    names = [entry[0] for entry in manifest] if isinstance(manifest, list) else None
    need(names == expected, "array manifest does not match the expected layout", pos)

    arrays = {}
    for entry in manifest:
        need(
            isinstance(entry, list) and len(entry) == 3,
            "manifest entries must be [name, rows, cols]",
            pos,
        )
        name, rows, cols = entry
        need(
            isinstance(rows, int) and isinstance(cols, int) and rows >= 1 and cols >= 1,
            f"bad shape for array '{name}'",
            pos,
        )
        nbytes = rows * cols * 8
        need(len(buf) >= pos + nbytes, f"file truncated inside array '{name}'", pos)
        arrays[name] = (
            np.frombuffer(buf, dtype="<f8", count=rows * cols, offset=pos)
            .reshape(rows, cols)
            .astype(np.float64)
        )
        pos += nbytes
    need(pos == len(buf), f"{len(buf) - pos} trailing bytes after arrays", pos)

    try:
        model = OanModel(
            {n: Tensor(arrays[f"student.{n}"], requires_grad=True) for n in PARAM_NAMES}
        )
        teacher = TeacherModel(
            {n: arrays[f"teacher.{n}"] for n in TEACHER_PARAM_NAMES}, tau=cfg.tau
        )
        dictionary = OntologyDictionary.from_unit_keys(
            arrays["dictionary.keys"], momentum=cfg.momentum
        )
        split = SeenUnseenSplit(tuple(header["seen"]), tuple(header["unseen"]))
    except (ShapeError, ConfigError, DegenerateVectorError, TypeError) as exc:
        raise FormatError(f"checkpoint arrays fail validation: {exc}") from exc

    history = header["history"]
    need(isinstance(history, list), "history must be a list", pos)
    epochs_completed = header["epochs_completed"]
    need(
        isinstance(epochs_completed, int) and epochs_completed >= 0,
        "epochs_completed must be a non-negative integer",
        pos,
    )
    return LoadedCheckpoint(
        config=cfg,
        model=model,
        teacher=teacher,
        dictionary=dictionary,
        split=split,
        epochs_completed=epochs_completed,
        history=history,
    )
