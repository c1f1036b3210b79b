"""Scikit-learn style wrapper around the training loop.

``OanEmbedder`` treats every class present in ``fit`` as a training class;
holding out classes for zero-shot evaluation is an experiment-level decision
(see ``trainer.run_training``), not something the estimator does behind your
back. After fitting, ``transform`` maps rows to unit-norm embeddings and
``predict`` assigns each row to the nearest class key in the ontology
dictionary.

Rows are tagged with a modality flag (0 = sketch, 1 = image), passed as a
keyword argument alongside X, so ``fit_transform`` is overridden to thread
it through.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .dataset import CrossModalDataset
from .errors import ConfigError, LabelError, ShapeError
from .losses import LossWeights
from .model import IMAGE, SKETCH
from .trainer import TrainConfig, embed_for_retrieval, fit_loop, prepare_state

__all__ = ["OanEmbedder"]


def _validated_modality(modality, n: int) -> np.ndarray:
    if modality is None:
        raise ConfigError(
            "modality is required: pass an array with 0 for sketch rows, 1 for image rows"
        )
    m = np.asarray(modality, dtype=np.intp)
    if m.shape != (n,):
        raise ShapeError(f"modality must have shape ({n},), got {m.shape}")
    if m.size and not np.isin(m, (SKETCH, IMAGE)).all():
        raise LabelError("modality flags must be 0 (sketch) or 1 (image)")
    return m


class OanEmbedder(BaseEstimator, TransformerMixin):
    """Cross-modal embedding model with an ontology-memory classifier.

    Parameters mirror the training configuration; ``lambda1``/``lambda2``/
    ``lambda3`` weight the semantic, inter-class independence and
    consistency terms of the objective. All validation is deferred to
    ``fit`` so ``get_params``/``set_params`` round-trip raw values.
    """

    def __init__(
        self,
        epochs: int = 15,
        batch_size: int = 16,
        learning_rate: float = 0.01,
        seed: int = 1,
        lambda1: float = 1.0,
        lambda2: float = 0.001,
        lambda3: float = 0.1,
        enable_independence: bool = True,
        enable_self_hcr: bool = True,
        enable_teacher_hcr: bool = False,
        literal_coefficients: bool = False,
        beta: float = 200.0,
        eta: float = 0.1,
        momentum: float = 0.01,
        tau: float = 1.0,
        hidden: int = 128,
        embed_dim: int = 32,
        num_semantic: int = 8,
        teacher_epochs: int = 3,
        mu: float = 0.0,
        sigma_sq: float = 0.5,
    ):
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.seed = seed
        self.lambda1 = lambda1
        self.lambda2 = lambda2
        self.lambda3 = lambda3
        self.enable_independence = enable_independence
        self.enable_self_hcr = enable_self_hcr
        self.enable_teacher_hcr = enable_teacher_hcr
        self.literal_coefficients = literal_coefficients
        self.beta = beta
        self.eta = eta
        self.momentum = momentum
        self.tau = tau
        self.hidden = hidden
        self.embed_dim = embed_dim
        self.num_semantic = num_semantic
        self.teacher_epochs = teacher_epochs
        self.mu = mu
        self.sigma_sq = sigma_sq

    def _config(self, d_in: int) -> TrainConfig:
        # num_unseen and eval_ks only matter to run_training's own split,
        # which the estimator never performs
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            seed=self.seed,
            loss_weights=LossWeights(
                lambda1=self.lambda1, lambda2=self.lambda2, lambda3=self.lambda3
            ),
            enable_independence=self.enable_independence,
            enable_self_hcr=self.enable_self_hcr,
            enable_teacher_hcr=self.enable_teacher_hcr,
            literal_coefficients=self.literal_coefficients,
            beta=self.beta,
            eta=self.eta,
            momentum=self.momentum,
            tau=self.tau,
            d_in=d_in,
            hidden=self.hidden,
            embed_dim=self.embed_dim,
            num_semantic=self.num_semantic,
            teacher_epochs=self.teacher_epochs,
            mu=self.mu,
            sigma_sq=self.sigma_sq,
        )

    def fit(self, X, y, modality=None):
        """Train on all provided classes.

        Every class needs at least one sketch row and one image row; labels
        may be arbitrary hashable values and are recovered by ``predict``.
        """
        X, y = check_X_y(X, y, dtype=np.float64)
        m = _validated_modality(modality, X.shape[0])
        self.classes_, dense = np.unique(y, return_inverse=True)
        dataset = CrossModalDataset(X, dense.astype(np.intp), m)
        cfg = self._config(X.shape[1])
        seen = tuple(range(len(self.classes_)))
        state = prepare_state(cfg, dataset, seen)
        fit_loop(state, dataset, seen, cfg)
        self.model_ = state.model
        self.dictionary_ = state.dictionary
        self.teacher_ = state.teacher
        self.history_ = state.history
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X, modality=None) -> np.ndarray:
        """Unit-norm embeddings, one row per input row."""
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ShapeError(
                f"X has {X.shape[1]} features, the model was fit with {self.n_features_in_}"
            )
        m = _validated_modality(modality, X.shape[0])
        return embed_for_retrieval(self.model_, X, m)

    def fit_transform(self, X, y=None, modality=None, **fit_params) -> np.ndarray:
        # the mixin's version cannot forward the modality flags
        return self.fit(X, y, modality=modality, **fit_params).transform(X, modality=modality)

    def predict(self, X, modality=None) -> np.ndarray:
        """Label of the nearest ontology key (cosine, both sides unit-norm)."""
        z = self.transform(X, modality=modality)
        scores = z @ self.dictionary_.keys.T
        return self.classes_[np.argmax(scores, axis=1)]
