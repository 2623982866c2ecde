"""Scikit-learn style classifier wrapping the ViT training stack.

``ViTClassifier`` follows the estimator conventions — constructor arguments
stored untouched, ``get_params``/``set_params``, fitted attributes with a
trailing underscore — so it composes with sklearn tooling (``clone``,
``cross_val_score``) without depending on sklearn itself.
"""

from __future__ import annotations

import inspect

import numpy as np

from vitforge.checkpoint import load_checkpoint, replace_head, save_checkpoint
from vitforge.data import normalize
from vitforge.model import ViTConfig, forward, init_params
from vitforge.ops import Rng, softmax_rows
from vitforge.training import TrainPlan, train
from vitforge.validation import check_image_batch, check_is_fitted, check_labels


class ViTClassifier:
    """Vision Transformer image classifier with fit/predict semantics.

    Inputs are image batches of shape (n, channels, image_size, image_size)
    with values in [0, 1]; set ``apply_normalize=False`` if they are already
    channel-normalized. The defaults are the ViT-Base fine-tuning recipe
    (AdamW, lr 2e-5, batch 8, 50 epochs, frozen backbone); shrink the
    architecture for desk-scale experiments.
    """

    def __init__(
        self,
        image_size=224,
        channels=3,
        patch_size=16,
        hidden_dim=768,
        mlp_dim=3072,
        num_heads=12,
        num_layers=12,
        epochs=50,
        batch_size=8,
        learning_rate=2e-5,
        weight_decay=0.01,
        freeze="head_only",
        validation_fraction=0.2,
        apply_normalize=True,
        checkpoint=None,
        seed=0,
    ):
        self.image_size = image_size
        self.channels = channels
        self.patch_size = patch_size
        self.hidden_dim = hidden_dim
        self.mlp_dim = mlp_dim
        self.num_heads = num_heads
        self.num_layers = num_layers
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.freeze = freeze
        self.validation_fraction = validation_fraction
        self.apply_normalize = apply_normalize
        self.checkpoint = checkpoint
        self.seed = seed

    # -- sklearn plumbing ---------------------------------------------------

    @classmethod
    def _param_names(cls):
        signature = inspect.signature(cls.__init__)
        return [p for p in signature.parameters if p != "self"]

    def get_params(self, deep=True):
        return {name: getattr(self, name) for name in self._param_names()}

    def set_params(self, **params):
        valid = set(self._param_names())
        for key, value in params.items():
            if key not in valid:
                raise ValueError(f"invalid parameter {key!r} for ViTClassifier")
            setattr(self, key, value)
        return self

    # -- core API ------------------------------------------------------------

    def _config(self, num_classes: int) -> ViTConfig:
        return ViTConfig(
            image_size=self.image_size,
            channels=self.channels,
            patch_size=self.patch_size,
            hidden_dim=self.hidden_dim,
            mlp_dim=self.mlp_dim,
            num_heads=self.num_heads,
            num_layers=self.num_layers,
            num_classes=num_classes,
        )

    def _prepare(self, X):
        X = check_image_batch(X, channels=self.channels, image_size=self.image_size)
        if self.apply_normalize:
            X = np.stack([normalize(x) for x in X])
        return X

    def _initial_params(self, config, rng):
        if self.checkpoint is None:
            return init_params(config, rng.child("init"))
        loaded = load_checkpoint(self.checkpoint)
        backbone = {
            f: getattr(loaded.config, f)
            for f in ("image_size", "channels", "patch_size", "hidden_dim",
                      "mlp_dim", "num_heads", "num_layers")
        }
        expected = {f: getattr(config, f) for f in backbone}
        if backbone != expected:
            raise ValueError(
                f"checkpoint architecture {backbone} does not match estimator {expected}"
            )
        if loaded.config.num_classes != config.num_classes:
            loaded = replace_head(loaded, config.num_classes, rng.child("head"))
        return loaded.params

    def fit(self, X, y, X_val=None, y_val=None):
        """Train on (X, y); hold out ``validation_fraction`` for best-epoch
        selection unless an explicit validation set is given."""
        X = self._prepare(X)
        y = check_labels(y, X.shape[0])
        self.classes_, y_indexed = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("need at least two classes to fit")

        rng = Rng(self.seed)
        config = self._config(len(self.classes_))
        params = self._initial_params(config, rng)

        if X_val is not None:
            X_val = self._prepare(X_val)
            y_val = check_labels(y_val, X_val.shape[0])
            index_of = {c: i for i, c in enumerate(self.classes_)}
            try:
                yv = np.array([index_of[v] for v in y_val], dtype=np.int64)
            except KeyError as exc:
                raise ValueError(f"validation label {exc} never seen in y") from exc
            train_x, train_y = list(X), y_indexed
            val_x, val_y = list(X_val), yv
        else:
            n = X.shape[0]
            n_val = max(1, int(round(n * self.validation_fraction)))
            if n_val >= n:
                raise ValueError("validation_fraction leaves no training data")
            order = rng.child("split").permutation(n)
            val_idx, train_idx = order[:n_val], order[n_val:]
            train_x = [X[i] for i in train_idx]
            train_y = y_indexed[train_idx]
            val_x = [X[i] for i in val_idx]
            val_y = y_indexed[val_idx]

        plan = TrainPlan(
            epochs=self.epochs,
            batch_size=self.batch_size,
            freeze_mode=self.freeze,
            seed=self.seed,
            learning_rate=self.learning_rate,
            weight_decay=self.weight_decay,
        )
        result = train(train_x, train_y, val_x, val_y, params, config, plan)
        self.config_ = config
        self.params_ = result.best_params
        self.history_ = result.history
        self.best_epoch_ = result.best_epoch
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        return self

    def decision_function(self, X):
        check_is_fitted(self)
        X = self._prepare(X)
        return forward(X, self.params_, self.config_)

    def predict_proba(self, X):
        logits = self.decision_function(X)
        return softmax_rows(logits.astype(np.float64))

    def predict(self, X):
        logits = self.decision_function(X)
        return self.classes_[np.argmax(logits, axis=1)]

    def score(self, X, y):
        y = np.asarray(y)
        return float(np.mean(self.predict(X) == y))

    def save_checkpoint(self, path):
        check_is_fitted(self)
        save_checkpoint(self.params_, self.config_, path)
        return path
