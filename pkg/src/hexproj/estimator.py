"""scikit-learn style classifier wrapping the harness models."""
import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .datasets import LabeledImageSet, ShiftRecipe
from .exceptions import InputError
from .harness import ExperimentConfig, _rngs, train_model, wire_method
from .validation import check_images, check_labels


class HexClassifier(ClassifierMixin, BaseEstimator):
    """Image classifier for any of the method codes B, M, N, E, A, H, V, L.

    ``X`` is an (n, m, m) stack of images with values in [0, 256). Without an
    explicit validation set, ``validation_fraction`` of the training data is
    held out for best-epoch checkpointing (set it to 0 to keep the last epoch).
    """

    def __init__(self, method="H", epochs=20, learning_rate=1e-3, batch_size=64,
                 encoder="mlp", h_width=32, hidden=64, g_width=32, levels=16,
                 directions=("deg0",), lambda_loss=1.0, adv_scale=1.0,
                 validation_fraction=0.2, random_state=0):
        self.method = method
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.encoder = encoder
        self.h_width = h_width
        self.hidden = hidden
        self.g_width = g_width
        self.levels = levels
        self.directions = directions
        self.lambda_loss = lambda_loss
        self.adv_scale = adv_scale
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def _config(self, n_classes, side):
        recipe = ShiftRecipe(n_classes=n_classes, side=side)
        return ExperimentConfig(recipe=recipe, method=self.method, epochs=self.epochs,
                                learning_rate=self.learning_rate, batch_size=self.batch_size,
                                seed=self.random_state, encoder=self.encoder,
                                h_width=self.h_width, hidden=self.hidden, g_width=self.g_width,
                                levels=self.levels, directions=tuple(self.directions),
                                lambda_loss=self.lambda_loss, adv_scale=self.adv_scale)

    def fit(self, X, y, X_val=None, y_val=None):
        X = check_images(X)
        y = np.asarray(y)
        if y.ndim != 1 or len(y) != len(X):
            raise InputError(f"expected {len(X)} labels, got shape {y.shape}")
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise InputError("need at least two classes")
        cfg = self._config(len(self.classes_), X.shape[1])
        init_rng, shuffle_rng, disc_rng = _rngs(cfg.seed)

        if X_val is not None:
            X_val = check_images(X_val)
            val_idx = np.searchsorted(self.classes_, np.asarray(y_val))
            if np.any(val_idx >= len(self.classes_)) or \
                    np.any(self.classes_[np.minimum(val_idx, len(self.classes_) - 1)] != y_val):
                raise InputError("validation labels contain unseen classes")
            train = LabeledImageSet(X, y_idx)
            val = LabeledImageSet(X_val, check_labels(val_idx, len(X_val)))
        else:
            order = np.random.default_rng(cfg.seed).permutation(len(X))
            n_val = int(round(self.validation_fraction * len(X)))
            train = LabeledImageSet(X[order[n_val:]], y_idx[order[n_val:]])
            val = LabeledImageSet(X[order[:n_val]], y_idx[order[:n_val]])

        self.model_ = wire_method(cfg, init_rng, disc_rng)
        if len(val):
            self.history_, self.best_epoch_ = train_model(
                self.model_, train, val, cfg.epochs, cfg.batch_size, shuffle_rng)
        else:
            self.history_, self.best_epoch_ = _train_last(self.model_, train, cfg, shuffle_rng)
        self.n_features_in_ = X.shape[1] * X.shape[2]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        return self.model_.decision_function(check_images(X))

    def predict(self, X):
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]


def _train_last(model, train, cfg, shuffle_rng):
    history = []
    n = len(train)
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(n)
        losses = [model.step(train.images[order[s:s + cfg.batch_size]],
                             train.labels[order[s:s + cfg.batch_size]])
                  for s in range(0, n - cfg.batch_size + 1, cfg.batch_size)]
        history.append({"epoch": epoch, "step_loss": float(np.mean(losses)) if losses else np.nan})
    return history, cfg.epochs - 1
