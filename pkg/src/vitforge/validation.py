"""Input validation helpers for the estimator API."""

from __future__ import annotations

import numpy as np


class NotFittedError(RuntimeError):
    """Estimator used before fit()."""


def check_is_fitted(estimator, attribute: str = "params_") -> None:
    if getattr(estimator, attribute, None) is None:
        raise NotFittedError(
            f"{type(estimator).__name__} is not fitted yet; call fit() first"
        )


def check_image_batch(X, channels=None, image_size=None) -> np.ndarray:
    """Coerce to a float batch of shape (n, C, H, W) and sanity-check it."""
    X = np.asarray(X)
    if X.ndim == 3:
        X = X[None]
    if X.ndim != 4:
        raise ValueError(f"expected images of shape (n, C, H, W), got {X.shape}")
    if X.shape[0] == 0:
        raise ValueError("empty image batch")
    if channels is not None and X.shape[1] != channels:
        raise ValueError(f"expected {channels} channels, got {X.shape[1]}")
    if image_size is not None and X.shape[2:] != (image_size, image_size):
        raise ValueError(
            f"expected {image_size}x{image_size} images, got {X.shape[2]}x{X.shape[3]}"
        )
    if not np.issubdtype(X.dtype, np.floating):
        X = X.astype(np.float32)
    if not np.all(np.isfinite(X)):
        raise ValueError("images contain non-finite values")
    return X


def check_labels(y, n_samples: int) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1 or y.shape[0] != n_samples:
        raise ValueError(f"labels must be a length-{n_samples} vector, got {y.shape}")
    return y
