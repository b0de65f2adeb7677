"""Input checks shared by the estimators."""
import numpy as np


def _array(X, name):
    if hasattr(X, "detach"):
        X = X.detach().cpu().numpy()
    X = np.asarray(X, dtype=np.float64)
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{name} contains non-finite values")
    return X


def check_images(X, channels=None, size=None, name="images"):
    X = _array(X, name)
    if X.ndim == 3:
        X = X[None]
    if X.ndim != 4:
        raise ValueError(f"{name} must be (N, C, H, W), got shape {X.shape}")
    if len(X) == 0:
        raise ValueError(f"{name} is empty")
    if channels is not None and X.shape[1] != channels:
        raise ValueError(f"{name} have {X.shape[1]} channels, expected {channels}")
    if size is not None and X.shape[2:] != (size, size):
        raise ValueError(f"{name} are {X.shape[2]}x{X.shape[3]}, expected {size}x{size}")
    return X


def check_cond(cond, n=None, dim=None, name="cond"):
    cond = _array(cond, name)
    if cond.ndim == 1:
        cond = cond[None]
    if cond.ndim != 2:
        raise ValueError(f"{name} must be (N, d), got shape {cond.shape}")
    if n is not None and len(cond) != n:
        raise ValueError(f"{name} has {len(cond)} rows for {n} samples")
    if dim is not None and cond.shape[1] != dim:
        raise ValueError(f"{name} has dimension {cond.shape[1]}, expected {dim}")
    return cond


def check_features(X, min_rows=2, name="features"):
    X = _array(X, name)
    if X.ndim != 2:
        raise ValueError(f"{name} must be an (N, d) matrix, got shape {X.shape}")
    if len(X) < min_rows:
        raise ValueError(f"{name} needs at least {min_rows} rows, got {len(X)}")
    return X
