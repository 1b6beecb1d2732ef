"""Per-cutout min-max normalization, PCA reduction and train/test splits."""

from dataclasses import dataclass

import numpy as np

from .binfmt import load_arrays, save_arrays


class DegenerateCutoutError(ValueError):
    """Raised for a constant image, which min-max scaling cannot normalize."""


def minmax_normalize(grid):
    """Scale one image to [0, 1] using its own min and max; returns the flat row-major vector."""
    x = np.asarray(grid, dtype=np.float64).ravel()
    if not np.all(np.isfinite(x)):
        raise ValueError("image contains non-finite pixels")
    lo, hi = x.min(), x.max()
    if hi == lo:
        raise DegenerateCutoutError("constant image cannot be min-max normalized")
    out = (x - lo) / (hi - lo)
    # Guard against rounding in the division so that the extremes are exact.
    out[x == lo] = 0.0
    out[x == hi] = 1.0
    return out


def normalize_batch(images):
    images = np.asarray(images, dtype=np.float64)
    return np.stack([minmax_normalize(im) for im in images]) if len(images) else images.reshape(0, -1)


@dataclass
class PcaModel:
    mean: np.ndarray
    components: np.ndarray  # (n_components, n_features), orthonormal rows
    eigenvalues: np.ndarray

    @property
    def n_components(self):
        return self.components.shape[0]

    def save(self, path):
        save_arrays(
            path, "pca", {"mean": self.mean, "components": self.components, "eigenvalues": self.eigenvalues}
        )

    @classmethod
    def load(cls, path):
        _, a = load_arrays(path, "pca")
        return cls(a["mean"], a["components"], a["eigenvalues"])


def fit_pca(train, n_components=21):
    """Fit PCA from the eigendecomposition of the sample covariance.

    Components are sign-fixed so that each row's largest-magnitude entry is
    positive; eigenvalues use the ``n - 1`` normalization.
    """
    X = np.asarray(train, dtype=np.float64)
    n, d = X.shape
    if not 1 <= n_components <= d:
        raise ValueError(f"n_components must be in [1, {d}]")
    if n < n_components + 1:
        raise ValueError(f"need at least {n_components + 1} training vectors, got {n}")
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = Xc.T @ Xc / (n - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals, kind="stable")[::-1][:n_components]
    evals = np.clip(evals[order], 0.0, None)
    comps = evecs[:, order].T.copy()
    idx = np.argmax(np.abs(comps), axis=1)
    signs = np.sign(comps[np.arange(n_components), idx])
    comps *= signs[:, None]
    return PcaModel(mean=mean, components=comps, eigenvalues=evals)


def project(model, v):
    """Project normalized vector(s) onto the retained components."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != model.mean.shape[0]:
        raise ValueError(
            f"expected raw normalized vectors of length {model.mean.shape[0]}, got {v.shape[-1]}"
        )
    return (v - model.mean) @ model.components.T


def split(n, train_fraction=0.8, rng=None):
    """Uniform unstratified shuffle split; returns (train_idx, test_idx)."""
    if n <= 0:
        raise ValueError("dataset must be non-empty")
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must be in (0, 1)")
    rng = rng if rng is not None else np.random.default_rng()
    perm = rng.permutation(n)
    n_train = int(np.floor(train_fraction * n + 0.5))
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])
