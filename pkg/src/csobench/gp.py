"""Nearest-neighbor local-kriging Gaussian-process classifier.

Each query is predicted from its ``k`` nearest training points only: the
posterior mean and variance of a zero-mean GP conditioned on those neighbors,
with the class labels one-hot encoded as two regression targets.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .binfmt import load_arrays, save_arrays
from .kernels import MaternKernel, matern


class GpConditioningError(RuntimeError):
    pass


@dataclass
class GpModel:
    train_features: np.ndarray
    train_labels: np.ndarray  # (n, 2) one-hot
    k_neighbors: int = 28
    kernel: MaternKernel = field(default_factory=MaternKernel)
    nugget: float = 1e-5
    ambiguity_threshold: float = 0.2

    def __post_init__(self):
        self.train_features = np.asarray(self.train_features, dtype=np.float64)
        self.train_labels = np.asarray(self.train_labels, dtype=np.float64)
        n = self.train_features.shape[0]
        if self.train_labels.shape != (n, 2):
            raise ValueError("train_labels must be an (n, 2) one-hot array")
        if not np.allclose(self.train_labels.sum(axis=1), 1.0):
            raise ValueError("each label row must sum to 1")
        if not 1 <= self.k_neighbors <= n:
            raise ValueError(f"k_neighbors must be in [1, {n}]")
        if self.nugget < 0:
            raise ValueError("nugget must be non-negative")

    def save(self, path):
        meta = {
            "nu": self.kernel.nu,
            "length_scale": self.kernel.length_scale,
            "variance": self.kernel.variance,
            "k_neighbors": self.k_neighbors,
            "nugget": self.nugget,
            "ambiguity_threshold": self.ambiguity_threshold,
        }
        save_arrays(path, "gp", {"features": self.train_features, "labels": self.train_labels}, meta)

    @classmethod
    def load(cls, path):
        m, a = load_arrays(path, "gp")
        kern = MaternKernel(m["nu"], m["length_scale"], m["variance"])
        return cls(a["features"], a["labels"], m["k_neighbors"], kern, m["nugget"], m["ambiguity_threshold"])


@dataclass
class GpPrediction:
    mean: np.ndarray
    variance: float
    label: int
    ambiguous: bool


def one_hot(labels, n_classes=2):
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.size, n_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def fit(features, labels, **kwargs):
    """Build a model from integer labels (0 = single, 1 = CSO)."""
    return GpModel(features, one_hot(labels), **kwargs)


def find_neighbors(query, model):
    """Exact k-NN by Euclidean distance; ties go to the lower training index."""
    q = np.asarray(query, dtype=np.float64)
    d2 = np.sum((model.train_features - q) ** 2, axis=1)
    return np.argsort(d2, kind="stable")[: model.k_neighbors]


def _pairwise(a, b):
    return np.sqrt(np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=-1))


def _factor(K, nugget, scale):
    n = K.shape[0]
    eye = np.eye(n)
    try:
        return cho_factor(K + nugget * eye, lower=True)
    except LinAlgError:
        pass
    jitter = max(nugget, 1e-12 * scale)
    while jitter <= 1e-2 * scale:
        jitter *= 10.0
        try:
            return cho_factor(K + jitter * eye, lower=True)
        except LinAlgError:
            continue
    w = np.linalg.eigvalsh(K)
    raise GpConditioningError(
        f"neighbor covariance not positive definite after jitter up to {jitter:.1e}: "
        f"eigenvalues in [{w[0]:.3e}, {w[-1]:.3e}], nugget {nugget:.1e}"
    )


def posterior(query, model):
    q = np.asarray(query, dtype=np.float64)
    nn = find_neighbors(q, model)
    Xn = model.train_features[nn]
    kern = model.kernel
    K = matern(_pairwise(Xn, Xn), kern)
    kq = matern(np.sqrt(np.sum((Xn - q) ** 2, axis=1)), kern)
    fac = _factor(K, model.nugget, kern.variance)
    alpha = cho_solve(fac, model.train_labels[nn])
    mean = kq @ alpha
    var = kern.variance - kq @ cho_solve(fac, kq)
    label = int(np.argmax(mean))
    return GpPrediction(
        mean=mean,
        variance=max(float(var), 0.0),
        label=label,
        ambiguous=bool(abs(mean[0] - mean[1]) < model.ambiguity_threshold),
    )


def classify_batch(queries, model):
    return [posterior(q, model) for q in np.asarray(queries, dtype=np.float64).reshape(-1, model.train_features.shape[1])]
