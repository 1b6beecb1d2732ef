"""L2-penalized logistic regression with k-fold selection of the penalty strength."""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit as sigmoid

from .binfmt import load_arrays, save_arrays


@dataclass
class LogRegModel:
    weights: np.ndarray
    bias: float
    lam: float
    n_iter: int = 0
    grad_norm: float = float("nan")

    def save(self, path):
        save_arrays(
            path,
            "logreg",
            {"weights": self.weights},
            {"bias": self.bias, "lambda": self.lam, "n_iter": self.n_iter, "grad_norm": self.grad_norm},
        )

    @classmethod
    def load(cls, path):
        m, a = load_arrays(path, "logreg")
        return cls(a["weights"], m["bias"], m["lambda"], m["n_iter"], m["grad_norm"])


@dataclass
class CvPlan:
    folds: int = 2
    lambda_grid: tuple = field(default_factory=lambda: tuple(np.logspace(-4, 4, 10)))
    max_iter: int = 10_000
    tol: float = 1e-8

    def __post_init__(self):
        if self.folds < 2:
            raise ValueError("folds must be >= 2")
        if len(self.lambda_grid) == 0 or min(self.lambda_grid) < 0:
            raise ValueError("lambda_grid must be non-empty and non-negative")


def log_loss(w, b, X, y):
    """Mean binary cross-entropy, evaluated stably in terms of the logits."""
    z = X @ w + b
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


def objective(w, b, X, y, lam):
    return log_loss(w, b, X, y) + 0.5 * lam * float(w @ w)


def gradient(w, b, X, y, lam):
    r = sigmoid(X @ w + b) - y
    n = X.shape[0]
    return X.T @ r / n + lam * w, float(r.sum() / n)


def train(X, y, lam, max_iter=10_000, tol=1e-8, w0=None, b0=0.0, history=None):
    """Full-batch gradient descent with Armijo backtracking.

    The trial step is the Barzilai-Borwein length from the previous two
    iterates; every accepted step satisfies sufficient decrease, so the
    objective is non-increasing.  ``history``, if a list, receives the
    objective after each accepted step.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if not set(np.unique(y)) <= {0.0, 1.0}:
        raise ValueError("labels must be binary 0/1")
    w = np.zeros(X.shape[1]) if w0 is None else np.array(w0, dtype=np.float64)
    b = float(b0)
    f = objective(w, b, X, y, lam)
    if not np.isfinite(f):
        raise FloatingPointError("non-finite loss at start; are the features normalized?")
    gw, gb = gradient(w, b, X, y, lam)
    step = 1.0
    it = 0
    gnorm = float(np.sqrt(gw @ gw + gb * gb))
    while it < max_iter and gnorm >= tol:
        t = step
        while True:
            w_new, b_new = w - t * gw, b - t * gb
            f_new = objective(w_new, b_new, X, y, lam)
            if not np.isfinite(f_new):
                raise FloatingPointError(f"non-finite loss at iteration {it}")
            gw_new, gb_new = gradient(w_new, b_new, X, y, lam)
            gnorm_new = float(np.sqrt(gw_new @ gw_new + gb_new * gb_new))
            # Near the optimum the Armijo decrease drops below the rounding of f,
            # so a step that keeps f and shrinks the gradient is also accepted.
            if f_new <= f - 1e-4 * t * gnorm**2 or (f_new <= f and gnorm_new < gnorm):
                break
            t *= 0.5
            if t < 1e-20:
                break
        if t < 1e-20:
            break
        sw, sb = w_new - w, b_new - b
        dw, db = gw_new - gw, gb_new - gb
        sy = float(sw @ dw + sb * db)
        step = float(sw @ sw + sb * sb) / sy if sy > 0 else 2.0 * t
        w, b, f, gw, gb, gnorm = w_new, b_new, f_new, gw_new, gb_new, gnorm_new
        it += 1
        if history is not None:
            history.append(f)
    return LogRegModel(weights=w, bias=b, lam=float(lam), n_iter=it, grad_norm=gnorm)


def predict_proba(model, X):
    """Probability of the CSO class."""
    return sigmoid(np.asarray(X, dtype=np.float64) @ model.weights + model.bias)


def predict(model, X):
    return (predict_proba(model, X) >= 0.5).astype(np.int64)


def fold_ids(n, folds, rng):
    """Random fold assignment with sizes differing by at most one."""
    ids = np.arange(n) % folds
    return ids[rng.permutation(n)]


def fold_losses(X, y, plan, folds):
    """Validation log-loss per (lambda, fold); rows follow the sorted unique grid."""
    grid = np.unique(np.asarray(plan.lambda_grid, dtype=np.float64))
    out = np.empty((grid.size, plan.folds))
    for i, lam in enumerate(grid):
        for k in range(plan.folds):
            tr, va = folds != k, folds == k
            m = train(X[tr], y[tr], lam, plan.max_iter, plan.tol)
            out[i, k] = log_loss(m.weights, m.bias, X[va], y[va])
    return grid, out


def cross_validate(X, y, plan, rng):
    """Pick the lambda with the lowest mean validation log-loss (ties -> larger), refit on all data."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.shape[0] < 2 * plan.folds:
        raise ValueError(f"need at least {2 * plan.folds} samples for {plan.folds}-fold CV")
    folds = fold_ids(X.shape[0], plan.folds, rng)
    grid, losses = fold_losses(X, y, plan, folds)
    means = losses.mean(axis=1)
    best = np.flatnonzero(means == means.min())[-1]
    lam = float(grid[best])
    return lam, train(X, y, lam, plan.max_iter, plan.tol)
