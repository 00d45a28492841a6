"""Feature standardization, learned Mahalanobis metric, and a per-feature
mutual-information diagnostic.

The metric is learned by logistic discriminant metric learning: same-device
pairs should score small distances, cross-device pairs large ones, with
p_ij = sigmoid(b - d_M(x_i, x_j)) treated as the probability the pair shares
a device. d_M is the squared Euclidean distance after the linear map L, so
M = L^T L is positive semidefinite by construction and gradient steps on L
need no projection.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .features import N_TOTAL, FeatureVector

MAX_HALVINGS = 60


@dataclass
class MetricModel:
    means: np.ndarray
    stds: np.ndarray
    L: np.ndarray
    bias: float
    seed: int
    trained_on: tuple[int, int] = (0, 0)  # (devices, samples)

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=float)
        self.stds = np.asarray(self.stds, dtype=float)
        self.L = np.asarray(self.L, dtype=float)
        if np.any(self.stds <= 0):
            raise ValueError("stds must be positive")
        if not np.all(np.isfinite(self.L)):
            raise ValueError("L must be finite")
        if self.L.shape[0] > self.L.shape[1]:
            raise ValueError("projection dimension exceeds input dimension")

    @property
    def d_prime(self) -> int:
        return self.L.shape[0]


def _as_matrix(features, labels=None) -> tuple[np.ndarray, np.ndarray]:
    """Accept a list of FeatureVectors (labels from device ids) or (X, labels)."""
    if labels is None:
        X = np.array([fv.values for fv in features])
        y = np.array([fv.device_id for fv in features])
    else:
        X = np.asarray(features, dtype=float)
        y = np.asarray(labels)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError("features and labels must align")
    return X, y


def standardize_fit(features) -> tuple[np.ndarray, np.ndarray]:
    """Per-dimension mean and population std; zero stds become 1 so constant
    dimensions pass through frozen instead of dividing by zero."""
    if isinstance(features, np.ndarray):
        X = features
    else:
        X = np.array([fv.values for fv in features])
    if len(X) < 2:
        raise ValueError("need >= 2 vectors to standardize")
    means = X.mean(axis=0)
    stds = X.std(axis=0)
    stds[stds == 0] = 1.0
    return means, stds


def _mm(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # fixed-order matmul: result bits do not depend on BLAS thread count
    return np.einsum("ij,jk->ik", a, b)


def transform(model: MetricModel, v):
    """Map features into the learned space: L @ ((v - means) / stds).

    Accepts a FeatureVector, a (d,) vector, or an (n, d) matrix.
    """
    if isinstance(v, FeatureVector):
        v = v.values
    v = np.asarray(v, dtype=float)
    if v.shape[-1] != model.L.shape[1]:
        raise ValueError(
            f"dimension mismatch: model expects {model.L.shape[1]}, got {v.shape[-1]}"
        )
    z = np.atleast_2d((v - model.means) / model.stds)
    out = _mm(z, model.L.T)
    return out[0] if v.ndim == 1 else out


def _build_pairs(y: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """All same-device pairs plus an equal-size subsample of cross pairs."""
    i, j = np.triu_indices(len(y), k=1)
    same = y[i] == y[j]
    si, sj = i[same], j[same]
    di, dj = i[~same], j[~same]
    n_same = len(si)
    if n_same == 0:
        raise ValueError("no same-device pairs: need >= 2 devices with >= 2 samples")
    if len(di) > n_same:
        pick = rng.choice(len(di), size=n_same, replace=False)
        pick.sort()
        di, dj = di[pick], dj[pick]
    pi = np.concatenate([si, di])
    pj = np.concatenate([sj, dj])
    is_same = np.zeros(len(pi), dtype=bool)
    is_same[:n_same] = True
    return pi, pj, is_same


def _objective(L, b, D, is_same):
    LD = _mm(D, L.T)
    d = np.einsum("ij,ij->i", LD, LD)
    t = b - d
    # log sigmoid(t) = -log(1+e^-t); log(1-sigmoid(t)) = -log(1+e^t)
    return -(np.logaddexp(0, -t[is_same]).sum() + np.logaddexp(0, t[~is_same]).sum())


def train_ldml(
    features,
    labels=None,
    d_prime: int | None = None,
    iterations: int = 200,
    step: float = 1e-3,
    seed: int = 0,
    return_history: bool = False,
):
    """Learn a MetricModel by gradient ascent on the pairwise log-likelihood.

    Standardization is fit internally on the given vectors. Each iteration
    takes one ascent step on (L, b) with step halving until the objective
    does not decrease; training stops early once no halved step helps.
    """
    X, y = _as_matrix(features, labels)
    label_set, counts = np.unique(y, return_counts=True)
    if np.count_nonzero(counts >= 2) < 2:
        raise ValueError("need >= 2 devices with >= 2 samples each")
    means, stds = standardize_fit(X)
    Z = (X - means) / stds
    d = Z.shape[1]
    if d_prime is None:
        d_prime = d
    if not (1 <= d_prime <= d):
        raise ValueError(f"d_prime must be in [1, {d}]")

    rng = np.random.default_rng(seed)
    pi, pj, is_same = _build_pairs(y, rng)
    D = Z[pi] - Z[pj]

    L = np.eye(d)[:d_prime]
    LD0 = _mm(D, L.T)
    b = float(np.median(np.einsum("ij,ij->i", LD0, LD0)))

    obj = _objective(L, b, D, is_same)
    history = [obj]
    for it in range(iterations):
        LD = _mm(D, L.T)
        dist = np.einsum("ij,ij->i", LD, LD)
        p = expit(b - dist)
        c = np.where(is_same, 1.0, 0.0) - p
        S = _mm(D.T, c[:, None] * D)
        grad_L = -2.0 * _mm(L, S)
        grad_b = c.sum()
        if not (np.all(np.isfinite(grad_L)) and np.isfinite(grad_b)):
            raise RuntimeError(f"non-finite gradient at iteration {it}")
        accepted = False
        trial = step
        for _ in range(MAX_HALVINGS):
            L_new = L + trial * grad_L
            b_new = b + trial * grad_b
            obj_new = _objective(L_new, b_new, D, is_same)
            if not np.isfinite(obj_new):
                raise RuntimeError(f"non-finite objective at iteration {it}")
            if obj_new >= obj:
                accepted = True
                break
            trial /= 2.0
        if not accepted:
            break  # no step length improves: converged
        L, b, obj, step = L_new, b_new, obj_new, trial
        history.append(obj)

    model = MetricModel(
        means=means,
        stds=stds,
        L=L,
        bias=b,
        seed=seed,
        trained_on=(len(label_set), len(X)),
    )
    if return_history:
        return model, history
    return model


def save_metric_model(model: MetricModel, path) -> None:
    payload = {
        "means": model.means.tolist(),
        "stds": model.stds.tolist(),
        "L": model.L.tolist(),
        "bias": model.bias,
        "d_prime": model.d_prime,
        "seed": model.seed,
        "trained_on": list(model.trained_on),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True)
        fh.write("\n")


def load_metric_model(path) -> MetricModel:
    with open(path) as fh:
        payload = json.load(fh)
    L = np.asarray(payload["L"], dtype=float)
    if L.shape[0] != payload["d_prime"]:
        raise ValueError("d_prime does not match L")
    trained_on = tuple(payload.get("trained_on", (0, 0)))
    return MetricModel(
        means=payload["means"],
        stds=payload["stds"],
        L=L,
        bias=float(payload["bias"]),
        seed=int(payload["seed"]),
        trained_on=trained_on,
    )


def feature_mutual_information(features, labels=None, bins: int = 10) -> np.ndarray:
    """Plug-in histogram MI (bits) between each feature and the device label.

    Each dimension is binned into `bins` equal-width bins over its observed
    range; constant dimensions get MI 0.
    """
    X, y = _as_matrix(features, labels)
    if bins < 2:
        raise ValueError("bins must be >= 2")
    label_set, y_idx = np.unique(y, return_inverse=True)
    if len(label_set) < 2:
        raise ValueError("mutual information needs >= 2 labels")
    n = len(X)
    n_labels = len(label_set)
    out = np.zeros(X.shape[1])
    for dim in range(X.shape[1]):
        v = X[:, dim]
        lo, hi = v.min(), v.max()
        if hi == lo:
            continue
        edges = np.linspace(lo, hi, bins + 1)
        b_idx = np.clip(np.searchsorted(edges[1:-1], v, side="right"), 0, bins - 1)
        joint = np.zeros((bins, n_labels))
        np.add.at(joint, (b_idx, y_idx), 1.0)
        joint /= n
        pb = joint.sum(axis=1, keepdims=True)
        pl = joint.sum(axis=0, keepdims=True)
        nz = joint > 0
        out[dim] = np.sum(joint[nz] * np.log2(joint[nz] / (pb @ pl)[nz]))
    return out
