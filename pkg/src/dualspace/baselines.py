"""Reference retrieval systems: paired CCA, Cluster-CCA and random ranking."""

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .network import InputScaler
from .numerics import DEFAULT_RIDGE, cca_from_covariances, cca_solve
from .retrieval import DEFAULT_SCOPES, evaluate, evaluate_orders

DEFAULT_PAIR_BUDGET = 10_000


@dataclass
class LinearBaseline:
    kind: str
    proj_audio: np.ndarray
    proj_visual: np.ndarray
    mean_audio: np.ndarray
    mean_visual: np.ndarray
    correlations: np.ndarray
    scaler: InputScaler = None

    @property
    def k_out(self):
        return self.proj_audio.shape[1]

    def embed(self, features, modality):
        x = np.asarray(features, dtype=np.float64)
        if modality == "audio":
            if self.scaler is not None:
                x = self.scaler.audio(x)
            return (x - self.mean_audio) @ self.proj_audio
        if modality == "visual":
            if self.scaler is not None:
                x = self.scaler.visual(x)
            return (x - self.mean_visual) @ self.proj_visual
        raise ValidationError(f"unknown modality {modality!r}")

    def evaluate(self, test, scopes=DEFAULT_SCOPES):
        return evaluate(self.embed(test.audio, "audio"), self.embed(test.visual, "visual"),
                        test.labels, scopes, test.c)


def _prepared(train, normalize):
    scaler = InputScaler.fit(train.audio, train.visual) if normalize else None
    if scaler is None:
        return None, train.audio, train.visual
    return scaler, scaler.audio(train.audio), scaler.visual(train.visual)


def fit_cca_baseline(train, k_out=None, ridge=DEFAULT_RIDGE, normalize=True):
    """Paired linear CCA on (z-scored) raw features."""
    scaler, a, v = _prepared(train, normalize)
    k_out = train.c if k_out is None else k_out
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        sol = cca_solve(a, v, k_out, ridge)
    return LinearBaseline("cca", sol.wx, sol.wy, a.mean(axis=0), v.mean(axis=0),
                          sol.correlations, scaler)


def cluster_pairs(labels, budget=DEFAULT_PAIR_BUDGET, seed=0):
    """All same-class (audio index, visual index) pairs, capped per class.

    Classes with more than ``budget`` pairs keep a uniform random subset
    drawn without replacement.
    """
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    ia, iv = [], []
    for cat in np.unique(labels):
        members = np.flatnonzero(labels == cat)
        m = members.size
        total = m * m
        if total > budget:
            flat = np.sort(rng.choice(total, size=budget, replace=False))
        else:
            flat = np.arange(total)
        ia.append(members[flat // m])
        iv.append(members[flat % m])
    return np.concatenate(ia), np.concatenate(iv)


def fit_cluster_cca_baseline(train, k_out=None, ridge=DEFAULT_RIDGE, budget=DEFAULT_PAIR_BUDGET,
                             seed=0, normalize=True):
    """CCA over every intra-class cross-modal pair.

    Equivalent to stacking the paired rows and running :func:`cca_solve`, but
    the covariances are accumulated from per-sample pair multiplicities so the
    expanded matrices are never built.
    """
    for cat in range(train.c):
        if not np.any(train.labels == cat):
            raise ValidationError(f"category {cat} has no training samples")
    scaler, a, v = _prepared(train, normalize)
    k_out = train.c if k_out is None else k_out
    ia, iv = cluster_pairs(train.labels, budget, seed)
    n_pairs = ia.size
    if n_pairs < 2:
        raise ValidationError("Cluster-CCA needs at least two pairs")
    wa = np.bincount(ia, minlength=train.n).astype(np.float64)
    wv = np.bincount(iv, minlength=train.n).astype(np.float64)
    counts = np.zeros((train.n, train.n))
    np.add.at(counts, (ia, iv), 1.0)
    mean_a = wa @ a / n_pairs
    mean_v = wv @ v / n_pairs
    ac = a - mean_a
    vc = v - mean_v
    denom = n_pairs - 1
    sxx = (ac * wa[:, None]).T @ ac / denom
    syy = (vc * wv[:, None]).T @ vc / denom
    sxy = ac.T @ (counts @ vc) / denom
    sol = cca_from_covariances(sxx, syy, sxy, k_out, ridge)
    return LinearBaseline("cluster_cca", sol.wx, sol.wy, mean_a, mean_v, sol.correlations, scaler)


def random_orders(n, seed):
    """One independent uniform shuffle of ``range(n)`` per query, per direction."""
    rng = np.random.default_rng(seed)
    a2v = np.stack([rng.permutation(n) for _ in range(n)])
    v2a = np.stack([rng.permutation(n) for _ in range(n)])
    return a2v, v2a


def random_baseline(test, seed=0, scopes=DEFAULT_SCOPES):
    """Evaluate rankings that ignore the features entirely."""
    a2v, v2a = random_orders(test.n, seed)
    return evaluate_orders(a2v, v2a, test.labels, scopes, test.c)


def expected_random_ap(n, relevant):
    """Closed-form mean AP of a uniformly random ranking.

    With ``R`` relevant items among ``N``::

        E[AP] = (R - 1)/(N - 1) + H_N (N - R) / (N (N - 1))

    where ``H_N`` is the ``N``-th harmonic number.
    """
    if n == 1:
        return 1.0
    h = np.sum(1.0 / np.arange(1, n + 1))
    return (relevant - 1) / (n - 1) + h * (n - relevant) / (n * (n - 1))
