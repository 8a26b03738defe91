"""Histogram gradient boosting with depth-limited trees and instance weights.

Second-order (Newton) boosting in the XGBoost style: each tree is grown level
by level on binned features, splits maximise the regularised gain
``GL^2/(HL+lam) + GR^2/(HR+lam) - G^2/(H+lam)`` and leaves take
``-G/(H+lam)`` scaled by the learning rate. Rows carry weights, which enter
both ``g`` and ``h``; the ``min_leaf_weight`` constraint is on the hessian sum.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray
from scipy.special import expit, log_expit

from ..errors import ConfigurationError, FoldError


@dataclass(frozen=True)
class BoostingParams:
    n_trees: int = 300
    max_depth: int = 2
    learning_rate: float = 0.1
    min_leaf_weight: float = 10.0
    subsample: float = 0.8
    validation_fraction: float = 0.2
    patience: int = 50
    max_bins: int = 64
    reg_lambda: float = 1.0

    def __post_init__(self) -> None:
        if self.n_trees < 1 or self.max_depth < 1:
            raise ConfigurationError("n_trees and max_depth must be >= 1")
        if not 0 < self.learning_rate <= 1:
            raise ConfigurationError("learning_rate must lie in (0, 1]")
        if not 0 < self.subsample <= 1:
            raise ConfigurationError("subsample must lie in (0, 1]")
        if not 0 <= self.validation_fraction < 1:
            raise ConfigurationError("validation_fraction must lie in [0, 1)")
        if not 2 <= self.max_bins <= 256:
            raise ConfigurationError("max_bins must lie in [2, 256]")


@dataclass
class _Tree:
    feature: NDArray[np.int64]  # internal nodes, heap order
    threshold: NDArray[np.float64]  # go left when x <= threshold
    value: NDArray[np.float64]  # leaves, left to right

    def apply(self, X: NDArray[np.float64]) -> NDArray[np.float64]:
        n = X.shape[0]
        node = np.zeros(n, dtype=np.int64)
        rows = np.arange(n)
        depth = int(np.log2(self.value.shape[0]))
        for _ in range(depth):
            right = X[rows, self.feature[node]] > self.threshold[node]
            node = 2 * node + 1 + right
        return self.value[node - (self.value.shape[0] - 1)]


def _squared(y, w, raw):
    return w * (raw - y), w


def _logistic(y, w, raw):
    p = expit(raw)
    return w * (p - y), w * p * (1.0 - p)


def _squared_loss(y, w, raw):
    return float(np.sum(w * (raw - y) ** 2) / max(w.sum(), 1e-300))


def _logistic_loss(y, w, raw):
    return float(-np.sum(w * (y * log_expit(raw) + (1 - y) * log_expit(-raw))) / max(w.sum(), 1e-300))


@dataclass
class GradientBoostedTrees:
    """Boosted regression trees for squared error or weighted log-loss.

    ``predict`` returns the mean for ``loss="squared"`` and a probability for
    ``loss="logistic"``.
    """

    loss: str = "squared"
    params: BoostingParams = field(default_factory=BoostingParams)
    trees: list = field(default_factory=list, init=False)
    base_score: float = field(default=0.0, init=False)
    n_iter: int = field(default=0, init=False)
    best_val_loss: float = field(default=float("nan"), init=False)

    def __post_init__(self) -> None:
        if self.loss not in ("squared", "logistic"):
            raise ConfigurationError(f"unknown loss {self.loss!r}")

    def fit(
        self,
        X: NDArray[np.float64],
        y: NDArray[np.float64],
        sample_weight: NDArray[np.float64] | None = None,
        rng: np.random.Generator | None = None,
    ) -> "GradientBoostedTrees":
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        n, p = X.shape
        if n == 0:
            raise FoldError("no training rows")
        w = np.ones(n) if sample_weight is None else np.asarray(sample_weight, dtype=float)
        if np.any(w < 0):
            raise ConfigurationError("sample weights must be non-negative")
        rng = np.random.default_rng(0) if rng is None else rng
        prm = self.params
        grad_fn, loss_fn = (_squared, _squared_loss) if self.loss == "squared" else (_logistic, _logistic_loss)

        is_val = np.zeros(n, dtype=bool)
        if prm.validation_fraction > 0 and n >= 10:
            is_val[rng.permutation(n)[: int(round(prm.validation_fraction * n))]] = True
        tr = ~is_val

        if self.loss == "squared":
            self.base_score = float(np.average(y[tr], weights=w[tr])) if w[tr].sum() > 0 else 0.0
        else:
            pos = float(np.sum(w[tr] * y[tr]))
            neg = float(np.sum(w[tr] * (1 - y[tr])))
            if pos <= 0 or neg <= 0:
                raise FoldError("logistic boosting needs both classes in the training rows")
            self.base_score = float(np.log(pos / neg))

        edges = []
        codes = np.empty((n, p), dtype=np.int64)
        qs = np.linspace(0, 1, prm.max_bins + 1)[1:-1]
        for f in range(p):
            e = np.unique(np.quantile(X[tr, f], qs))
            edges.append(e)
            codes[:, f] = np.searchsorted(e, X[:, f], side="left")
        n_bins = np.array([len(e) + 1 for e in edges])
        B = int(n_bins.max())
        # a split after bin b is allowed when b < n_bins[f] - 1
        split_ok = np.arange(B)[None, :] < (n_bins[:, None] - 1)

        raw = np.full(n, self.base_score)
        best_loss = np.inf
        best_iter = 0
        self.trees = []
        since_best = 0
        depth = prm.max_depth
        n_leaves = 2**depth
        lam = prm.reg_lambda
        rows_all = np.flatnonzero(tr)
        for it in range(prm.n_trees):
            if prm.subsample < 1.0:
                rows = rows_all[rng.random(rows_all.size) < prm.subsample]
                if rows.size == 0:
                    rows = rows_all
            else:
                rows = rows_all
            g, h = grad_fn(y[rows], w[rows], raw[rows])
            c = codes[rows]
            node = np.zeros(rows.size, dtype=np.int64)
            feature = np.zeros(n_leaves - 1, dtype=np.int64)
            threshold = np.full(n_leaves - 1, np.inf)
            for d in range(depth):
                n_nodes = 2**d
                idx = ((node[:, None] * p + np.arange(p)[None, :]) * B + c).ravel()
                size = n_nodes * p * B
                G = np.bincount(idx, weights=np.repeat(g, p), minlength=size).reshape(n_nodes, p, B)
                H = np.bincount(idx, weights=np.repeat(h, p), minlength=size).reshape(n_nodes, p, B)
                GL, HL = np.cumsum(G, axis=2), np.cumsum(H, axis=2)
                Gt, Ht = GL[:, :, -1:], HL[:, :, -1:]
                GR, HR = Gt - GL, Ht - HL
                gain = GL**2 / (HL + lam) + GR**2 / (HR + lam) - Gt**2 / (Ht + lam)
                valid = split_ok[None] & (HL >= prm.min_leaf_weight) & (HR >= prm.min_leaf_weight)
                gain = np.where(valid, gain, -np.inf)
                flat = gain.reshape(n_nodes, -1)
                best = np.argmax(flat, axis=1)
                best_gain = flat[np.arange(n_nodes), best]
                bf, bb = np.divmod(best, B)
                heap = 2**d - 1 + np.arange(n_nodes)
                do_split = best_gain > 1e-12
                feature[heap] = np.where(do_split, bf, 0)
                threshold[heap] = np.where(do_split, [edges[f][b] if s else np.inf for f, b, s in zip(bf, bb, do_split)], np.inf)
                go_right = do_split[node] & (c[np.arange(rows.size), bf[node]] > bb[node])
                node = 2 * node + go_right
            Gl = np.bincount(node, weights=g, minlength=n_leaves)
            Hl = np.bincount(node, weights=h, minlength=n_leaves)
            value = -prm.learning_rate * Gl / (Hl + lam)
            tree = _Tree(feature=feature, threshold=threshold, value=value)
            self.trees.append(tree)
            raw = raw + tree.apply(X)
            if is_val.any():
                vl = loss_fn(y[is_val], w[is_val], raw[is_val])
                if vl < best_loss - 1e-12:
                    best_loss, best_iter, since_best = vl, it + 1, 0
                else:
                    since_best += 1
                    if since_best >= prm.patience:
                        break
            else:
                best_iter = it + 1
        self.trees = self.trees[: max(best_iter, 1)]
        self.n_iter = len(self.trees)
        self.best_val_loss = float(best_loss)
        return self

    def decision_function(self, X: NDArray[np.float64]) -> NDArray[np.float64]:
        X = np.asarray(X, dtype=float)
        raw = np.full(X.shape[0], self.base_score)
        for t in self.trees:
            raw += t.apply(X)
        return raw

    def predict(self, X: NDArray[np.float64]) -> NDArray[np.float64]:
        raw = self.decision_function(X)
        return expit(raw) if self.loss == "logistic" else raw
