"""Cluster-level folds and active subsets for cross-fitting.

Clusters, not individuals, are assigned to folds. Under unequal cluster
sampling probabilities the clusters are first split into ``L`` probability
groups by rank of ``piC``; folds are balanced within each group, and the
selection model for fold ``k`` only sees Sample-A units from a random
"active" subset of the out-of-fold sampled clusters, with their ``piA``
rescaled to compensate.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from .errors import ConfigurationError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ProbabilityGroups:
    L: int
    group_of_cluster: NDArray[np.int64]
    group_mean_pic: NDArray[np.float64]

    @property
    def J(self) -> int:
        return int(self.group_of_cluster.shape[0])

    def sizes(self) -> NDArray[np.int64]:
        return np.bincount(self.group_of_cluster, minlength=self.L)


@dataclass(frozen=True)
class ActiveSubset:
    """Active clusters for one fold and the per-group ``piA`` multipliers."""

    fold: int
    clusters: NDArray[np.int64]
    subsample_size: NDArray[np.int64]  # C^(l)
    multiplier: NDArray[np.float64]  # per group
    degenerate_groups: tuple[int, ...] = ()


@dataclass(frozen=True)
class FoldPlan:
    K: int
    groups: ProbabilityGroups
    sampled: NDArray[np.bool_]  # RC
    fold_of_cluster: NDArray[np.int64]
    M_lk: NDArray[np.int64]  # (L, K) sampled clusters per group and fold
    J_lk: NDArray[np.int64]  # (L, K) clusters per group and fold
    active: tuple[ActiveSubset, ...] = field(default=())

    @property
    def M_l(self) -> NDArray[np.int64]:
        return self.M_lk.sum(axis=1)

    @property
    def J_l(self) -> NDArray[np.int64]:
        return self.J_lk.sum(axis=1)

    @property
    def degenerate_count(self) -> int:
        return sum(len(a.degenerate_groups) for a in self.active)

    def cluster_multiplier(self, k: int) -> NDArray[np.float64]:
        """Per-cluster ``piA`` multiplier used when fitting the selection model for fold ``k``."""
        return self.active[k].multiplier[self.groups.group_of_cluster]

    def active_mask(self, k: int) -> NDArray[np.bool_]:
        mask = np.zeros(self.groups.J, dtype=bool)
        mask[self.active[k].clusters] = True
        return mask


def build_groups(piC: NDArray[np.float64], L: int) -> ProbabilityGroups:
    """Split clusters into ``L`` near-equal sets by rank of ``piC``.

    Ties are broken by cluster index (stable sort). Each group is represented by
    the mean ``piC`` of its clusters.
    """
    piC = np.asarray(piC, dtype=float)
    J = piC.shape[0]
    if L < 1:
        raise ConfigurationError("L must be >= 1")
    if L > J:
        raise ConfigurationError(f"cannot form L={L} groups from J={J} clusters")
    order = np.argsort(piC, kind="stable")
    group = np.empty(J, dtype=np.int64)
    for l, idx in enumerate(np.array_split(order, L)):
        group[idx] = l
    means = np.array([piC[group == l].mean() for l in range(L)])
    return ProbabilityGroups(L=L, group_of_cluster=group, group_mean_pic=means)


def _spread(ids: NDArray[np.int64], K: int, rng: np.random.Generator) -> NDArray[np.int64]:
    """Random balanced fold labels for ``ids``: floor(n/K) each, leftovers on distinct folds."""
    n = ids.shape[0]
    perm = rng.permutation(n)
    base = n // K
    folds = np.empty(n, dtype=np.int64)
    folds[perm[: base * K]] = np.arange(base * K) % K
    rest = n - base * K
    if rest:
        folds[perm[base * K :]] = rng.choice(K, size=rest, replace=False)
    return folds


def assign_folds(
    groups: ProbabilityGroups, RC: NDArray[np.bool_], K: int, rng: np.random.Generator
) -> FoldPlan:
    """Balanced random fold assignment within each probability group.

    Sampled and unsampled clusters of every group are spread separately, so
    each fold gets ``floor(M_l/K)`` or ``floor(M_l/K) + 1`` sampled clusters of
    group ``l``. Only ``RC`` is consulted; outcomes and Sample B play no part.
    """
    if K < 1:
        raise ConfigurationError("K must be >= 1")
    RC = np.asarray(RC, dtype=bool)
    g = groups.group_of_cluster
    fold = np.empty(groups.J, dtype=np.int64)
    for l in range(groups.L):
        for flag in (True, False):
            ids = np.flatnonzero((g == l) & (RC == flag))
            fold[ids] = _spread(ids, K, rng)
    M_lk = np.zeros((groups.L, K), dtype=np.int64)
    J_lk = np.zeros((groups.L, K), dtype=np.int64)
    np.add.at(M_lk, (g[RC], fold[RC]), 1)
    np.add.at(J_lk, (g, fold), 1)
    return FoldPlan(K=K, groups=groups, sampled=RC, fold_of_cluster=fold, M_lk=M_lk, J_lk=J_lk)


def active_sizes(plan: FoldPlan, k: int, delta: float) -> tuple[NDArray[np.int64], NDArray[np.float64]]:
    """Subsample sizes ``C^(l)`` and ``piA`` multipliers for fold ``k`` (no randomness).

    With a single group the equal-probability rule applies: keep
    ``M - ceil(M/K)`` of the out-of-fold sampled clusters and multiply ``piA``
    by ``(M - ceil(M/K)) / (M - M/K)``. With several groups,
    ``C = min(floor(pic (1-delta) (J_l - J_lk)), M_l - M_lk)`` and the
    multiplier is ``floor(pic (1-delta) (J_l - J_lk)) / (pic (J_l - J_lk))``,
    ``pic`` being the group mean cluster probability.
    """
    L, K = plan.M_lk.shape
    M_l, J_l = plan.M_l, plan.J_l
    if L == 1:
        M = int(M_l[0])
        keep = M - math.ceil(M / K)
        mult = keep / (M - M / K)
        return np.array([keep], dtype=np.int64), np.array([mult])
    pic = plan.groups.group_mean_pic
    outside = (J_l - plan.J_lk[:, k]).astype(float)
    target = np.floor(pic * (1.0 - delta) * outside)
    C = np.minimum(target, M_l - plan.M_lk[:, k]).astype(np.int64)
    with np.errstate(invalid="ignore", divide="ignore"):
        mult = np.where(outside > 0, target / (pic * outside), 1.0)
    return C, mult


def choose_active_subset(plan: FoldPlan, k: int, delta: float, rng: np.random.Generator) -> ActiveSubset:
    """Randomly keep ``C^(l)`` out-of-fold sampled clusters in each group."""
    if not 0.0 < delta < 1.0:
        raise ConfigurationError(f"delta must lie in (0, 1), got {delta}")
    C, mult = active_sizes(plan, k, delta)
    g = plan.groups.group_of_cluster
    chosen = []
    degenerate = []
    for l in range(plan.groups.L):
        pool = np.flatnonzero(plan.sampled & (g == l) & (plan.fold_of_cluster != k))
        c = int(C[l])
        if c == 0 and pool.size > 0:
            degenerate.append(l)
            log.warning("fold %d: probability group %d has an empty active subset", k, l)
        if c > 0:
            chosen.append(np.sort(rng.choice(pool, size=c, replace=False)))
    clusters = np.concatenate(chosen) if chosen else np.empty(0, dtype=np.int64)
    return ActiveSubset(fold=k, clusters=clusters, subsample_size=C, multiplier=mult, degenerate_groups=tuple(degenerate))


def build_plan(
    piC: NDArray[np.float64],
    RC: NDArray[np.bool_],
    K: int,
    L: int,
    delta: float,
    rng: np.random.Generator,
) -> FoldPlan:
    """Groups, folds and one active subset per fold.

    ``K = 1`` means no cross-fitting: a single fold holding every cluster, whose
    selection model uses all sampled clusters with unit multipliers.
    """
    if K == 1:
        groups = build_groups(piC, 1)
        RC = np.asarray(RC, dtype=bool)
        J = groups.J
        plan = FoldPlan(
            K=1,
            groups=groups,
            sampled=RC,
            fold_of_cluster=np.zeros(J, dtype=np.int64),
            M_lk=np.array([[RC.sum()]], dtype=np.int64),
            J_lk=np.array([[J]], dtype=np.int64),
        )
        everyone = ActiveSubset(
            fold=0,
            clusters=np.flatnonzero(RC),
            subsample_size=np.array([RC.sum()], dtype=np.int64),
            multiplier=np.ones(1),
        )
        return _with_active(plan, (everyone,))
    groups = build_groups(piC, L)
    plan = assign_folds(groups, RC, K, rng)
    active = tuple(choose_active_subset(plan, k, delta, rng) for k in range(K))
    return _with_active(plan, active)


def _with_active(plan: FoldPlan, active: tuple[ActiveSubset, ...]) -> FoldPlan:
    return FoldPlan(
        K=plan.K,
        groups=plan.groups,
        sampled=plan.sampled,
        fold_of_cluster=plan.fold_of_cluster,
        M_lk=plan.M_lk,
        J_lk=plan.J_lk,
        active=active,
    )


def ratio_bounds(M_l: int, J_l: int, K: int) -> tuple[float, float]:
    """Floor-based bracket on ``M_lk/J_lk - M_l/J_l`` implied by the fold construction."""
    m, j = M_l // K, J_l // K
    c = 1.0 - 1.0 / K
    lower = m / (j + 1) - (m + c) / j
    upper = (m + 1) / j - m / (j + c)
    return lower, upper


def dump_plan(plan: FoldPlan, path: str | Path) -> None:
    """One row per cluster: fold, group, sampled flag, per-fold active flags and multipliers."""
    K = plan.K
    active = [plan.active_mask(k) for k in range(K)] if plan.active else []
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        header = ["cluster_id", "fold", "group", "sampled"]
        header += [f"active_{k + 1}" for k in range(len(active))]
        header += [f"multiplier_{k + 1}" for k in range(len(active))]
        w.writerow(header)
        g = plan.groups.group_of_cluster
        for j in range(plan.groups.J):
            row = [j, int(plan.fold_of_cluster[j]) + 1, int(g[j]) + 1, int(plan.sampled[j])]
            row += [int(a[j]) for a in active]
            row += [repr(float(plan.active[k].multiplier[g[j]])) for k in range(len(active))]
            w.writerow(row)
