"""Sample A: cluster sampling without replacement, then households, then one member."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.typing import NDArray

from .errors import DesignError, NumericDegeneracyError
from .popgen import FinitePopulation, draw_outcomes
from .seeding import stream
from .selection import draw_sample_b

PI_CLAMP = 1.0 - 1e-9
SAMPFORD_MAX_ATTEMPTS = 10**6


@dataclass(frozen=True)
class ClusterDesign:
    kind: str  # "sampford" or "srswor"
    M: int
    target_pi: NDArray[np.float64]

    def __post_init__(self) -> None:
        if self.kind not in ("sampford", "srswor"):
            raise DesignError(f"unknown cluster design {self.kind!r}")
        pi = np.asarray(self.target_pi, dtype=float)
        if abs(pi.sum() - self.M) > 1e-9 * max(1.0, self.M):
            raise DesignError(f"inclusion probabilities sum to {pi.sum()!r}, expected M={self.M}")
        if self.kind == "sampford" and np.any(pi >= 1.0):
            raise DesignError("Sampford sampling needs every inclusion probability < 1")
        if np.any(pi <= 0.0):
            raise DesignError("inclusion probabilities must be positive")


@dataclass(frozen=True)
class SampleDraw:
    """One replication: outcomes plus the realised Sample A and Sample B.

    ``piA`` and ``piAC`` are defined for every individual, sampled or not.
    """

    Y: NDArray[np.float64]
    Ybar: float
    RC: NDArray[np.bool_]
    RA: NDArray[np.bool_]
    piA: NDArray[np.float64]
    piAC: NDArray[np.float64]
    piC: NDArray[np.float64]
    RB: NDArray[np.bool_]

    @property
    def M(self) -> int:
        return int(self.RC.sum())


def cluster_inclusion_probs(size_measures: NDArray[np.float64], M: int, clamp: float = PI_CLAMP) -> NDArray[np.float64]:
    """``pi_j = M h_j / sum(h)``, clamping values >= 1 and renormalising the rest."""
    h = np.asarray(size_measures, dtype=float)
    J = h.shape[0]
    if M >= J:
        raise DesignError(f"cannot sample M={M} of J={J} clusters")
    if M < 1:
        raise DesignError("M must be at least 1")
    if np.any(h <= 0):
        raise DesignError("size measures must be positive")
    pi = M * h / h.sum()
    fixed = np.zeros(J, dtype=bool)
    while True:
        over = (pi >= 1.0) & ~fixed
        if not over.any():
            break
        fixed |= over
        pi[fixed] = clamp
        free = ~fixed
        remaining = M - pi[fixed].sum()
        pi[free] = remaining * h[free] / h[free].sum()
    return pi


def srswor_draw(J: int, M: int, rng: np.random.Generator) -> NDArray[np.bool_]:
    RC = np.zeros(J, dtype=bool)
    RC[rng.choice(J, size=M, replace=False)] = True
    return RC


def _check_sampford(pi: NDArray[np.float64]) -> int:
    if np.any(pi >= 1.0):
        raise DesignError("Sampford sampling needs every inclusion probability < 1")
    if np.any(pi <= 0.0):
        raise DesignError("inclusion probabilities must be positive")
    M = int(round(pi.sum()))
    if abs(pi.sum() - M) > 1e-6:
        raise DesignError(f"inclusion probabilities sum to {pi.sum()}, not an integer")
    return M


def sampford_draw(
    pi: NDArray[np.float64],
    rng: np.random.Generator,
    max_attempts: int = SAMPFORD_MAX_ATTEMPTS,
    method: str = "poisson",
    batch: int = 256,
) -> NDArray[np.bool_]:
    """Draw ``M = sum(pi)`` distinct units with Sampford's design.

    Two exact samplers of the same design are available:

    ``"rejective"``
        Sampford's original scheme: the first unit with probability
        proportional to ``pi``, the other ``M - 1`` with replacement
        proportional to ``pi / (1 - pi)``, kept only if all ``M`` differ.
        Acceptance is tiny for large ``M`` (about 5e-6 for J=1000, M=150).
    ``"poisson"``
        First unit ``i`` with probability proportional to ``pi_i (1 - pi_i)``,
        every other unit independently with probability ``pi_j``, kept only if
        exactly ``M - 1`` others are selected. Summing the acceptance
        probability over the first unit gives
        ``p(s) ~ prod_{j in s} pi_j/(1 - pi_j) * sum_{i in s} (1 - pi_i)``,
        which is Sampford's design.

    ``max_attempts`` caps the number of rejected attempts.
    """
    pi = np.asarray(pi, dtype=float)
    M = _check_sampford(pi)
    J = pi.shape[0]
    if M == 1:
        out = np.zeros(J, dtype=bool)
        out[rng.choice(J, p=pi / pi.sum())] = True
        return out
    if method == "poisson":
        return _sampford_poisson(pi, M, rng, max_attempts, batch)
    if method == "rejective":
        return _sampford_rejective(pi, M, rng, max_attempts, batch=4096)
    raise DesignError(f"unknown Sampford method {method!r}")


def _sampford_poisson(pi, M, rng, max_attempts, batch):
    J = pi.shape[0]
    w = pi * (1.0 - pi)
    first_cdf = np.cumsum(w / w.sum())
    first_cdf[-1] = 1.0
    tried = 0
    while tried < max_attempts:
        b = min(batch, max_attempts - tried)
        first = np.searchsorted(first_cdf, rng.random(b), side="right")
        take = rng.random((b, J)) < pi
        take[np.arange(b), first] = False
        ok = np.flatnonzero(take.sum(axis=1) == M - 1)
        if ok.size:
            out = take[ok[0]].copy()
            out[first[ok[0]]] = True
            return out
        tried += b
    raise NumericDegeneracyError(f"Sampford rejection loop exceeded {max_attempts} attempts")


def _sampford_rejective(pi, M, rng, max_attempts, batch):
    J = pi.shape[0]
    first_cdf = np.cumsum(pi / pi.sum())
    lam = pi / (1.0 - pi)
    rest_cdf = np.cumsum(lam / lam.sum())
    first_cdf[-1] = rest_cdf[-1] = 1.0
    tried = 0
    while tried < max_attempts:
        b = min(batch, max_attempts - tried)
        # an attempt dies at its first repeated unit, so only survivors are extended
        alive = np.arange(b)
        seen = np.zeros((b, J), dtype=bool)
        draws = np.empty((b, M), dtype=np.int64)
        draws[:, 0] = np.searchsorted(first_cdf, rng.random(b), side="right")
        seen[alive, draws[:, 0]] = True
        for t in range(1, M):
            nxt = np.searchsorted(rest_cdf, rng.random(alive.size), side="right")
            fresh = ~seen[alive, nxt]
            alive, nxt = alive[fresh], nxt[fresh]
            if alive.size == 0:
                break
            seen[alive, nxt] = True
            draws[alive, t] = nxt
        if alive.size:
            out = np.zeros(J, dtype=bool)
            out[draws[alive[0]]] = True
            return out
        tried += b
    raise NumericDegeneracyError(f"Sampford rejection loop exceeded {max_attempts} attempts")


def draw_clusters(design: ClusterDesign, rng: np.random.Generator) -> NDArray[np.bool_]:
    if design.kind == "sampford":
        return sampford_draw(design.target_pi, rng)
    return srswor_draw(len(design.target_pi), design.M, rng)


def within_cluster_probs(pop: FinitePopulation, n_house: int) -> NDArray[np.float64]:
    """``piA|C = (n_house / H_j) / q_i`` for every individual."""
    h = pop.size_measure[pop.cluster_id]
    return np.minimum(n_house / h, 1.0) / pop.household_size


def draw_sample_a(
    pop: FinitePopulation,
    RC: NDArray[np.bool_],
    n_house: int,
    piC: NDArray[np.float64],
    rng: np.random.Generator,
) -> tuple[NDArray[np.bool_], NDArray[np.float64], NDArray[np.float64]]:
    """Two-stage sample inside the selected clusters.

    Returns ``(RA, piA, piAC)``; the probabilities cover the whole population.
    """
    RC = np.asarray(RC, dtype=bool)
    short = np.flatnonzero(RC & (pop.size_measure < n_house))
    if short.size:
        j = int(short[0])
        raise DesignError(f"cluster {j} has {int(pop.size_measure[j])} households, fewer than n_house={n_house}")
    RA = np.zeros(pop.n, dtype=bool)
    for j in np.flatnonzero(RC):
        lo, hi = pop.household_start[j], pop.household_stop[j]
        hh = rng.choice(np.arange(lo, hi), size=n_house, replace=False)
        members = pop.hh_first_member[hh] + rng.integers(0, pop.hh_size[hh])
        RA[members] = True
    piAC = within_cluster_probs(pop, n_house)
    piA = np.asarray(piC, dtype=float)[pop.cluster_id] * piAC
    return RA, piA, piAC


def draw_replication(
    pop: FinitePopulation,
    seed: int | np.random.SeedSequence,
    piC: Optional[NDArray[np.float64]] = None,
    M: Optional[int] = None,
    n_house: Optional[int] = None,
    kind: Optional[str] = None,
) -> SampleDraw:
    """Outcomes, Sample A and Sample B for one replication, each from its own stream."""
    spec = pop.spec
    M = spec.M if M is None else M
    n_house = spec.n_house if n_house is None else n_house
    kind = spec.cluster_design if kind is None else kind
    if piC is None:
        piC = cluster_probs_for(pop, M, kind)
    Y, Ybar = draw_outcomes(pop, stream(seed, "outcome"))
    RC = draw_clusters(ClusterDesign(kind, M, piC), stream(seed, "clusters"))
    RA, piA, piAC = draw_sample_a(pop, RC, n_house, piC, stream(seed, "sample_a"))
    RB = draw_sample_b(pop, stream(seed, "sample_b"))
    return SampleDraw(Y=Y, Ybar=Ybar, RC=RC, RA=RA, piA=piA, piAC=piAC, piC=np.asarray(piC), RB=RB)


def cluster_probs_for(pop: FinitePopulation, M: int, kind: str) -> NDArray[np.float64]:
    if kind == "srswor":
        return np.full(pop.J, M / pop.J)
    return cluster_inclusion_probs(pop.size_measure, M)
