"""Finite population of clusters, households and individuals.

The population is generated once (covariates, household structure, true
regression and selection surfaces) and then held fixed; every Monte Carlo
replication only redraws outcomes and the two samples.
"""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional

import numpy as np
from numpy.typing import NDArray
from scipy.special import expit

from .errors import ConfigurationError
from .terms import linear_predictor, validate_formula

SCENARIO_1_M0 = {"X1": 1.0, "X2": 1.0, "X3": 2.0, "X4": 1.0}
SCENARIO_1_PIB = {"X1": 0.5, "X2": 1.0, "X3": 0.5, "X4": 1.0}
SCENARIO_3_M0 = {"X1": 0.5, "X2": 0.5, "X3": 2.0, "X4": 1.0, "X1*X3": 2.0, "X2^2": 1.0}
SCENARIO_3_PIB = {"X1": 0.25, "X2": 0.5, "X3": 0.5, "X4": 1.0, "X1*X3": 1.0, "X2^2": 0.5}

DEFAULT_POPULATION_SEED = 20250117


@dataclass(frozen=True)
class ScenarioSpec:
    """Everything needed to build a population and run one simulation setting.

    ``m0_formula`` and ``piB_formula`` map term strings (see
    :mod:`drcombine.terms`) to coefficients; the selection intercept is kept
    apart in ``alpha_int``. When ``target_b_size`` is given, ``alpha_int`` is
    re-solved on the generated population so that the expected size of
    Sample B matches it.
    """

    scenario_id: int | str = "custom"
    J: int = 1000
    M: int = 150
    n_house: int = 20
    K: int = 5
    delta: float = 0.01
    L: int = 4
    m0_formula: Mapping[str, float] = field(default_factory=lambda: dict(SCENARIO_1_M0))
    piB_formula: Mapping[str, float] = field(default_factory=lambda: dict(SCENARIO_1_PIB))
    alpha_int: float = -6.2
    target_b_size: Optional[float] = None
    cluster_design: str = "sampford"
    rng_seed: int = DEFAULT_POPULATION_SEED
    # household and covariate generator
    household_mean: float = 100.0
    household_var: float = 400.0
    cluster_effect_sd: float = 0.1
    size_effect: float = 0.1
    household_effect_cont: float = 0.35
    household_effect_bin: float = 0.2
    cont_mean: tuple[float, float] = (0.0, 0.4)
    cont_sd: tuple[float, float] = (0.5, 0.35)
    bin_intercept: float = 0.1
    outcome_sd: float = 1.0

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if not (isinstance(self.J, (int, np.integer)) and self.J >= 2):
            raise ConfigurationError(f"J must be an integer >= 2, got {self.J!r}")
        if not 0 < self.M < self.J:
            raise ConfigurationError(f"need 0 < M < J, got M={self.M}, J={self.J}")
        if self.n_house < 1:
            raise ConfigurationError("n_house must be >= 1")
        if self.K < 1:
            raise ConfigurationError("K must be >= 1")
        if not 0.0 < self.delta < 1.0:
            raise ConfigurationError(f"delta must lie in (0, 1), got {self.delta}")
        if self.L < 1:
            raise ConfigurationError("L must be >= 1")
        if self.cluster_design not in ("sampford", "srswor"):
            raise ConfigurationError(f"unknown cluster design {self.cluster_design!r}")
        if self.household_mean <= 0:
            raise ConfigurationError("household_mean must be positive")
        if self.household_var < self.household_mean:
            raise ConfigurationError("negative binomial needs variance >= mean")
        if len(self.cont_mean) != 2 or len(self.cont_sd) != 2 or min(self.cont_sd) < 0:
            raise ConfigurationError("cont_mean and cont_sd need two entries, sds non-negative")
        if self.outcome_sd < 0:
            raise ConfigurationError("outcome_sd must be non-negative")
        validate_formula(self.m0_formula)
        validate_formula(self.piB_formula)
        if "1" in self.piB_formula:
            raise ConfigurationError("put the selection intercept in alpha_int, not piB_formula")

    def replace(self, **changes) -> "ScenarioSpec":
        return dataclasses.replace(self, **changes)


def scenario(scenario_id: int, **overrides) -> ScenarioSpec:
    """Preset for one of the six simulation scenarios, with optional overrides."""
    presets = {
        1: dict(m0_formula=SCENARIO_1_M0, piB_formula=SCENARIO_1_PIB, alpha_int=-6.2, M=150, n_house=20),
        2: dict(m0_formula=SCENARIO_1_M0, piB_formula=SCENARIO_1_PIB, alpha_int=-7.5, M=150, n_house=20),
        3: dict(m0_formula=SCENARIO_3_M0, piB_formula=SCENARIO_3_PIB, alpha_int=-6.4, M=150, n_house=20),
        4: dict(m0_formula=SCENARIO_3_M0, piB_formula=SCENARIO_3_PIB, alpha_int=-6.4, M=50, n_house=20),
        5: dict(m0_formula=SCENARIO_3_M0, piB_formula=SCENARIO_3_PIB, alpha_int=-6.4, M=150, n_house=5),
        6: dict(m0_formula=SCENARIO_3_M0, piB_formula=SCENARIO_3_PIB, alpha_int=-6.4, M=50, n_house=5),
    }
    if scenario_id not in presets:
        raise ConfigurationError(f"scenario must be 1..6, got {scenario_id!r}")
    params = {k: (dict(v) if isinstance(v, dict) else v) for k, v in presets[scenario_id].items()}
    params.update(overrides)
    return ScenarioSpec(scenario_id=scenario_id, **params)


@dataclass(frozen=True)
class FinitePopulation:
    """Fixed finite population, stored column-wise.

    Individuals are labelled contiguously by cluster: the members of cluster
    ``j`` occupy ``member_start[j]:member_stop[j]``. Within a cluster the
    households are listed size class by size class.
    """

    spec: ScenarioSpec
    households_by_size: NDArray[np.int64]  # (J, 3)
    size_measure: NDArray[np.float64]  # (J,) total households
    member_start: NDArray[np.int64]
    member_stop: NDArray[np.int64]
    household_start: NDArray[np.int64]  # (J,) first household index
    household_stop: NDArray[np.int64]
    hh_first_member: NDArray[np.int64]  # (n_households,)
    hh_size: NDArray[np.int64]
    cluster_id: NDArray[np.int64]  # (n,)
    household_id: NDArray[np.int64]
    household_size: NDArray[np.int64]
    X: NDArray[np.float64]  # (n, 4)
    true_mean: NDArray[np.float64]
    true_sel_prob: NDArray[np.float64]
    alpha_int: float

    @property
    def J(self) -> int:
        return int(self.households_by_size.shape[0])

    @property
    def n(self) -> int:
        return int(self.cluster_id.shape[0])

    @property
    def cluster_sizes(self) -> NDArray[np.int64]:
        return self.member_stop - self.member_start

    @property
    def m0(self) -> NDArray[np.float64]:
        return self.true_mean

    @property
    def piB0(self) -> NDArray[np.float64]:
        return self.true_sel_prob

    def selection_linear_predictor(self, X: NDArray[np.float64] | None = None) -> NDArray[np.float64]:
        X = self.X if X is None else X
        return self.alpha_int + linear_predictor(X, self.spec.piB_formula)

    def selection_prob(self, X: NDArray[np.float64]) -> NDArray[np.float64]:
        """True selection probability evaluated at arbitrary covariates."""
        return expit(self.selection_linear_predictor(X))

    def mean_function(self, X: NDArray[np.float64]) -> NDArray[np.float64]:
        """True regression function evaluated at arbitrary covariates."""
        return linear_predictor(X, self.spec.m0_formula)


def _household_counts(spec: ScenarioSpec, rng: np.random.Generator) -> NDArray[np.int64]:
    mu, var = spec.household_mean, spec.household_var
    J = spec.J
    if var == mu:
        draw = lambda size: rng.poisson(mu, size=size)  # noqa: E731
    else:
        r = mu * mu / (var - mu)
        p = r / (r + mu)
        draw = lambda size: rng.negative_binomial(r, p, size=size)  # noqa: E731
    H = draw((J, 3)).astype(np.int64)
    empty = H.sum(axis=1) == 0
    # a cluster with no households has no size measure; redraw it
    while empty.any():
        H[empty] = draw((int(empty.sum()), 3))
        empty = H.sum(axis=1) == 0
    return H


def solve_alpha_int(eta: NDArray[np.float64], target: float, tol: float = 1e-10) -> float:
    """Intercept ``a`` with ``sum(expit(a + eta)) == target`` (monotone bisection)."""
    n = eta.shape[0]
    if not 0.0 < target < n:
        raise ConfigurationError(f"target Sample-B size must lie in (0, {n}), got {target}")
    lo, hi = -50.0 - eta.max(), 50.0 - eta.min()
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if expit(mid + eta).sum() < target:
            lo = mid
        else:
            hi = mid
        if hi - lo < tol:
            break
    return 0.5 * (lo + hi)


def generate_population(spec: ScenarioSpec, seed: int | None = None) -> FinitePopulation:
    """Draw the finite population for ``spec``.

    Household counts per size class are negative binomial with the configured
    mean and variance. Covariates depend on the standardised log number of
    households in the cluster ``z``, the household size ``q`` and a cluster
    random effect ``u``::

        X1 ~ N(mu1 + b_z z + u + b_q (q - 2), sd1^2), likewise X2
        X3, X4 ~ Bernoulli(expit(c + b_z z + u + g_q (q - 2)))

    The default constants reproduce the reference Sample B sizes (about 7000,
    2000 and 7500) and the size of the naive estimator's bias.
    """
    spec.validate()
    rng = np.random.default_rng(spec.rng_seed if seed is None else seed)
    J = spec.J
    H = _household_counts(spec, rng)
    h = H.sum(axis=1)
    q_vals = np.array([1, 2, 3])

    # households in cluster order, size classes in order within a cluster
    hh_cluster = np.repeat(np.repeat(np.arange(J), 3), H.ravel())
    hh_size = np.repeat(np.tile(q_vals, J), H.ravel())
    hh_first = np.concatenate(([0], np.cumsum(hh_size)[:-1])).astype(np.int64)
    hh_bounds = np.concatenate(([0], np.cumsum(h))).astype(np.int64)

    cluster_id = np.repeat(hh_cluster, hh_size)
    household_id = np.repeat(np.arange(hh_size.shape[0]), hh_size)
    q = np.repeat(hh_size, hh_size)
    sizes = np.bincount(cluster_id, minlength=J)
    bounds = np.concatenate(([0], np.cumsum(sizes))).astype(np.int64)
    n = cluster_id.shape[0]

    logh = np.log(h.astype(float))
    sd = logh.std()
    z = (logh - logh.mean()) / sd if sd > 0 else np.zeros(J)
    u = rng.normal(0.0, spec.cluster_effect_sd, size=J)
    base = spec.size_effect * z[cluster_id] + u[cluster_id]
    shift_c = base + spec.household_effect_cont * (q - 2)
    shift_b = base + spec.household_effect_bin * (q - 2)
    X = np.empty((n, 4))
    X[:, 0] = rng.normal(spec.cont_mean[0] + shift_c, spec.cont_sd[0])
    X[:, 1] = rng.normal(spec.cont_mean[1] + shift_c, spec.cont_sd[1])
    X[:, 2] = rng.random(n) < expit(spec.bin_intercept + shift_b)
    X[:, 3] = rng.random(n) < expit(spec.bin_intercept + shift_b)

    eta = linear_predictor(X, spec.piB_formula)
    alpha = spec.alpha_int
    if spec.target_b_size is not None:
        alpha = solve_alpha_int(eta, spec.target_b_size)
    m0 = linear_predictor(X, spec.m0_formula)
    piB0 = expit(alpha + eta)
    if not np.all(np.isfinite(m0)):
        raise ConfigurationError("true mean function is not finite on the population")

    arrays = dict(
        households_by_size=H,
        size_measure=h.astype(float),
        member_start=bounds[:-1],
        member_stop=bounds[1:],
        household_start=hh_bounds[:-1],
        household_stop=hh_bounds[1:],
        hh_first_member=hh_first,
        hh_size=hh_size.astype(np.int64),
        cluster_id=cluster_id.astype(np.int64),
        household_id=household_id.astype(np.int64),
        household_size=q.astype(np.int64),
        X=X,
        true_mean=m0,
        true_sel_prob=piB0,
    )
    for a in arrays.values():
        a.setflags(write=False)
    return FinitePopulation(spec=spec, alpha_int=float(alpha), **arrays)


def draw_outcomes(
    pop: FinitePopulation, seed: int | np.random.SeedSequence | np.random.Generator, sd: float | None = None
) -> tuple[NDArray[np.float64], float]:
    """Outcomes ``Y_i ~ Normal(m0(X_i), sd^2)`` and their population mean."""
    rng = np.random.default_rng(seed)
    sd = pop.spec.outcome_sd if sd is None else sd
    if sd == 0:
        Y = pop.true_mean.copy()
    else:
        Y = pop.true_mean + sd * rng.standard_normal(pop.n)
    return Y, float(Y.mean())


POPULATION_COLUMNS = ("cluster_id", "household_id", "q", "X1", "X2", "X3", "X4", "m0", "piB0")


def dump_population(pop: FinitePopulation, path: str | Path) -> None:
    """Write one row per individual (for diffing against other builds)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(POPULATION_COLUMNS)
        for i in range(pop.n):
            w.writerow(
                [int(pop.cluster_id[i]), int(pop.household_id[i]), int(pop.household_size[i])]
                + [repr(float(v)) for v in pop.X[i]]
                + [repr(float(pop.true_mean[i])), repr(float(pop.true_sel_prob[i]))]
            )


def load_population(path: str | Path, spec: ScenarioSpec) -> FinitePopulation:
    """Rebuild a :class:`FinitePopulation` from :func:`dump_population` output.

    Rows must be grouped by cluster and, within a cluster, by household.
    ``m0``/``piB0`` are taken from the file, not recomputed.
    """
    data = np.genfromtxt(path, delimiter=",", names=True, dtype=None, encoding="utf-8")
    cluster_id = np.asarray(data["cluster_id"], dtype=np.int64)
    household_id = np.asarray(data["household_id"], dtype=np.int64)
    q = np.asarray(data["q"], dtype=np.int64)
    if np.any(np.diff(cluster_id) < 0) or np.any(np.diff(household_id) < 0):
        raise ConfigurationError("population rows must be sorted by cluster and household")
    J = int(cluster_id.max()) + 1
    X = np.column_stack([np.asarray(data[f"X{k}"], dtype=float) for k in range(1, 5)])
    sizes = np.bincount(cluster_id, minlength=J)
    bounds = np.concatenate(([0], np.cumsum(sizes))).astype(np.int64)
    hh_ids, hh_first = np.unique(household_id, return_index=True)
    hh_size = np.bincount(household_id)[hh_ids].astype(np.int64)
    hh_cluster = cluster_id[hh_first]
    H = np.zeros((J, 3), dtype=np.int64)
    np.add.at(H, (hh_cluster, hh_size - 1), 1)
    h = H.sum(axis=1)
    hh_bounds = np.concatenate(([0], np.cumsum(h))).astype(np.int64)
    piB0 = np.asarray(data["piB0"], dtype=float)
    eta = linear_predictor(X, spec.piB_formula)
    alpha = float(np.median(np.log(piB0 / (1 - piB0)) - eta))
    arrays = dict(
        households_by_size=H,
        size_measure=h.astype(float),
        member_start=bounds[:-1],
        member_stop=bounds[1:],
        household_start=hh_bounds[:-1],
        household_stop=hh_bounds[1:],
        hh_first_member=hh_first.astype(np.int64),
        hh_size=hh_size,
        cluster_id=cluster_id,
        household_id=household_id,
        household_size=q,
        X=X,
        true_mean=np.asarray(data["m0"], dtype=float),
        true_sel_prob=piB0,
    )
    for a in arrays.values():
        a.setflags(write=False)
    return FinitePopulation(spec=spec, alpha_int=alpha, **arrays)
