"""Per-fold nuisance models: selection probability ``piB(x)`` and outcome mean ``m(x)``.

Every learner is reached through :class:`LearnerSpec`; fitted models expose
``predict(X)``. :func:`fit_all_folds` produces one (selection, outcome) pair per
fold of a :class:`~drcombine.crossfit.FoldPlan`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.typing import NDArray
from scipy.special import expit

from ..crossfit import FoldPlan
from ..data import TwoSampleData
from ..errors import ConfigurationError, FoldError, RankDeficiencyError
from ..terms import INTERCEPT, NONLINEAR_TERMS, design_matrix, main_effects
from .boosting import BoostingParams, GradientBoostedTrees
from .pseudo import PseudoLikelihood, intercept_start, maximize

PIB_FLOOR = 1e-6
PIB_CEIL = 1.0 - 1e-9

FEATURE_MAPS = ("main_effects", "true_model_terms", "intercept_only")

__all__ = [
    "BoostingParams",
    "GradientBoostedTrees",
    "LearnerSpec",
    "NuisanceSpecs",
    "NuisanceFit",
    "fit_outcome",
    "fit_selection",
    "fit_all_folds",
    "PIB_FLOOR",
]


@dataclass(frozen=True)
class LearnerSpec:
    """How to fit one nuisance function.

    ``family`` is ``"parametric"``, ``"boosted_trees"`` or ``"oracle"`` (a fixed
    callable, for tests and rate probes). ``feature_map`` names a term set from
    :data:`FEATURE_MAPS` or is an explicit tuple of terms; it only matters for
    the parametric family.
    """

    family: str = "parametric"
    feature_map: str | tuple[str, ...] = "main_effects"
    boosting: Optional[BoostingParams] = None
    pseudo_likelihood: str = "full"
    piB_floor: float = PIB_FLOOR
    oracle: Optional[Callable[[NDArray[np.float64]], NDArray[np.float64]]] = None

    def __post_init__(self) -> None:
        if self.family not in ("parametric", "boosted_trees", "oracle"):
            raise ConfigurationError(f"unknown learner family {self.family!r}")
        if self.family == "boosted_trees" and self.boosting is None:
            object.__setattr__(self, "boosting", BoostingParams())
        if self.family != "boosted_trees" and self.boosting is not None:
            raise ConfigurationError("boosting parameters given for a non-boosted learner")
        if self.family == "oracle" and self.oracle is None:
            raise ConfigurationError("oracle learner needs a callable")
        if self.pseudo_likelihood not in ("full", "approximate"):
            raise ConfigurationError(f"unknown pseudo-likelihood {self.pseudo_likelihood!r}")
        if isinstance(self.feature_map, str) and self.feature_map not in FEATURE_MAPS:
            raise ConfigurationError(f"unknown feature map {self.feature_map!r}")

    def terms_for(self, n_cov: int) -> tuple[str, ...]:
        """Design terms for data with ``n_cov`` covariates."""
        if not isinstance(self.feature_map, str):
            return tuple(self.feature_map)
        if self.feature_map == "main_effects":
            return main_effects(n_cov)
        if self.feature_map == "intercept_only":
            return (INTERCEPT,)
        return NONLINEAR_TERMS


@dataclass(frozen=True)
class NuisanceSpecs:
    selection: LearnerSpec = field(default_factory=LearnerSpec)
    outcome: LearnerSpec = field(default_factory=LearnerSpec)


# --------------------------------------------------------------------------- models


@dataclass(frozen=True)
class LinearModel:
    terms: tuple[str, ...]
    coef: NDArray[np.float64]

    def predict(self, X: NDArray[np.float64]) -> NDArray[np.float64]:
        return design_matrix(X, self.terms) @ self.coef


@dataclass(frozen=True)
class LogisticModel:
    terms: tuple[str, ...]
    coef: NDArray[np.float64]
    floor: float = PIB_FLOOR

    def predict(self, X: NDArray[np.float64]) -> NDArray[np.float64]:
        return np.clip(expit(design_matrix(X, self.terms) @ self.coef), self.floor, PIB_CEIL)


@dataclass(frozen=True)
class BoostedModel:
    booster: GradientBoostedTrees
    floor: Optional[float] = None

    def predict(self, X: NDArray[np.float64]) -> NDArray[np.float64]:
        out = self.booster.predict(X)
        return out if self.floor is None else np.clip(out, self.floor, PIB_CEIL)


@dataclass(frozen=True)
class OracleModel:
    fn: Callable[[NDArray[np.float64]], NDArray[np.float64]]
    floor: Optional[float] = None

    def predict(self, X: NDArray[np.float64]) -> NDArray[np.float64]:
        out = np.asarray(self.fn(X), dtype=float)
        return out if self.floor is None else np.clip(out, self.floor, PIB_CEIL)


@dataclass(frozen=True)
class FitDiagnostics:
    iterations: int
    objective: float


# --------------------------------------------------------------------------- fitting


def _full_rank_design(X: NDArray[np.float64], terms: Sequence[str]) -> NDArray[np.float64]:
    Z = design_matrix(X, terms)
    rank = np.linalg.matrix_rank(Z)
    if rank < Z.shape[1]:
        bad, cur = [], 0
        for j in range(Z.shape[1]):
            r = np.linalg.matrix_rank(Z[:, : j + 1])
            if r == cur:
                bad.append(terms[j])
            cur = r
        raise RankDeficiencyError(f"design is rank deficient; collinear columns: {', '.join(bad)}")
    return Z


def fit_outcome(
    X: NDArray[np.float64], Y: NDArray[np.float64], spec: LearnerSpec, rng: np.random.Generator | None = None
) -> tuple[object, FitDiagnostics]:
    """Regress ``Y`` on ``X`` (Sample B rows outside the fold)."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.shape[0] == 0:
        raise FoldError("no Sample B rows available to fit the outcome model")
    if spec.family == "oracle":
        return OracleModel(spec.oracle), FitDiagnostics(0, float("nan"))
    if spec.family == "parametric":
        terms = spec.terms_for(X.shape[1])
        Z = _full_rank_design(X, terms)
        coef, *_ = np.linalg.lstsq(Z, Y, rcond=None)
        rss = float(np.sum((Y - Z @ coef) ** 2))
        return LinearModel(terms, coef), FitDiagnostics(1, rss)
    booster = GradientBoostedTrees("squared", spec.boosting).fit(X, Y, rng=rng)
    return BoostedModel(booster), FitDiagnostics(booster.n_iter, booster.best_val_loss)


def fit_selection(
    XB: NDArray[np.float64],
    XA: NDArray[np.float64],
    wA: NDArray[np.float64],
    spec: LearnerSpec,
    rng: np.random.Generator | None = None,
) -> tuple[object, FitDiagnostics]:
    """Fit ``piB(x)`` from Sample B rows (events) and weighted Sample A rows.

    ``wA`` are the (already compensated) inverse inclusion probabilities of the
    Sample A rows. The parametric family maximises the full or approximate
    pseudo-likelihood by Newton's method; the boosted family minimises the
    weighted log-loss, i.e. the approximate pseudo-likelihood.
    """
    XB = np.asarray(XB, dtype=float)
    XA = np.asarray(XA, dtype=float)
    if spec.family == "oracle":
        return OracleModel(spec.oracle, spec.piB_floor), FitDiagnostics(0, float("nan"))
    if XB.shape[0] == 0:
        raise FoldError("no Sample B rows available to fit the selection model")
    if XA.shape[0] == 0:
        raise FoldError("no Sample A rows available to fit the selection model")
    if spec.family == "parametric":
        terms = spec.terms_for(XB.shape[1])
        ZB = _full_rank_design(XB, terms) if len(terms) > 1 else design_matrix(XB, terms)
        ZA = design_matrix(XA, terms)
        obj = PseudoLikelihood.from_samples(ZB, ZA, wA, full=spec.pseudo_likelihood == "full")
        res = maximize(obj, start=intercept_start(obj, terms[0] == INTERCEPT))
        return LogisticModel(terms, res.coef, spec.piB_floor), FitDiagnostics(res.iterations, res.objective)
    X = np.vstack([XB, XA])
    y = np.concatenate([np.ones(XB.shape[0]), np.zeros(XA.shape[0])])
    w = np.concatenate([np.ones(XB.shape[0]), np.asarray(wA, dtype=float)])
    booster = GradientBoostedTrees("logistic", spec.boosting).fit(X, y, sample_weight=w, rng=rng)
    return BoostedModel(booster, spec.piB_floor), FitDiagnostics(booster.n_iter, booster.best_val_loss)


@dataclass(frozen=True)
class NuisanceFit:
    """Fitted ``(piB_k, m_k)`` for every fold ``k`` of a plan."""

    selection: tuple[object, ...]
    outcome: tuple[object, ...]
    diagnostics: tuple[tuple[FitDiagnostics, FitDiagnostics], ...] = ()

    @property
    def K(self) -> int:
        return len(self.selection)

    def predict_piB(self, k: int, X: NDArray[np.float64]) -> NDArray[np.float64]:
        return self.selection[k].predict(X)

    def predict_m(self, k: int, X: NDArray[np.float64]) -> NDArray[np.float64]:
        return self.outcome[k].predict(X)


def training_rows(data: TwoSampleData, plan: FoldPlan, k: int) -> dict[str, NDArray]:
    """Row indices and compensated Sample A weights used to fit fold ``k``."""
    fold = plan.fold_of_cluster
    if plan.K == 1:
        b_rows = np.arange(data.nB)
    else:
        b_rows = np.flatnonzero(fold[data.clusterB] != k)
    active = plan.active_mask(k)
    a_rows = np.flatnonzero(active[data.clusterA])
    mult = plan.cluster_multiplier(k)[data.clusterA[a_rows]]
    wA = 1.0 / (data.piA[a_rows] * mult)
    return {"B": b_rows, "A": a_rows, "wA": wA}


def fit_fold(
    data: TwoSampleData, plan: FoldPlan, specs: NuisanceSpecs, k: int, rng: np.random.Generator | None = None
) -> tuple[object, object, tuple[FitDiagnostics, FitDiagnostics]]:
    rows = training_rows(data, plan, k)
    rng = np.random.default_rng(0) if rng is None else rng
    try:
        sel, dsel = fit_selection(data.XB[rows["B"]], data.XA[rows["A"]], rows["wA"], specs.selection, rng)
        out, dout = fit_outcome(data.XB[rows["B"]], data.YB[rows["B"]], specs.outcome, rng)
    except FoldError as exc:
        raise FoldError(f"fold {k}: {exc}") from exc
    return sel, out, (dsel, dout)


def fit_all_folds(
    data: TwoSampleData,
    plan: FoldPlan,
    specs: NuisanceSpecs,
    seed: int | np.random.SeedSequence = 0,
    folds: Sequence[int] | None = None,
) -> NuisanceFit:
    """Fit every fold independently, each with its own random stream."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    sel, out, diag = [], [], []
    for k in range(plan.K) if folds is None else folds:
        rng = np.random.default_rng(np.random.SeedSequence(ss.entropy, spawn_key=tuple(ss.spawn_key) + (k,)))
        s, o, d = fit_fold(data, plan, specs, k, rng)
        sel.append(s)
        out.append(o)
        diag.append(d)
    return NuisanceFit(tuple(sel), tuple(out), tuple(diag))
