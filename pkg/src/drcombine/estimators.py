"""Point estimators, TMLE fluctuation and plug-in variances.

Everything that needs nuisance models works from :class:`Predictions`, the
fold-specific ``piB_k`` and ``m_k`` evaluated at every Sample A and Sample B
row (each row uses the models of the fold its cluster belongs to).

Variance plug-in, with ``g`` the imputed values on Sample A::

    V_B = n^-2 sum_B (1 - piB) / piB^2 (Y - m)^2
    t_j = M sum_{A in j} g / piA
    V_A = n^-2 sum_j (t_j - tbar)^2 / (M (M - 1))

``g = m`` for the HT-type estimators and ``g = m - mbar_A`` (Hajek mean of
``m`` over Sample A) for the ratio-type ones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.typing import NDArray
from scipy.special import expit, logit

from .crossfit import FoldPlan
from .data import TwoSampleData
from .errors import ConvergenceError, EstimationError, FoldError

Z95 = 1.96
LOGIT_CLIP = 1e-6


@dataclass(frozen=True)
class EstimateResult:
    name: str
    point: float
    se: Optional[float] = None

    @property
    def ci(self) -> Optional[tuple[float, float]]:
        if self.se is None:
            return None
        return (self.point - Z95 * self.se, self.point + Z95 * self.se)

    def covers(self, target: float) -> Optional[bool]:
        ci = self.ci
        return None if ci is None else bool(ci[0] <= target <= ci[1])


@dataclass(frozen=True)
class Predictions:
    """Fold-specific nuisance predictions at the rows of both samples."""

    foldA: NDArray[np.int64]
    foldB: NDArray[np.int64]
    mA: NDArray[np.float64]
    mB: NDArray[np.float64]
    piBA: NDArray[np.float64]
    piBB: NDArray[np.float64]
    K: int

    def with_outcome(self, mA: NDArray[np.float64], mB: NDArray[np.float64]) -> "Predictions":
        return Predictions(self.foldA, self.foldB, mA, mB, self.piBA, self.piBB, self.K)


def predict_units(data: TwoSampleData, plan: FoldPlan, fit) -> Predictions:
    """Evaluate ``(piB_k, m_k)`` at each row, ``k`` being the row's fold."""
    if fit.K != plan.K:
        raise EstimationError(f"fit has {fit.K} folds, plan has {plan.K}")
    foldA = plan.fold_of_cluster[data.clusterA]
    foldB = plan.fold_of_cluster[data.clusterB]
    mA, mB = np.empty(data.nA), np.empty(data.nB)
    pA, pB = np.empty(data.nA), np.empty(data.nB)
    for k in range(plan.K):
        a, b = foldA == k, foldB == k
        if a.any():
            mA[a] = fit.predict_m(k, data.XA[a])
            pA[a] = fit.predict_piB(k, data.XA[a])
        if b.any():
            mB[b] = fit.predict_m(k, data.XB[b])
            pB[b] = fit.predict_piB(k, data.XB[b])
    return Predictions(foldA, foldB, mA, mB, pA, pB, plan.K)


# --------------------------------------------------------------------------- variance pieces


def _var_a(data: TwoSampleData, g: NDArray[np.float64], scale: float) -> float:
    clusters, inv = np.unique(data.clusterA, return_inverse=True)
    M = clusters.shape[0]
    if M < 2:
        raise EstimationError("variance needs at least 2 sampled clusters")
    t = M * np.bincount(inv, weights=g / data.piA, minlength=M)
    return float(np.sum((t - t.mean()) ** 2) / (M * (M - 1)) / scale**2)


def _var_b(piB: NDArray[np.float64], resid: NDArray[np.float64], scale: float) -> float:
    return float(np.sum((1.0 - piB) / piB**2 * resid**2) / scale**2)


def _se(va: float, vb: float) -> float:
    return math.sqrt(max(va + vb, 0.0))


# --------------------------------------------------------------------------- Sample A only


def _require_ya(data: TwoSampleData) -> NDArray[np.float64]:
    if data.YA is None:
        raise EstimationError("this estimator needs outcomes on Sample A")
    if data.nA == 0:
        raise EstimationError("Sample A is empty")
    return data.YA


def ht(data: TwoSampleData) -> EstimateResult:
    Y = _require_ya(data)
    point = float(np.sum(Y / data.piA) / data.n)
    return EstimateResult("HT", point, math.sqrt(_var_a(data, Y, data.n)))


def hajek(data: TwoSampleData) -> EstimateResult:
    Y = _require_ya(data)
    N = data.N_hat_A
    point = float(np.sum(Y / data.piA) / N)
    return EstimateResult("Haj", point, math.sqrt(_var_a(data, Y - point, N)))


def naive(data: TwoSampleData) -> EstimateResult:
    Y = _require_ya(data)
    return EstimateResult("naive", float(Y.mean()))


# --------------------------------------------------------------------------- doubly robust


def _u_sum(data: TwoSampleData, pred: Predictions) -> float:
    """``sum_k sum_{S_k} U_i``, rearranged as A-imputation plus weighted B residuals."""
    return float(np.sum(pred.mA / data.piA) + np.sum((data.YB - pred.mB) / pred.piBB))


def _n_hat_a(data: TwoSampleData) -> float:
    N = data.N_hat_A
    if not N > 0:
        raise EstimationError("estimated population size from Sample A is zero")
    return N


def _dr_se(data: TwoSampleData, pred: Predictions, centred: bool) -> float:
    g = pred.mA
    if centred:
        g = g - np.sum(pred.mA / data.piA) / _n_hat_a(data)
    return _se(_var_a(data, g, data.n), _var_b(pred.piBB, data.YB - pred.mB, data.n))


def dr1(data: TwoSampleData, pred: Predictions, name: str = "DR1") -> EstimateResult:
    point = _u_sum(data, pred) / data.n
    return EstimateResult(name, point, _dr_se(data, pred, centred=False))


def dr2(data: TwoSampleData, pred: Predictions, name: str = "DR2") -> EstimateResult:
    point = _u_sum(data, pred) / _n_hat_a(data)
    return EstimateResult(name, point, _dr_se(data, pred, centred=True))


def dr2clw(data: TwoSampleData, pred: Predictions, name: str = "DR2clw") -> EstimateResult:
    """Imputation term normalised by the A-based size, residual term by the B-based size."""
    if data.nB == 0:
        raise EstimationError("Sample B is empty")
    NA = _n_hat_a(data)
    NB = float(np.sum(1.0 / pred.piBB))
    point = float(np.sum(pred.mA / data.piA) / NA + np.sum((data.YB - pred.mB) / pred.piBB) / NB)
    return EstimateResult(name, point, _dr_se(data, pred, centred=True))


# --------------------------------------------------------------------------- TMLE


@dataclass(frozen=True)
class Fluctuation:
    kind: str
    epsilon: NDArray[np.float64]  # one per fold
    score: NDArray[np.float64]  # score at epsilon, per fold

    def apply(self, m: NDArray[np.float64], piB: NDArray[np.float64], fold: NDArray[np.int64]) -> NDArray[np.float64]:
        eps = self.epsilon[fold]
        if self.kind == "linear":
            return m + eps / piB
        return expit(logit(np.clip(m, LOGIT_CLIP, 1 - LOGIT_CLIP)) + eps / piB)


def _logit_epsilon(y, offset, w, max_iter=100, tol=1e-12):
    """Solve ``sum w (y - expit(offset + eps w)) = 0`` by safeguarded Newton."""
    def score(e):
        return float(np.sum(w * (y - expit(offset + e * w))))

    # the score is decreasing in eps, so bracket the root first
    lo, hi = -1.0, 1.0
    while score(lo) < 0:
        lo *= 2
        if lo < -1e12:
            raise ConvergenceError("logit fluctuation: cannot bracket the root")
    while score(hi) > 0:
        hi *= 2
        if hi > 1e12:
            raise ConvergenceError("logit fluctuation: cannot bracket the root")
    e = 0.0
    for _ in range(max_iter):
        s = score(e)
        if abs(s) < tol * max(1.0, float(np.sum(w))):
            return e
        if s > 0:
            lo = e
        else:
            hi = e
        p = expit(offset + e * w)
        d = float(np.sum(w**2 * p * (1 - p)))
        step = e + s / d if d > 0 else 0.5 * (lo + hi)
        e = step if lo < step < hi else 0.5 * (lo + hi)
    raise ConvergenceError(f"logit fluctuation did not converge; final score {score(e)!r}")


def tmle_fluctuate(data: TwoSampleData, pred: Predictions, kind: str = "linear") -> Fluctuation:
    """Per-fold ``eps_k`` solving ``sum_{B in S_k} (Y - m(X; eps_k)) / piB = 0``."""
    if kind not in ("linear", "logit"):
        raise EstimationError(f"unknown fluctuation {kind!r}")
    if kind == "logit" and (np.any(data.YB <= 0) or np.any(data.YB >= 1)):
        raise EstimationError("logit fluctuation needs every outcome strictly inside (0, 1)")
    eps = np.zeros(pred.K)
    score = np.zeros(pred.K)
    for k in range(pred.K):
        b = pred.foldB == k
        if not b.any():
            raise FoldError(f"fold {k} has no Sample B units; cannot fluctuate")
        w = 1.0 / pred.piBB[b]
        y, m = data.YB[b], pred.mB[b]
        if kind == "linear":
            eps[k] = np.sum(w * (y - m)) / np.sum(w**2)
            score[k] = np.sum(w * (y - m - eps[k] * w))
        else:
            off = logit(np.clip(m, LOGIT_CLIP, 1 - LOGIT_CLIP))
            eps[k] = _logit_epsilon(y, off, w)
            score[k] = np.sum(w * (y - expit(off + eps[k] * w)))
    return Fluctuation(kind, eps, score)


def targeted(pred: Predictions, fluct: Fluctuation) -> Predictions:
    """Predictions with ``m`` replaced by the fluctuated ``m*``."""
    return pred.with_outcome(
        fluct.apply(pred.mA, pred.piBA, pred.foldA),
        fluct.apply(pred.mB, pred.piBB, pred.foldB),
    )


def tmle1(data: TwoSampleData, pred: Predictions, fluct: Fluctuation, name: str = "TMLE1") -> EstimateResult:
    """Mass imputation with ``m*`` over Sample A."""
    star = targeted(pred, fluct)
    point = float(np.sum(star.mA / data.piA) / data.n)
    return EstimateResult(name, point, _dr_se(data, star, centred=False))


def tmle2(data: TwoSampleData, pred: Predictions, fluct: Fluctuation, name: str = "TMLE2") -> EstimateResult:
    star = targeted(pred, fluct)
    point = float(np.sum(star.mA / data.piA) / _n_hat_a(data))
    return EstimateResult(name, point, _dr_se(data, star, centred=True))


def variance_dr1(data: TwoSampleData, pred: Predictions, fluct: Fluctuation | None = None) -> float:
    p = pred if fluct is None else targeted(pred, fluct)
    return _dr_se(data, p, centred=False)


def variance_dr2(data: TwoSampleData, pred: Predictions, fluct: Fluctuation | None = None) -> float:
    p = pred if fluct is None else targeted(pred, fluct)
    return _dr_se(data, p, centred=True)
