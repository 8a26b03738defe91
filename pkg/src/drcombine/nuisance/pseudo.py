"""Logistic selection model fitted by (approximate) pseudo-maximum likelihood.

Sample B rows are the "events". The population "non-events" are represented
by Sample A weighted by ``1/piA``. The full pseudo-log-likelihood is

    sum_B log p(x) + sum_A w log(1 - p(x)) - sum_B log(1 - p(x))

and the approximate version drops the last sum. Stacking both samples as rows
with an event indicator ``y`` and a non-event weight ``c`` gives the common form
``sum_i y_i log p_i + c_i log(1 - p_i)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray
from scipy.special import expit, log_expit

from ..errors import ConvergenceError

MAX_ITER = 100
GTOL = 1e-10
MAX_HALVINGS = 30
# curvature left in the flattest direction, relative to its p = 1/2 bound, below
# which the maximum is treated as not attained (separated data). Regular fits,
# even with rare events, sit around 1e-3 and above.
FLAT_TOL = 1e-6


@dataclass(frozen=True)
class PseudoLikelihood:
    """Stacked rows: design ``Z``, event indicator ``y`` and non-event weight ``c``."""

    Z: NDArray[np.float64]
    y: NDArray[np.float64]
    c: NDArray[np.float64]

    @classmethod
    def from_samples(
        cls, ZB: NDArray[np.float64], ZA: NDArray[np.float64], wA: NDArray[np.float64], full: bool = True
    ) -> "PseudoLikelihood":
        nB, nA = ZB.shape[0], ZA.shape[0]
        Z = np.vstack([ZB, ZA])
        y = np.concatenate([np.ones(nB), np.zeros(nA)])
        c = np.concatenate([np.full(nB, -1.0 if full else 0.0), np.asarray(wA, dtype=float)])
        return cls(Z=Z, y=y, c=c)

    @property
    def scale(self) -> float:
        return float(np.abs(self.y).sum() + np.abs(self.c).sum())

    def value(self, alpha: NDArray[np.float64]) -> float:
        eta = self.Z @ alpha
        return float(self.y @ log_expit(eta) + self.c @ log_expit(-eta))

    def gradient(self, alpha: NDArray[np.float64]) -> NDArray[np.float64]:
        p = expit(self.Z @ alpha)
        return self.Z.T @ (self.y * (1.0 - p) - self.c * p)

    def hessian(self, alpha: NDArray[np.float64]) -> NDArray[np.float64]:
        p = expit(self.Z @ alpha)
        w = (self.y + self.c) * p * (1.0 - p)
        return -(self.Z.T * w) @ self.Z


@dataclass(frozen=True)
class NewtonResult:
    coef: NDArray[np.float64]
    objective: float
    iterations: int
    grad_norm: float
    history: tuple[float, ...]


def maximize(
    obj: PseudoLikelihood,
    start: NDArray[np.float64] | None = None,
    max_iter: int = MAX_ITER,
    gtol: float = GTOL,
    max_halvings: int = MAX_HALVINGS,
) -> NewtonResult:
    """Newton ascent with step halving.

    Converged when the largest gradient entry divided by the total row weight
    is below ``gtol``. Raises :class:`ConvergenceError` when the iteration
    budget or the step-halving budget runs out first, or when the objective
    has lost its curvature along some direction (separated data: the gradient
    then vanishes only because the coefficients diverge).
    """
    res = _newton(obj, start, max_iter, gtol, max_halvings)
    flat = flattest_curvature(obj, res.coef)
    if flat < FLAT_TOL:
        raise ConvergenceError(
            f"no curvature left after {res.iterations} iterations (relative {flat:.2g}, "
            f"max |gradient| {res.grad_norm:.3g}); the data appear to be separated"
        )
    return res


def flattest_curvature(obj: PseudoLikelihood, alpha: NDArray[np.float64]) -> float:
    """``min_v v'(-H)v / v'H0 v`` with ``H0`` the curvature at ``p = 1/2`` on every row.

    This is a weighted mean of ``4 p (1 - p)``, so it does not depend on how
    collinear the design is; it tends to 0 only when the fit runs off to
    ``p`` in {0, 1}.
    """
    w0 = np.abs(obj.y + obj.c) / 4.0
    H0 = (obj.Z.T * w0) @ obj.Z
    try:
        L = np.linalg.cholesky(H0)
    except np.linalg.LinAlgError:
        return 0.0
    Li = np.linalg.inv(L)
    return float(np.linalg.eigvalsh(Li @ -obj.hessian(alpha) @ Li.T)[0])


def _newton(obj, start, max_iter, gtol, max_halvings) -> NewtonResult:
    p = obj.Z.shape[1]
    alpha = np.zeros(p) if start is None else np.array(start, dtype=float)
    scale = max(obj.scale, 1.0)
    f = obj.value(alpha)
    history = [f]
    for it in range(1, max_iter + 1):
        g = obj.gradient(alpha)
        gnorm = float(np.max(np.abs(g)))
        if gnorm / scale <= gtol:
            return NewtonResult(alpha, f, it - 1, gnorm, tuple(history))
        H = obj.hessian(alpha)
        try:
            step = np.linalg.solve(-H, g)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(-H, g, rcond=None)[0]
        t = 1.0
        for _ in range(max_halvings + 1):
            cand = alpha + t * step
            fc = obj.value(cand)
            if np.isfinite(fc) and fc >= f:
                break
            t *= 0.5
        else:
            # no ascent possible along the Newton direction; accept if only roundoff remains
            if gnorm / scale <= 1e3 * gtol:
                return NewtonResult(alpha, f, it, gnorm, tuple(history))
            raise ConvergenceError(
                f"step halving exhausted after {it} iterations (max |gradient| {gnorm:.3g}); "
                "the data may be completely separated"
            )
        alpha, f = cand, fc
        history.append(f)
        if np.max(np.abs(t * step)) < 1e-14 * (1.0 + np.max(np.abs(alpha))):
            g = obj.gradient(alpha)
            return NewtonResult(alpha, f, it, float(np.max(np.abs(g))), tuple(history))
    g = obj.gradient(alpha)
    gnorm = float(np.max(np.abs(g)))
    if gnorm / scale <= 1e3 * gtol:
        return NewtonResult(alpha, f, max_iter, gnorm, tuple(history))
    raise ConvergenceError(f"no convergence after {max_iter} iterations (max |gradient| {gnorm:.3g})")


def intercept_start(obj: PseudoLikelihood, has_intercept: bool) -> NDArray[np.float64]:
    """Start at the intercept-only solution when the first column is constant."""
    start = np.zeros(obj.Z.shape[1])
    if has_intercept:
        nB = obj.y.sum()
        nonevent = obj.c.sum()
        if nB > 0 and nonevent > 0:
            start[0] = np.log(nB / nonevent)
    return start
