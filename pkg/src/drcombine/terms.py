"""Symbolic covariate terms such as ``X1``, ``X1*X3`` or ``X2^2``.

Both the population generator (true ``m0`` / ``piB0`` surfaces) and the
parametric nuisance learners (feature maps) build design columns from the same
term strings, so they live here.
"""

from __future__ import annotations

import re
from typing import Mapping, Sequence

import numpy as np
from numpy.typing import NDArray

from .errors import ConfigurationError

_FACTOR = re.compile(r"^X(\d+)(?:\^(\d+))?$")

INTERCEPT = "1"
MAIN_EFFECTS: tuple[str, ...] = ("1", "X1", "X2", "X3", "X4")
NONLINEAR_TERMS: tuple[str, ...] = ("1", "X1", "X2", "X3", "X4", "X1*X3", "X2^2")


def main_effects(n_cov: int) -> tuple[str, ...]:
    """Intercept plus ``X1 .. X{n_cov}``."""
    return (INTERCEPT,) + tuple(f"X{j}" for j in range(1, n_cov + 1))


def _parse(term: str, n_cov: int) -> list[tuple[int, int]]:
    factors = []
    for raw in term.replace(" ", "").split("*"):
        m = _FACTOR.match(raw)
        if m is None:
            raise ConfigurationError(f"cannot parse term {term!r}")
        col = int(m.group(1)) - 1
        power = int(m.group(2) or 1)
        if not 0 <= col < n_cov:
            raise ConfigurationError(f"term {term!r} refers to missing covariate X{col + 1}")
        if power < 1:
            raise ConfigurationError(f"term {term!r} has a non-positive power")
        factors.append((col, power))
    return factors


def term_column(X: NDArray[np.float64], term: str) -> NDArray[np.float64]:
    """Evaluate a single term on the rows of ``X``."""
    X = np.asarray(X, dtype=float)
    if term.strip() == INTERCEPT:
        return np.ones(X.shape[0])
    out = np.ones(X.shape[0])
    for col, power in _parse(term, X.shape[1]):
        out = out * X[:, col] ** power
    return out


def design_matrix(X: NDArray[np.float64], terms: Sequence[str]) -> NDArray[np.float64]:
    """Stack the columns for ``terms`` into an ``(n, len(terms))`` matrix."""
    if len(terms) == 0:
        raise ConfigurationError("empty term list")
    return np.column_stack([term_column(X, t) for t in terms])


def validate_formula(formula: Mapping[str, float], n_cov: int = 4) -> None:
    """Raise :class:`ConfigurationError` if any term or coefficient is unusable."""
    if not formula:
        raise ConfigurationError("formula has no terms")
    for term, coef in formula.items():
        if term.strip() != INTERCEPT:
            _parse(term, n_cov)
        if not np.isfinite(float(coef)):
            raise ConfigurationError(f"coefficient for {term!r} is not finite")


def linear_predictor(X: NDArray[np.float64], formula: Mapping[str, float]) -> NDArray[np.float64]:
    """Return ``sum_t coef_t * term_t(X)``."""
    X = np.asarray(X, dtype=float)
    eta = np.zeros(X.shape[0])
    for term, coef in formula.items():
        eta = eta + float(coef) * term_column(X, term)
    return eta
