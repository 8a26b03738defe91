"""Sample B: independent Bernoulli selection given covariates."""

from __future__ import annotations

from typing import Optional

import numpy as np
from numpy.typing import NDArray

from .popgen import FinitePopulation, solve_alpha_int  # noqa: F401  (re-exported)


def draw_sample_b(
    pop: FinitePopulation, rng: np.random.Generator, piB: Optional[NDArray[np.float64]] = None
) -> NDArray[np.bool_]:
    """``RB_i ~ Bernoulli(piB_i)`` independently; ``piB`` defaults to the true selection probabilities."""
    p = pop.true_sel_prob if piB is None else np.broadcast_to(np.asarray(piB, dtype=float), (pop.n,))
    return rng.random(pop.n) < p
