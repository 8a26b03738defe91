"""Row-stacked view of the two samples used by fitting and estimation.

Sample A rows carry covariates, inclusion probabilities and cluster labels;
Sample B rows carry covariates, outcomes and cluster labels. A person in both
samples simply appears once in each table, so nothing here needs to know about
overlap between the samples.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.typing import NDArray

from .design import SampleDraw
from .errors import EstimationError
from .popgen import FinitePopulation


@dataclass(frozen=True)
class TwoSampleData:
    n: int
    XA: NDArray[np.float64]
    piA: NDArray[np.float64]
    clusterA: NDArray[np.int64]
    XB: NDArray[np.float64]
    YB: NDArray[np.float64]
    clusterB: NDArray[np.int64]
    J: int
    piC: NDArray[np.float64]  # (J,)
    RC: NDArray[np.bool_]  # (J,)
    YA: Optional[NDArray[np.float64]] = None

    def __post_init__(self) -> None:
        if self.XA.shape[0] != self.piA.shape[0] or self.XA.shape[0] != self.clusterA.shape[0]:
            raise EstimationError("Sample A columns have different lengths")
        if self.XB.shape[0] != self.YB.shape[0] or self.XB.shape[0] != self.clusterB.shape[0]:
            raise EstimationError("Sample B columns have different lengths")
        if np.any(self.piA <= 0) or np.any(self.piA > 1):
            raise EstimationError("Sample A inclusion probabilities must lie in (0, 1]")

    @property
    def nA(self) -> int:
        return int(self.XA.shape[0])

    @property
    def nB(self) -> int:
        return int(self.XB.shape[0])

    @property
    def M(self) -> int:
        return int(np.unique(self.clusterA).shape[0])

    @property
    def dA(self) -> NDArray[np.float64]:
        return 1.0 / self.piA

    @property
    def N_hat_A(self) -> float:
        """Horvitz-Thompson estimate of the population size."""
        return float(self.dA.sum())


def from_draw(pop: FinitePopulation, draw: SampleDraw, with_sample_a_outcomes: bool = True) -> TwoSampleData:
    ia = np.flatnonzero(draw.RA)
    ib = np.flatnonzero(draw.RB)
    return TwoSampleData(
        n=pop.n,
        XA=pop.X[ia],
        piA=draw.piA[ia],
        clusterA=pop.cluster_id[ia],
        XB=pop.X[ib],
        YB=draw.Y[ib],
        clusterB=pop.cluster_id[ib],
        J=pop.J,
        piC=draw.piC,
        RC=draw.RC,
        YA=draw.Y[ia] if with_sample_a_outcomes else None,
    )
