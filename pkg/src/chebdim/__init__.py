"""Dynamic initial margin with Chebyshev tensors.

Modules
-------
cheb_core    Chebyshev grids, tensors and barycentric evaluation.
rfem         Hull-White / SABR scenario simulation and the model-to-market map.
pricers      Swap and swaption pricers with finite-difference sensitivities.
simm         Simplified single-currency IR delta/vega margin.
dim_methods  Brute force, Chebyshev (model and market space) and regression DIM.
harness      Run orchestration, CSV output and report tables.
"""

from .cheb_core import (
    ChebyshevGrid,
    ChebyshevTensor,
    HyperRectangle,
    Interval,
    build_tensor,
    cheb_points,
    convergence_study,
    eval_1d,
    eval_nd,
)
from .config import RunConfig, load_config
from .harness import RunSummary, compare, run

__all__ = [
    "ChebyshevGrid",
    "ChebyshevTensor",
    "HyperRectangle",
    "Interval",
    "RunConfig",
    "RunSummary",
    "build_tensor",
    "cheb_points",
    "compare",
    "convergence_study",
    "eval_1d",
    "eval_nd",
    "load_config",
    "run",
]
