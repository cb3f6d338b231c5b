"""Heat kernels along the Ricci-harmonic map flow on model 3-manifolds."""

import os

# cap BLAS/FFT worker threads before numpy is loaded
_threads = os.environ.get("RHFLOW_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[_var] = _threads

from .errors import LabError  # noqa: E402
from .geometry import CouplingSchedule, GeometryState, ManifoldConfig, Variant, curvature  # noqa: E402
from .flow import FlowParams, FlowTrajectory, closed_form, run_flow  # noqa: E402
from .heatkernel import conjugate_solve, forward_solve, semigroup_check, sphere_oracle, theta_oracle  # noqa: E402
from .sobolev import estimate_AB, lambda0_alpha, probe_inequality, talenti_constant  # noqa: E402
from .bounds import ComparisonInputs, corollary_bound, theorem_bound, verify  # noqa: E402

__version__ = "0.1.0"

__all__ = [
    "LabError", "CouplingSchedule", "GeometryState", "ManifoldConfig", "Variant", "curvature",
    "FlowParams", "FlowTrajectory", "closed_form", "run_flow",
    "conjugate_solve", "forward_solve", "semigroup_check", "sphere_oracle", "theta_oracle",
    "estimate_AB", "lambda0_alpha", "probe_inequality", "talenti_constant",
    "ComparisonInputs", "corollary_bound", "theorem_bound", "verify",
]
