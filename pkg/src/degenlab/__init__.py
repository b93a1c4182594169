"""Numerical laboratory for degenerate mixed boundary-value problems:
weighted forward solves, partial Dirichlet-to-Neumann maps, simultaneous
boundary/bulk approximation, oscillatory probing and potential recovery."""

__version__ = "0.1.0"

from ._kernels import backend_name
from .assembly import (Potentials, SystemAssembly, WeightSpec, assemble,
                       extend_trace, weighted_norms)
from .cgo import (CGOParams, SweepReport, carleman_ratio, cgo_source,
                  construct_xi, decay_sweep, solve_remainder,
                  trace_inequality_ratio)
from .dtn import (DtNMatrix, alessandrini_residual, compute_dtn, schur_dtn,
                  symmetry_defect)
from .forward import (MixedData, Solution, nearest_eigenvalue, poisson,
                      solve_mixed, weighted_normal_derivative)
from .mesh import Mesh, build_graded_box, load_mesh, save_mesh, validate_mesh
from .quadrature import weighted_cell_moment, weighted_gauss_rule
from .reconstruct import (FrequencySamples, Reconstruction, recover_v_and_q,
                          recover_v_fixed_q, sample_pairing)
from .runge import (Dictionary, FitReport, build_dictionary, bulk_target,
                    liouville_check, simultaneous_fit)

__all__ = [
    "__version__", "backend_name",
    "Mesh", "build_graded_box", "save_mesh", "load_mesh", "validate_mesh",
    "weighted_cell_moment", "weighted_gauss_rule",
    "WeightSpec", "Potentials", "SystemAssembly", "assemble",
    "weighted_norms", "extend_trace",
    "MixedData", "Solution", "solve_mixed", "poisson", "nearest_eigenvalue",
    "weighted_normal_derivative",
    "DtNMatrix", "compute_dtn", "schur_dtn", "symmetry_defect",
    "alessandrini_residual",
    "Dictionary", "FitReport", "build_dictionary", "bulk_target",
    "simultaneous_fit", "liouville_check",
    "CGOParams", "construct_xi", "cgo_source", "solve_remainder",
    "decay_sweep", "SweepReport", "carleman_ratio", "trace_inequality_ratio",
    "FrequencySamples", "Reconstruction", "sample_pairing",
    "recover_v_fixed_q", "recover_v_and_q",
]
