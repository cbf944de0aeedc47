"""Variational p-Laplacian eigenvalues for capacitary measures on grids.

The package discretizes a box with a uniform grid, models measures made of
a blocked (infinite) part, an absolutely continuous density and point atoms,
and computes the nondecreasing sequence of inf-sup eigenvalues of

    -div(|grad u|^{p-2} grad u) + V |u|^{p-2} u = lambda |u|^{p-2} u (nu1 - nu2)

together with outer optimization of the potential V under a Psi-budget and
of quasi-open sets under a volume constraint.
"""

from plapopt.grid import GridSpec, Field, discrete_gradient, integrate
from plapopt.measure import (
    CapacitaryMeasure,
    WeightPair,
    PsiSpec,
    from_quasi_open,
    from_potential,
    lebesgue_weights,
    zero_measure,
    add,
    leq,
    sigma_finite_set,
    psi_volume,
)
from plapopt.energy import (
    EnergyContext,
    ConstraintViolation,
    f_energy,
    g_energy,
    rayleigh,
    energy_gradient,
    g_gradient,
    residual,
)
from plapopt.torsion import SolveReport, torsion, gamma_distance, prox
from plapopt.spectrum import (
    SubspaceCandidate,
    SpectralResult,
    InfeasibleSubspace,
    sup_on_sphere,
    eigen_first,
    eigen_minimax,
    certify,
)
from plapopt.gamma import (
    MeasureSequence,
    blocked_limit_sequence,
    lsc_check,
    usc_check,
    psi_lsc_check,
)
from plapopt.optimize import (
    ObjectiveSpec,
    ConstraintSpec,
    objective_eval,
    project_psi_budget,
    optimize_potential,
    optimize_set,
)

__version__ = "0.1.0"

__all__ = [
    "GridSpec", "Field", "discrete_gradient", "integrate",
    "CapacitaryMeasure", "WeightPair", "PsiSpec",
    "from_quasi_open", "from_potential", "lebesgue_weights",
    "zero_measure", "add", "leq", "sigma_finite_set", "psi_volume",
    "EnergyContext", "ConstraintViolation",
    "f_energy", "g_energy", "rayleigh",
    "energy_gradient", "g_gradient", "residual",
    "SolveReport", "torsion", "gamma_distance", "prox",
    "SubspaceCandidate", "SpectralResult", "InfeasibleSubspace",
    "sup_on_sphere", "eigen_first", "eigen_minimax", "certify",
    "MeasureSequence", "blocked_limit_sequence",
    "lsc_check", "usc_check", "psi_lsc_check",
    "ObjectiveSpec", "ConstraintSpec", "objective_eval",
    "project_psi_budget", "optimize_potential", "optimize_set",
    "__version__",
]
