"""Desk-scale laboratory for flat blow-up in the complex Ginzburg-Landau equation.

The package verifies, at numerical desk scale, the chain of identities behind
the modulation construction of flat (type-II) blow-up solutions: the drifting
Hermite calculus, the Mehler semigroup and its spectral gap, the linearized
right-hand side with its projection formulas, and the coupled
profile-plus-gauge simulator with its shrinking-set bookkeeping.
"""

from .model import (
    ComplexSplit,
    DEFAULT_PARAMS,
    Frame,
    GridFunction,
    Parameters,
    delta_decompose,
    delta_recompose,
    from_similarity,
    profile_e,
    profile_f,
    scaling_factor,
    to_similarity,
)
from .spectral import (
    ModeDecomposition,
    Weight,
    hermite_H,
    hermite_h,
    monomial_H_coeffs,
    norm_LM,
    norm_minus,
    norm_s,
    project_Qn,
    split_modes,
    weighted_inner,
)
from .semigroup import (
    MehlerKernel,
    apply_L0s,
    apply_Ldelta,
    apply_Ls,
    jordan_closed,
    measure_spectral_gap,
    mehler_propagate,
    random_remainder,
)
from .rhs import (
    coupling_coeff,
    project_term,
    resonant_V_coeffs,
    rhs_total,
    term_B,
    term_Ds,
    term_N,
    term_Rs,
    term_T,
    term_V,
)
from .simulate import (
    ModulationState,
    RateReport,
    RunSettings,
    ShrinkingSetReport,
    SimulationTrace,
    extract_rates,
    initial_data_psi,
    modulation_jacobian,
    modulation_residual,
    newton_enforce_constraints,
    refine_survivor,
    run_simulation,
    shooting_sweep,
)
from .io import ConfigError, RunConfig, load_config

__version__ = "0.1.0"
