"""Pseudo-spectral laboratory for hyperviscous incompressible flow on the
unit torus with transport noise.

The package splits into spectral primitives (grids, fields, norms), the
noise layer (coefficient spectra, transport operators, the corrector), the
dynamics layer (configs, steppers, the integrator, diagnostics), and the
experiment layer (batch runs feeding result tables and CSV reports).
"""

from .errors import (
    IntegrationAborted,
    SimulationError,
    TorusflowError,
    ValidationError,
)
from .spectral import (
    Grid,
    SpectralField,
    MultiplierOp,
    besov_block_index,
    besov_norm,
    constant_drift,
    dealias,
    field_from_modes,
    field_from_physical,
    fractional_laplacian,
    helmholtz_project,
    l2_inner,
    l2_norm,
    load_snapshot,
    mean,
    save_snapshot,
    sobolev_norm,
    subtract_mean,
)
from .noise import (
    BrownianDriver,
    NoiseBasis,
    ThetaSpectrum,
    TransportNoise,
    build_basis,
    corrector_apply,
    corrector_limit_error,
    noise_energy_rate,
    noise_increment_field,
    theta_shell,
    transport_mode_apply,
)
from .dynamics import (
    CriticalExponents,
    SimConfig,
    TrajectoryRecord,
    critical_exponents,
    cutoff_factor,
    integrate,
    nonlinearity,
    random_divergence_free,
    regularity_functionals,
    step_deterministic,
    step_stochastic,
    trajectory_to_csv,
)

__version__ = "0.1.0"
