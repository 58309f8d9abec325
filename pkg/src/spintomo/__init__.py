"""Stern-Gerlach spin-1/2 tomography.

Simulates repeated two-outcome spin measurements in arbitrary analyzer
directions and reconstructs the unknown polarization vector by maximum
likelihood, with a linear-inversion baseline, a brute-force likelihood
oracle, and renormalized-POM diagnostics of the extremal state.
"""

from .algebra import (
    BALL_EPS,
    IDENTITY,
    PAULI,
    SIGMA_X,
    SIGMA_Y,
    SIGMA_Z,
    InvalidDirectionError,
    InvalidStateError,
    OutOfBallError,
    born_probability,
    check_density_matrix,
    density_from_polarization,
    overlap_squared,
    polarization_from_density,
    polarization_vector,
    projector_from_direction,
    unit_direction,
)
from .estimator import (
    InvalidFrameError,
    LinearInversionResult,
    ReconstructionResult,
    SingularDenominatorError,
    SolverOptions,
    compute_K,
    compute_R,
    gradient_residual,
    grid_oracle,
    linear_inversion,
    log_likelihood,
    maxlik_fixed_point,
    overcompleteness_defect,
)
from .experiment import (
    BarTriple,
    ExperimentConfig,
    ExperimentReport,
    Repetition,
    bar_triples,
    default_directions,
    repetition_statistics,
    run_experiment,
    write_bars_csv,
    write_report_json,
    write_states_csv,
)
from .pom import (
    RenormalizedElement,
    SingularRenormalizationError,
    build_renormalized_pom,
    closure_defect,
    diagnostic_report,
    expectation_identity_defect,
)
from .simulate import (
    MeasurementRecord,
    MeasurementSetting,
    derive_rng,
    derive_seed,
    read_records_csv,
    read_records_json,
    records_from_json,
    records_to_json,
    sampling_rms,
    simulate_campaign,
    simulate_setting,
    write_records_csv,
    write_records_json,
)

__version__ = "0.1.0"
