"""rdmlab: shell-ensemble reduced density matrices by exact diagonalization."""

from .mc_ensemble import (
    EnergyShell,
    EnvShell,
    Rdm,
    UncoupledShell,
    diagonal_bound_report,
    gibbs_state,
    make_shell,
    make_uncoupled_shell,
    rdm_microcanonical,
    rdm_per_state,
    rdm_uncoupled,
    region_decomposition,
    trace_distance,
)
from .model import (
    AssembledModel,
    EnvironmentSpec,
    EnvOperatorSpec,
    ModelSpec,
    Reformulation,
    assemble,
    assemble_total,
    assemble_uncoupled,
    defect_chain,
    reformulate,
    synthetic_environment,
)
from .offdiag import (
    EthStats,
    QData,
    eth_stats,
    max_identity_residual,
    q_values,
    qubit_eth_prediction,
    verify_identity,
)
from .renorm import (
    RenormCandidate,
    basis_rotation_check,
    candidate_eth_mean,
    candidate_zero,
    evaluate_condition,
)
from .spectral import (
    DosEstimate,
    Eigensystem,
    SpectralCache,
    SpectralData,
    diagonalize,
    dos_compare,
    fit_env_beta,
)
from .typical import (
    KReport,
    TypicalSample,
    k_decompose,
    k_report,
    sample_typical,
    typicality_stats,
)
from .widths import (
    BreitWignerFit,
    MainBodyRegion,
    WidthReport,
    breit_wigner_fit,
    main_body,
    mean_ef_profile,
    width_report,
)

__version__ = "0.1.0"
