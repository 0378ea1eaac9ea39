"""Posterior multimodality diagnostics for longitudinal ODE fits.

Fitting a growth law to repeat size measurements requires integrating
the law inside the likelihood.  With a fixed-step fourth-order
Runge-Kutta backend the discrete update admits parameter values, other
than the truth, whose projections reproduce the data exactly; dispersed
fits then split into well-separated posterior modes.  This package
simulates such surveys, fits them by MCMC and quasi-Newton optimisation
under interchangeable integration backends, clusters the resulting
estimates, predicts the erroneous mode locations in closed form, and
audits fitted clusters by re-integrating at their parameters with a
high-accuracy reference.
"""

from .audit import (
    AFFINE_DESIGN,
    AFFINE_TRUE,
    AuditVerdict,
    CANHAM_DESIGN,
    CANHAM_TRUE,
    ClusterHealth,
    ExperimentConfig,
    ExperimentResult,
    MASTER_SEED,
    PER_CHAIN_DATASET,
    SHARED_DATASET,
    affine_study_config,
    build_verdict,
    canham_study_config,
    emit_plot_data,
    read_config,
    reproject_cluster,
    run_experiment,
    write_config,
)
from .defects import (
    DefectRoots,
    DefectSpec,
    chained_match_roots,
    defect,
    defect_curve,
    find_roots,
    multiplicity4_root,
    predicted_modes,
    single_step_poly,
    truncation_residual,
)
from .inference import (
    ChainResult,
    FitConfig,
    LBFGS,
    MCMC,
    Normal,
    Posterior,
    default_priors,
    read_chains,
    run_lbfgs,
    run_mcmc,
    write_chains,
)
from .integrators import (
    ANALYTIC_AFFINE,
    IntegrationError,
    MaxStepsExceeded,
    RK4_FIXED,
    RK45_ADAPTIVE,
    StepConfig,
    StepTrace,
    StepUnderflow,
    analytic_config,
    integrate_interval,
    rk4_config,
    rk4_step,
    rk45_config,
    rk45_steps,
    write_traces,
)
from .mixture import (
    MixtureFit,
    ModeSummary,
    assign,
    fit_em,
    mode_report,
    split_init,
)
from .models import (
    AFFINE,
    AffineParams,
    CANHAM,
    CanhamParams,
    DomainError,
    OdeModel,
    affine_model,
    analytic_affine,
    canham_model,
    read_params,
    shift,
    unshift,
    write_params,
)
from .simulate import (
    NoiseSpec,
    ObservationSeries,
    SurveyDesign,
    read_series,
    round_to_grid,
    simulate_affine,
    simulate_canham,
    substream,
    write_series,
)

__version__ = "0.1.0"
