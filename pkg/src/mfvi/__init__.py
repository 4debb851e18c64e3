"""Mean-field variational inference for two-layer Bayesian networks.

Three stochastic-gradient training schemes (exact-expectation, sampled
reparameterization, and a two-draw scheme with the same large-width
limit), a deterministic particle integrator for that limit, and an
experiment harness with distribution diagnostics.
"""

from .core import (
    SIGMOID,
    TANH,
    NeuronParam,
    ParticleCloud,
    PriorSpec,
    RidgeActivation,
    activation,
    activation_deriv,
    kl_divergence,
    kl_divergence_grad,
    kl_divergence_grad_cloud,
    network_output,
    reparameterize,
    sigmoid,
    softplus,
    softplus_inverse,
    sorted_mean,
    sorted_sum,
    unit_response,
    unit_response_grad,
)
from .data import DataModel, draw_data, draw_datum
from .expectations import (
    ExpectationConfig,
    QuadratureRule,
    gauss_hermite_rule,
    mean_response,
    mean_response_grad,
    mean_self_term,
)
from .training import (
    SCHEMES,
    InitSpec,
    Snapshot,
    TrainConfig,
    Trajectory,
    init_cloud,
    step_bbb,
    step_idealized,
    step_minimal,
    train,
)
from .limit import LimitConfig, integrate_limit, velocity, velocity_field
from .analysis import (
    EvalContext,
    ExperimentGrid,
    Functional,
    RunSummary,
    aggregate_runs,
    elbo_components,
    eval_functional,
    histogram,
    particle_values,
    predictive_std,
    run_experiment,
    summarize_trajectory,
    wasserstein1_1d,
)

__version__ = "0.1.0"
