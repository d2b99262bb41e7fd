"""Distributionally robust neural Lyapunov control.

Joint training of a neural Lyapunov certificate and a bounded controller
for control-affine systems under sampled model uncertainty, with
closed-form Wasserstein/CVaR robust margins, post-training grid
certification, and closed-loop simulation.
"""

from .dro import (AmbiguitySpec, RiskEvalResult, cvar, cvar_result,
                  dr_exponential_margin, dr_margin_general,
                  dr_pointwise_margin, guarantee_product, pointwise_margins,
                  select_index_j, var, wasserstein_radius)
from .config import (ExperimentConfig, PRESETS, build_system, config_hash,
                     load_config)
from .errors import ConfigError, ContractError, NumericError, ShapeError
from .lyapunov import (LyapunovPair, V, V_dot, controller, controller_expr,
                       grad_V, lipschitz_term, load_pair, save_pair,
                       smooth_saturate, value_grad_expr, vdot_terms_expr)
from .network import (DenseNet, GradTape, glorot_init,
                      grad_of_directional_input_grad, param_gradient)
from .optim import AdamState, adam_step
from .simulate import (ExperimentSummary, Trajectory, batch_experiment,
                       chart_state, distance_to_origin, rk4_step, rollout,
                       save_experiment, wrap_angle)
from .systems import (UncertainSystem, UncertaintySampleSet, XiDistribution,
                      eval_uncertain_dynamics, mountain_car, pendulum,
                      sample_domain)
from .training import (TrainConfig, TrainLog, dr_exponential_loss,
                       dr_pointwise_loss, dr_uniform_loss, nominal_loss,
                       train)
from .verify import (CertificateReport, MonteCarloResult, certify,
                     covering_constant, domain_grid, empirical_lipschitz,
                     grid_margin_check, monte_carlo_chance,
                     theoretical_slack, wilson_interval)

__version__ = "0.1.0"
