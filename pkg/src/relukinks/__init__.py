"""Gradient-descent training of zero-bias-initialised two-layer ReLU networks on scalar data,
with kink tracking and a run-time certificate that kinks never reach the data."""
from .certify import (Anchor, Certificate, CertificateAccumulator, KinkReport, certify_forever,
                      certify_from_anchor, kinks, new_accumulator, theta_envelopes, update_accumulator)
from .data import (AssumptionReport, Dataset, EmbeddedDataset, FiniteDistribution, RegressionSummary,
                   augment_three_points, check_assumptions, distribution_summary, embed, example_dataset,
                   example_distribution, read_dataset, regression_summary, sample, write_dataset)
from .errors import ConfigError, DomainError, NumericalError, SingularityError
from .estimator import TwoLayerReLURegressor
from .harness import (EarlyStopConfig, EarlyStopping, MonteCarloReport, StepSize, TrialConfig, TrialResult,
                      early_stop_check, experiment_comparison, experiment_shift, experiment_trajectory,
                      monte_carlo, run_trial, wilson_interval)
from .network import (Distribution, Gradient, Hyperparams, InitSpec, Weights, WeightsND, empirical_loss,
                      forward, gd_step, gradient, init_weights, sgd_step)
from .reduced import (ActivationPattern, ReducedState, ReferenceOperator, SigmaMoments, activation_pattern,
                      assemble_A, fixed_pattern_loss, in_region, reference_operator, reference_sum_bounds,
                      sigma_moments, step_reduced, u_vectors)

__version__ = "0.1.0"
