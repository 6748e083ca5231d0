"""Speed and second-order fluctuations of coalescents coming down from infinity.

The package evaluates the drift functionals that control the descent
from infinity, inverts them into the speed ``v_t``, simulates the
block-counting process exactly through two independent backends, samples
the totally skewed stable limit process through two independent routes,
and ships a harness comparing rescaled fluctuations against the limit
law at desk scale.
"""

__version__ = "0.1.0"

from .errors import (CapacityError, CoalfluctError, DomainError, GuardError,
                     NumericError, PreconditionError, QuadratureError)
from .measure import (LambdaSpec, MergeKernel, beta_family, from_json,
                      lambda_density, make_lambda, mass_below, merge_kernel,
                      merge_rate, perturbed_power, tabulated_density, to_json,
                      validate_spec)
from .psi import AsymptoticConstants, PsiEvaluator, asymptotic_constants
from .speed import (SpeedCalculator, SpeedTable, build_speed_table, speed_v,
                    speed_v_star, speed_w, time_at_count)
from .coalescent import (ChainRateTable, CoalescentPath, evaluate_N,
                         sample_merge_size, simulate_block_chain,
                         simulate_poisson_coloring)
from .stable import (NuSampler, StableParams, StablePath, sample_skewed_stable,
                     sample_Y_eps_marginal, sample_z_marginal,
                     sample_z_sde_marginal, simulate_levy_L, simulate_Y_eps,
                     simulate_Z_direct, simulate_Z_sde, skewed_stable_laplace,
                     small_jump_variance, z_marginal_scale)
from .harness import (ExperimentConfig, FluctuationReport, counterexample_ratio,
                      run_fluctuation_experiment, sup_deviation_scaling,
                      two_sample_ks, validate_config)

__all__ = [name for name in dir() if not name.startswith("_")]
