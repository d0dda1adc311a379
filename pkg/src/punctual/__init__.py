"""punctual: a numerical laboratory for degenerate adaptive-dynamics diffusions.

Builds the drift/diffusion coefficients of the trait-substitution diffusion
from a fitness function and mutation kernel, simulates the singular SDE with
absorption on the set of evolutionary singularities, classifies those
singularities, evaluates Freidlin-Wentzell path actions and quasi-potentials,
and runs Monte Carlo exit-from-a-domain experiments against the large-
deviations predictions.
"""

__version__ = "0.1.0"

from .action import (ActionValue, DiscretePath, QPOptions, QuasiPotentialResult,
                     action, control_from_path, exit_cost, integrate_S,
                     non_lsc_witness, quasipotential)
from .classify import (Dim1Verdict, DimDVerdict, ScaleDiagnostics, attach_scale,
                       classify_dim1, classify_dimd, scale_functions,
                       scale_matches_verdict)
from .coeff import (CoefficientField, build_field, builtin_field, check_h4,
                    eval_a_gaussian_closed_form, regularity_probe, sqrt_psd)
from .exitdomain import (AttractingReport, Domain, ExitExperimentResult,
                         check_attracting, domain_exit_stop,
                         excursion_decomposition, run_exit_experiment)
from .models import (FitnessModel, MutationKernel, SingularitySet, band1d,
                     builtin_model, check_fitness_axioms, find_singularities,
                     kernel_moment, quad1d, radial2d)
from .scenario import RunManifest, Scenario, parse_scenario, write_scenario
from .sde import (SimConfig, StopRule, Trajectory, TrajectorySummary,
                  hitting_time_stats, level_stop, simulate, simulate_batch,
                  sphere_exit_stop, sphere_hit_stop)

__all__ = [name for name in dir() if not name.startswith("_")]
