"""Optimal mass transport and minimum-effort steering over rigid-body spin
dynamics: ground costs, radial steering laws, a transcription oracle, and
discrete Kantorovich couplings.
"""

from .ground_cost import (CostMatrix, GroundCostSpec, cost_classical,
                          cost_lower_bound, cost_matrix, cost_matrix_to_csv,
                          cost_norminv, cost_upper_bound)
from .rigid_body import (AffinePair, InertiaBody, InvalidInertiaError,
                         affine_pair, euler_drift, euler_drift_jacobian,
                         is_translated_norm_invariant, make_body, rhs_x, rhs_z,
                         zero_pair)
from .steering import (DivergenceError, InvalidWeightError, SingularStateError,
                       SteeringPolicy, Trajectory, integrate, make_policy,
                       norm_law_deviation, open_loop_policy, policy_cost,
                       rescale_weighted, two_phase_policy, ustar, ustar_policy,
                       ustarstar, ustarstar_policy)
from .trajopt import (TranscriptionProblem, TranscriptionSolution,
                      adjoint_gradient, euler_problem, free_problem,
                      ground_cost_numeric, solve)
from .transport import (Coupling, DiscreteMeasure, EnsembleDivergenceError,
                        EpsilonTooSmallError, GaussianSpec,
                        MarginalMismatchError, coupling_summary,
                        coupling_to_csv, ensemble_steer, gaussian_spec,
                        make_measure, measure_to_csv, product_coupling,
                        pushforward_inertia, sample_gaussian, second_moment,
                        solve_exact, solve_sinkhorn)

__version__ = "0.1.0"
