"""Sparse LQR state-feedback design for distributed linear systems.

Proximal-gradient (ISTA, FISTA) and projected-gradient (ISPA) solvers with
stability-aware backtracking, ADMM and GraSP reference methods, a
multi-agent benchmark plant, and a trainable unrolled-iteration tuner.
"""
__version__ = "0.1.0"

from .errors import *  # noqa: F401,F403
from .linalg import (SpectralReport, care_residual, lyapunov_residual, solve_care,
                     solve_dual_lyapunov, solve_lyapunov, spectral_abscissa)
from .objective import (Gain, LQRPoint, LyapunovPair, Plant, cost_J, eval_L, eval_P, grad_J,
                        lqr_gain, lyapunov_pair, objective_F, surrogate_J)
from .sparsity import (Ball, BallKind, BlockPartition, Regularizer, RegKind, g_value, nnz,
                       project, project_block, project_l0, project_l1, prox, shrink,
                       shrink_block, shrink_block_weighted, shrink_weighted, update_weights)
from .solvers import (IspaConfig, IstaConfig, SolveResult, SolveTrace, Status, fista_solve,
                      ispa_find_feasible, ispa_solve, ista_solve, ista_step)
from .baselines import AdmmConfig, GraspConfig, admm_solve, grasp_solve
from .systems import (DatasetSpec, LabeledExample, gen_dataset, gen_multiagent, load_plant,
                      save_plant)
from .unrolled import (LayerParams, TrainOptions, UnrolledNet, forward, loss, nmse, nmse_by_depth,
                       train)
