"""Subspace geometry of low-rank adapter forgetting.

Controlled gradient subspaces, a sequential adapter-training simulator on
quadratic tasks, and the statistics used to relate principal angles between
task subspaces to forgetting.
"""

from .analysis import (cohens_d, effective_rank, fit_forgetting_law, layerwise_correlation,
                       pearson, rank_angle_effective, regime_analysis, summarize, welch_t_test)
from .errors import (ConfigError, ConvergenceError, DivergenceError, NumericalError,
                     PreconditionError, SubgeoError)
from .linalg import orthonormal_basis, qr, svd
from .simulator import RunRecord, TrainConfig, run_blocks, run_sequence, train_task
from .subspace import (AngleSpectrum, Subspace, estimate_subspace, generate_pair_with_angles,
                       interference, min_angle, principal_angles)
from .tasks import SyntheticTask, TaskSequence, make_sequence, make_task

__version__ = "0.1.0"
