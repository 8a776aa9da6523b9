"""
crowd-rom: equation-free reduced-order models of macroscopic crowd flow
"""

__version__ = "0.1.0"

from .grid_domain import Field, Grid, build_grid, density_field, total_mass
from .hughes_solver import HughesParams, GaussianIc, SimulationRun, run_simulation
from .dataset import SnapshotMatrix, SplitPlan
from .pod import PodBasis, fit_pod, pod_decode, pod_encode
from .dmaps import DmapsModel, LatentEmbedding, fit_dmaps, nystrom_extend
from .knn_lift import KnnLifter, build_lifter, lift
from .mvar import LatentTrajectorySet, MvarModel, fit_mvar, forecast
from .metrics import ErrorSeries, evaluate_run, l2_errors, wasserstein1
from .config import PipelineConfig, load_config
