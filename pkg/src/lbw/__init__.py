"""Local Bures-Wasserstein optimal transport between point clouds."""

__version__ = "0.1.0"

from .assignment import MatchMatrix, assignment_cost, hungarian, mean_cost_matrix
from .bures import (
    AffineMap,
    BarycenterConfig,
    BarycenterSolveReport,
    GaussianParams,
    apply_map,
    bw_barycenter,
    bw_distance_sq,
    fixed_point_defect,
    monge_map,
)
from .core import (
    BarycenterModel,
    LbwModel,
    SimplexWeights,
    barycenter,
    barycenter_weights,
    check_provenance,
    learn,
    transport,
    transport_to_barycenter,
)
from .errors import *  # noqa: F401,F403
from .fairness import FairnessReport, LabeledDataset, auc, dp_gamma, evaluate, linear_scorer, repair
from .gmm import GaussianComponent, GmmConfig, GmmModel, aic, fit_em, hard_assign, responsibilities, select_k
from .io import load_model, save_model
from .shapes import (
    BenchRecord,
    Silhouette,
    ellipse_silhouette,
    otsu_threshold,
    pixel_accuracy,
    rasterize,
    run_simplex_sweep,
    sample_silhouette,
    support_agreement,
)
from .spd import SpdMatrix, SpdTolerances, as_spd, random_spd, spd_inv_sqrt, spd_sqrt
