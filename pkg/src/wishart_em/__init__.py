"""Composite-likelihood EM classification of spatially correlated SPD matrices."""

from .baselines import gmm_eigen, kmeans_eigen, log_euclidean_classify, rand_index
from .dataset import Dataset, read_dataset, write_dataset
from .density import MarginalParams, PairParams, log_bivariate_pdf, log_wishart_pdf
from .em import FitResult, ModelParams, PairWeightPlan, build_weight_plan, classify, e_step, fit
from .rcd import rcd_pipeline, region_covariance
from .simulate import SimConfig, simulate, simulate_replication
from .special import HypergeomConfig, log_hyp0f1_matrix

__version__ = "0.1.0"

__all__ = [
    "Dataset", "FitResult", "HypergeomConfig", "MarginalParams", "ModelParams", "PairParams",
    "PairWeightPlan", "SimConfig", "build_weight_plan", "classify", "e_step", "fit", "gmm_eigen",
    "kmeans_eigen", "log_bivariate_pdf", "log_euclidean_classify", "log_hyp0f1_matrix",
    "log_wishart_pdf", "rand_index", "rcd_pipeline", "read_dataset", "region_covariance",
    "simulate", "simulate_replication", "write_dataset",
]
