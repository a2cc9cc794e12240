"""Multi-view entity profiling and clustering by coupled, masked nonnegative matrix factorization."""

__version__ = "0.1.0"

from .cluster import (
    Assignment,
    ClusterReport,
    assign_argmax,
    davies_bouldin,
    gap_statistic,
    kmeans,
    silhouette,
)
from .matrix import diag_select, frobenius_sq, masked_residual_sq, minmax_scale_rows
from .nls import NlsSolution, solve_nls_bpp, solve_nls_rowwise_masked
from .nmf import CoupledProblem, FactorModel, FitOptions, fit, fit_masked, fit_restarts, init_factors, objective
from .profile import (
    EmbeddingTable,
    ProfileMatrix,
    RecordCorpus,
    assemble_profile,
    build_view,
    embedding_subprofile,
    tfidf_subprofile,
)
