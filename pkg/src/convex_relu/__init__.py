"""Globally optimal two-layer ReLU networks through convex duality.

The package trains two-layer ReLU networks to verified global optimality:
closed forms for whitened / rank-one / one-dimensional data, exact convex
reformulations for spike-free data, a cutting-plane trainer with duality-gap
certificates for everything else, plus an adaptive-kernel vs. NTK comparison
and a small convex random-features image pipeline.
"""

from .closed_form import (
    Network,
    RegPath,
    fixture_dictionary,
    hinge_whitened,
    l0_closed_form,
    multiclass_whitened,
    nonuniqueness_fixture,
    regularized_whitened,
)
from .exceptions import (
    ConvexReluError,
    DataFormatError,
    DegenerateExtreme,
    EmptyClass,
    Infeasible,
    InvalidInput,
    NotWhitenable,
    NotWhitened,
    PatternInfeasible,
    RankError,
    SingularKernel,
)
from .convrf import (
    PatchSet,
    RFPipeline,
    convex_rf_train,
    extract_patches,
    filters_from_patches,
    load_images_csv,
    load_pgm_dir,
    save_images_csv,
    zca_whiten_patches,
)
from .geometry import (
    Neuron,
    SpikeFreeVerdict,
    activation_pattern,
    enumerate_extremes_1d,
    enumerate_extremes_rankone,
    extreme_point_basis,
    extreme_point_direction,
    hull_distance,
    max_correlation,
    sample_polar,
    sample_rectified_ellipsoid,
    save_points_csv,
    spike_free_check,
)
from .kernels import (
    KernelFit,
    adaptive_kernel_matrix,
    comparison_grid,
    fit,
    ntk_kernel_matrix,
    save_kernel_csv,
)
from .linalg import Dataset, SvdFactors, WhitenedDataset, pseudo_inverse, svd, whiten
from .solvers import SolveReport, SolverConfig
from .training import (
    DualCertificate,
    TrainReport,
    cutting_plane_train,
    dictionary_train,
    duality_gap,
    gap_sweep,
    reference_gd_train,
    save_gap_csv,
    spikefree_train,
    vector_cutting_plane,
)

__all__ = [
    "ConvexReluError",
    "DataFormatError",
    "Dataset",
    "DegenerateExtreme",
    "DualCertificate",
    "EmptyClass",
    "Infeasible",
    "InvalidInput",
    "KernelFit",
    "Network",
    "Neuron",
    "NotWhitenable",
    "NotWhitened",
    "PatchSet",
    "PatternInfeasible",
    "RFPipeline",
    "RankError",
    "RegPath",
    "SingularKernel",
    "SolveReport",
    "SolverConfig",
    "SpikeFreeVerdict",
    "SvdFactors",
    "TrainReport",
    "WhitenedDataset",
    "activation_pattern",
    "adaptive_kernel_matrix",
    "comparison_grid",
    "convex_rf_train",
    "cutting_plane_train",
    "dictionary_train",
    "duality_gap",
    "enumerate_extremes_1d",
    "enumerate_extremes_rankone",
    "extract_patches",
    "extreme_point_basis",
    "extreme_point_direction",
    "filters_from_patches",
    "fit",
    "fixture_dictionary",
    "gap_sweep",
    "hinge_whitened",
    "hull_distance",
    "l0_closed_form",
    "load_images_csv",
    "load_pgm_dir",
    "max_correlation",
    "multiclass_whitened",
    "nonuniqueness_fixture",
    "ntk_kernel_matrix",
    "pseudo_inverse",
    "reference_gd_train",
    "regularized_whitened",
    "sample_polar",
    "sample_rectified_ellipsoid",
    "save_images_csv",
    "save_kernel_csv",
    "save_points_csv",
    "spike_free_check",
    "spikefree_train",
    "svd",
    "vector_cutting_plane",
    "whiten",
]

__version__ = "0.1.0"
