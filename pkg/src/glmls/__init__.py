"""Multiclass generalized linear model training by iterated least squares.

The package fits models of the form E[y | x] = g(Wx), where g is the
gradient of a convex potential and the targets y are probability rows, by
repeatedly solving linear least squares problems against one factorization
of the feature second-moment matrix.  Three solver families are provided:

- :func:`generalized_least_squares`: full-gradient descent preconditioned
  by the inverse second moment, so each step costs one triangular solve.
- :func:`calibrated_least_squares`: alternates a least squares fit of the
  current residuals with a one-dimensional recalibration of the outputs,
  followed by projection onto the probability simplex.
- :func:`stagewise`: grows the feature set block by block (random Fourier
  features, coordinate subsets) and accumulates per-block least squares
  fits into a single additive predictor.

Scikit-learn style wrappers live in :mod:`glmls.estimators`; bound
checkers that certify convergence behavior live in :mod:`glmls.diagnostics`.
"""

from .data import (
    DataFormatError,
    Dataset,
    SyntheticSpec,
    filter_single_topic,
    load_dataset,
    load_idx,
    load_libsvm,
    log_tf,
    prune_rare_terms,
    save_dataset,
    split_dataset,
    synthesize,
)
from .diagnostics import (
    BoundReport,
    DualityReport,
    MajorizationCheck,
    calibration_bound_report,
    check_dual_inequalities,
    check_majorization,
    classification_error,
    confusion_counts,
    descent_bound_reports,
    estimate_link_condition,
    mahalanobis_norm,
    residuals_monotone,
    sample_simplex_interior,
)
from .estimators import (
    CalibratedLeastSquaresClassifier,
    GeneralizedLeastSquaresClassifier,
    GradientDescentClassifier,
    StagewiseClassifier,
)
from .features import (
    BlockSpec,
    CalibrationBasis,
    FeatureGenerator,
    FixedSubsetGenerator,
    IdentityGenerator,
    PcaBasis,
    PrincipalComponents,
    RandomFourierFeatures,
    RFFGenerator,
    SubsetGenerator,
    make_generator,
    materialize_block,
    median_bandwidth,
    pca_fit_project,
    rff_frequencies,
    rff_transform,
)
from .glm import (
    LabeledBatch,
    LinkSpec,
    identity_link,
    log_sum_exp,
    loss,
    loss_gradient,
    make_link,
    scores,
    softmax,
    softmax_link,
)
from .linalg import (
    NumericalError,
    SecondMoment,
    SpdFactor,
    SpectrumReport,
    accumulate_second_moment,
    factor_spd,
    merge_second_moments,
    solve_spd,
    top_singular_values,
)
from .simplex import project_rows, project_simplex
from .solvers import (
    CalibratedModel,
    CalibrationStage,
    IterationRecord,
    StageRecord,
    StagewiseModel,
    TrainTrace,
    WeightMatrix,
    calibrated_least_squares,
    generalized_least_squares,
    gradient_descent,
    predict,
    stagewise,
)

__version__ = "0.1.0"

__all__ = [
    "BlockSpec",
    "BoundReport",
    "CalibratedLeastSquaresClassifier",
    "CalibratedModel",
    "CalibrationBasis",
    "CalibrationStage",
    "DataFormatError",
    "Dataset",
    "DualityReport",
    "FeatureGenerator",
    "FixedSubsetGenerator",
    "GeneralizedLeastSquaresClassifier",
    "GradientDescentClassifier",
    "IdentityGenerator",
    "IterationRecord",
    "LabeledBatch",
    "LinkSpec",
    "MajorizationCheck",
    "NumericalError",
    "PcaBasis",
    "PrincipalComponents",
    "RFFGenerator",
    "RandomFourierFeatures",
    "SecondMoment",
    "SpdFactor",
    "SpectrumReport",
    "StageRecord",
    "StagewiseClassifier",
    "StagewiseModel",
    "SubsetGenerator",
    "SyntheticSpec",
    "TrainTrace",
    "WeightMatrix",
    "accumulate_second_moment",
    "calibrated_least_squares",
    "calibration_bound_report",
    "check_dual_inequalities",
    "check_majorization",
    "classification_error",
    "confusion_counts",
    "descent_bound_reports",
    "estimate_link_condition",
    "factor_spd",
    "filter_single_topic",
    "generalized_least_squares",
    "gradient_descent",
    "identity_link",
    "load_dataset",
    "load_idx",
    "load_libsvm",
    "log_sum_exp",
    "log_tf",
    "loss",
    "loss_gradient",
    "mahalanobis_norm",
    "make_generator",
    "make_link",
    "materialize_block",
    "median_bandwidth",
    "merge_second_moments",
    "pca_fit_project",
    "predict",
    "project_rows",
    "project_simplex",
    "prune_rare_terms",
    "residuals_monotone",
    "rff_frequencies",
    "rff_transform",
    "sample_simplex_interior",
    "save_dataset",
    "scores",
    "softmax",
    "softmax_link",
    "solve_spd",
    "split_dataset",
    "stagewise",
    "synthesize",
    "top_singular_values",
]
