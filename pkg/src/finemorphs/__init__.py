"""Regression with trainable sequences of affine maps and diffeomorphic
kernel flows, optimized by adjoint gradients and L-BFGS."""

from .kernels import KernelConfig, gram_apply, kernel_eval, kernel_grad1, matern_scalar
from .sequence import (
    AffineParams,
    AffineSpec,
    DiffeoSpec,
    ModelParams,
    SequenceSpec,
    affine_cost,
    init_params,
    parse_sequence,
)
from .flow import FlowDivergenceError, flow_module, forward_pass, transport
from .objective import ObjectiveBreakdown, evaluate, train_mse
from .adjoint import backward_pass, endpoint_costate, full_gradient
from .optimizer import MinimizeReport, OptimizerConfig, ParamLayout, minimize
from .preprocess import (
    SplitSet,
    StandardizedDataset,
    Standardization,
    estimate_sigma,
    make_splits,
    select_subset,
    standardize,
)
from .trainer import TrainConfig, TrainedModel, train, warm_start
from .predictor import PredictionResult, export_pca_snapshots, predict, rmse
from .baseline import RidgeModel, fit_ridge, predict_ridge
from .persist import load_model, save_model

__version__ = "0.1.0"
