"""Counterfactual imputation for causal panel data.

Covariate effects are removed per period by ReLU networks, the adjusted
panel is completed by a multi-output autoencoder (shared encoder, one decoder
per unit), and staggered adoption designs are handled block by block.
Difference-in-differences, vertical regression and nuclear-norm matrix
completion baselines, a simulation harness and a CLI are included.
"""

__version__ = "0.1.0"

from .errors import CodealError, DataError, NumericError
from .panel import (AttEstimate, BlockPartition, FourBlockView, PanelDataset, aggregate_att,
                    att_from_imputation, build_four_block, extract_block_partition, validate_and_sort)
from .nn import DenseNet, TrainConfig, init_dense, train
from .covariate import CovariateModel, adjust, fit_covariates, fit_covariates_dnn, fit_covariates_linear
from .factor_ae import AEConfig, FactorAE, fit_multi_output_ae, fit_single_output_ae
from .baselines import did_impute, mc_nnm_impute, vertical_regression_impute
from .estimator import (ESTIMATORS, EstimatorConfig, ImputationResult, codeal_staggered,
                        impute_four_block, run_estimator)
from .simulation import PRESETS, DgpConfig, SimulatedPanel, generate, metrics, run_experiment
from .fileio import export_counterfactual_series, load_panel, save_panel
