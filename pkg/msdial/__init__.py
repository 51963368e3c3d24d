"""Multi-source domain adaptation with domain alignment layers."""
from msdial import settings
from msdial._data import (
    DomainBatch,
    DomainDataset,
    compose_batch,
    get_loader,
    iter_batches,
    split_domains,
    subsample,
    subsample_splits,
)
from msdial._data.features import load as load_feature_table
from msdial._data.features import write as write_feature_table
from msdial._data.idx import load as load_idx
from msdial._data.synthetic import (
    SyntheticShiftSpec,
    bayes_accuracy,
    synth_affine_domains,
    write_synthetic,
)
from msdial._experiment import (
    LAMBDA_GRID,
    Experiment,
    ResultRecord,
    get_logger,
    lambda_sweep,
    leave_one_domain_out,
    load_domains,
    run_experiment,
)
from msdial._gradcheck import GradCheckReport, grad_check
from msdial._graph import (
    ArchitectureSpec,
    LayerNode,
    ModelGraph,
    build_digit_model,
    build_feature_mlp,
    build_model,
    insert_ms_dial,
)
from msdial._layers import (
    BatchNormState,
    DialLayer,
    DomainSegments,
    bn_forward,
    dial_forward_eval,
    dial_forward_train,
    dropout_forward,
)
from msdial._reports import emit_results, export_features, pca_project
from msdial._tensor import (
    Tape,
    Tensor,
    backward,
    conv2d,
    elementwise,
    log_softmax,
    matmul,
    no_grad,
)
from msdial._training import Trainer, TrainingHistory, evaluate
from msdial.config import ExperimentConfig, load_config
from msdial.exceptions import MsDialError
from msdial.json import dumps, loads
from msdial.losses import LossConfig, source_ce, target_entropy, total_loss
from msdial.optimizer import Adadelta, AdadeltaState, step

__all__ = (
    "Adadelta",
    "AdadeltaState",
    "ArchitectureSpec",
    "BatchNormState",
    "DialLayer",
    "DomainBatch",
    "DomainDataset",
    "DomainSegments",
    "Experiment",
    "ExperimentConfig",
    "GradCheckReport",
    "LAMBDA_GRID",
    "LayerNode",
    "LossConfig",
    "ModelGraph",
    "MsDialError",
    "ResultRecord",
    "SyntheticShiftSpec",
    "Tape",
    "Tensor",
    "Trainer",
    "TrainingHistory",
    "backward",
    "bayes_accuracy",
    "bn_forward",
    "build_digit_model",
    "build_feature_mlp",
    "build_model",
    "compose_batch",
    "conv2d",
    "dial_forward_eval",
    "dial_forward_train",
    "dropout_forward",
    "dumps",
    "elementwise",
    "emit_results",
    "evaluate",
    "export_features",
    "get_loader",
    "get_logger",
    "grad_check",
    "insert_ms_dial",
    "iter_batches",
    "lambda_sweep",
    "leave_one_domain_out",
    "load_config",
    "load_domains",
    "load_feature_table",
    "load_idx",
    "loads",
    "log_softmax",
    "matmul",
    "no_grad",
    "pca_project",
    "run_experiment",
    "settings",
    "source_ce",
    "split_domains",
    "step",
    "subsample",
    "subsample_splits",
    "synth_affine_domains",
    "target_entropy",
    "total_loss",
    "write_feature_table",
    "write_synthetic",
)
