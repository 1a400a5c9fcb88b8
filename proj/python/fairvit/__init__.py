"""Fair hybrid CNN/ViT score regression with adversarial debiasing.

Thin wrapper over the compiled `_fairvit` core. The main entry points:

    generate(...)        synthetic biased dataset
    split(ds, ...)       stratified train/val/test split
    train(...)           train a variant (cnn_only, vit_only, hybrid, fair_hybrid)
    load(path)           reload a checkpoint
    pearson, mae, rmse, performance_gap, bias_reduction
"""

from _fairvit import (  # noqa: F401
    ConfigError,
    Dataset,
    ShapeError,
    TrainedModel,
    TrainingAbort,
    ValidationError,
    bias_reduction,
    export_dataset,
    generate,
    grl_gradient_check,
    load,
    load_manifest,
    mae,
    pearson,
    performance_gap,
    rmse,
    split,
    train,
    __version__,
)
