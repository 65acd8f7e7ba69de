"""Functional latent dynamics for irregularly sampled multivariate time series.

The heavy lifting lives in the compiled extension; this package re-exports it.
Typical flow::

    import fld

    raw = fld.generate_goodwin(count=100, seed=7, sigma=0.01)
    data = fld.split_task(raw, "obs50-fc50")
    fold = fld.make_folds(data.ids(), seed=7)[0]
    norm = fld.normalize_fit(data, fold.train)
    data = fld.normalize_apply(data, norm)

    config = fld.FLDConfig(curve="linear", latent=64, channels=data.channels)
    result = fld.train(config, fld.init_params(config, seed=1), data,
                       fold.train, fold.valid, fld.TrainConfig(lr=1e-3))
    print(fld.evaluate(result.best_params, config, data, fold.test).mse)
"""

from ._core import (
    Checkpoint,
    Dataset,
    EpochStats,
    EvalResult,
    FLDConfig,
    FoldSplit,
    Instance,
    InstanceLoss,
    ModelParams,
    Normalization,
    TrainConfig,
    TrainResult,
    __version__,
    evaluate,
    generate_goodwin,
    init_params,
    load_checkpoint,
    load_dataset,
    make_folds,
    normalize_apply,
    normalize_fit,
    predict,
    save_checkpoint,
    save_dataset,
    split_task,
    train,
)

__all__ = [
    "Checkpoint",
    "Dataset",
    "EpochStats",
    "EvalResult",
    "FLDConfig",
    "FoldSplit",
    "Instance",
    "InstanceLoss",
    "ModelParams",
    "Normalization",
    "TrainConfig",
    "TrainResult",
    "__version__",
    "evaluate",
    "generate_goodwin",
    "init_params",
    "load_checkpoint",
    "load_dataset",
    "make_folds",
    "normalize_apply",
    "normalize_fit",
    "predict",
    "save_checkpoint",
    "save_dataset",
    "split_task",
    "train",
]
