from .artifacts import KEY_CHARS, ArtifactStore, ExperimentRecord, StageTimer, stage_key
from .config import DEFAULTS, RunConfig, load_run_config
from .stages import (
    ABLATION_AXES,
    ar_dir,
    ar_key,
    data_key,
    data_root,
    eval_key,
    finetune_dirs,
    finetuned_stack,
    load_stack,
    plot_report,
    refiner_data_dir,
    refiner_data_key,
    refiner_dir,
    refiner_key,
    stage_ablate,
    stage_build_refiner_data,
    stage_eval,
    stage_finetune,
    stage_generate_data,
    stage_rollout,
    stage_train_ar,
    stage_train_refiner,
    stage_train_tokenizer,
    store_for,
    tokenizer_dir,
    tokenizer_key,
    validate_ablation_report,
)

__all__ = [
    "ABLATION_AXES",
    "ArtifactStore",
    "DEFAULTS",
    "ExperimentRecord",
    "KEY_CHARS",
    "RunConfig",
    "StageTimer",
    "ar_dir",
    "ar_key",
    "data_key",
    "data_root",
    "eval_key",
    "finetune_dirs",
    "finetuned_stack",
    "load_run_config",
    "load_stack",
    "plot_report",
    "refiner_data_dir",
    "refiner_data_key",
    "refiner_dir",
    "refiner_key",
    "stage_ablate",
    "stage_build_refiner_data",
    "stage_eval",
    "stage_finetune",
    "stage_generate_data",
    "stage_key",
    "stage_rollout",
    "stage_train_ar",
    "stage_train_refiner",
    "stage_train_tokenizer",
    "store_for",
    "tokenizer_dir",
    "tokenizer_key",
    "validate_ablation_report",
]
