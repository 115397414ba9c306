from ._mvitime import (
    Model,
    cosine_warmup_lr,
    crop_resize,
    map_stage,
    metrics,
    nt_xent_loss,
    parse_edf,
    parse_hypnogram,
    pca_fit,
    permute,
    stage_names,
)

__all__ = [
    "Model",
    "cosine_warmup_lr",
    "crop_resize",
    "map_stage",
    "metrics",
    "nt_xent_loss",
    "parse_edf",
    "parse_hypnogram",
    "pca_fit",
    "permute",
    "stage_names",
]
