"""Player style embeddings from tracking data."""

from ._sixmap import (
    SixmapError,
    atl_sim,
    binomial,
    branch_shapes,
    default_config,
    direction_heatmap,
    embed,
    gaussian_log_density,
    hungarian,
    location_heatmap,
    run_stage,
    stage_names,
    triplet_loss,
)

__all__ = [
    "SixmapError",
    "atl_sim",
    "binomial",
    "branch_shapes",
    "default_config",
    "direction_heatmap",
    "embed",
    "gaussian_log_density",
    "hungarian",
    "location_heatmap",
    "run_stage",
    "stage_names",
    "triplet_loss",
]
