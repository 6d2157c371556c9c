from .types import (
    Boundary,
    Channel,
    ChannelUnion,
    DatasetSpec,
    FieldSequence,
    NormStats,
    SPATIAL_FACTOR,
    TEMPORAL_FACTOR,
)
from .generators import (
    GENERATORS,
    generate_advect_diffuse,
    generate_gray_scott,
    generate_heat,
    generate_shear_advect,
    heat_analytic_frame,
)
from .container import (
    DataManifest,
    convert_well_native,
    crop_compatible,
    load_manifest,
    load_well_trajectory,
    read_container,
    save_manifest,
    save_trajectory,
    write_container,
)
from .normalize import apply_norm, denormalize_array, fit_norm, invert_norm, normalize_array
from .balance import SamplingSchedule, balance_datasets

__all__ = [
    "Boundary",
    "Channel",
    "ChannelUnion",
    "DataManifest",
    "DatasetSpec",
    "FieldSequence",
    "GENERATORS",
    "NormStats",
    "SPATIAL_FACTOR",
    "SamplingSchedule",
    "TEMPORAL_FACTOR",
    "apply_norm",
    "balance_datasets",
    "convert_well_native",
    "crop_compatible",
    "denormalize_array",
    "fit_norm",
    "generate_advect_diffuse",
    "generate_gray_scott",
    "generate_heat",
    "generate_shear_advect",
    "heat_analytic_frame",
    "invert_norm",
    "load_manifest",
    "load_well_trajectory",
    "normalize_array",
    "read_container",
    "save_manifest",
    "save_trajectory",
    "write_container",
]
