from .io import (
    ColumnMap,
    Sample,
    Scene,
    distance_to_runway,
    filter_airspace,
    make_sample,
    make_tartan_splits,
    read_canonical_dataset,
    read_scene_file,
    scene_samples,
    stack_samples,
    window_samples,
    window_starts,
    write_canonical_dataset,
)
from .settings import SETTINGS, ExperimentSetting, get_setting
