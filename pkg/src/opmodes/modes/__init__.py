from .catalog import (
    AF_RATE_HZ,
    DISTINCT_SUBSET_20,
    ModeFamily,
    ModeSpec,
    catalog,
    format_table,
    get_mode,
    om_labels,
    omp_labels,
    rollup_om,
)
from .dataset import DEFAULT_DURATIONS_S, SPLITS, LabeledSignal, ManifestEntry, build_dataset, payload_seed
from .synth import CHARSET, Payload, synthesize

__all__ = [
    "AF_RATE_HZ",
    "CHARSET",
    "DEFAULT_DURATIONS_S",
    "DISTINCT_SUBSET_20",
    "LabeledSignal",
    "ManifestEntry",
    "ModeFamily",
    "ModeSpec",
    "Payload",
    "SPLITS",
    "build_dataset",
    "catalog",
    "format_table",
    "get_mode",
    "om_labels",
    "omp_labels",
    "payload_seed",
    "rollup_om",
    "synthesize",
]
