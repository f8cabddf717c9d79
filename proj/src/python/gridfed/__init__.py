"""Python access to the gridfed simulator and training harness."""

from ._gridfed import (
    BuildingDataset,
    ConfigError,
    DatasetCollection,
    DivergenceError,
    DomainError,
    ParseError,
    SolarMode,
    dataset_text,
    fedavg_aggregate,
    format_config,
    generate_collection,
    make_validation_collection,
    no_battery_baseline,
    oracle_rollout,
    penalization,
    read_dataset,
    step,
    summarize,
    train,
    write_dataset,
)

__all__ = [
    "BuildingDataset",
    "ConfigError",
    "DatasetCollection",
    "DivergenceError",
    "DomainError",
    "ParseError",
    "SolarMode",
    "dataset_text",
    "fedavg_aggregate",
    "format_config",
    "generate_collection",
    "make_validation_collection",
    "no_battery_baseline",
    "oracle_rollout",
    "penalization",
    "read_dataset",
    "step",
    "summarize",
    "train",
    "write_dataset",
]
