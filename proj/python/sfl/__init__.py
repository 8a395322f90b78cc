"""Python access to the sfl library: datasets, bundles, clustering and the CLI."""

from ._sfl import (
    ArtifactError,
    BadMagicError,
    Bundle,
    ChecksumError,
    ConfigError,
    Error,
    InvariantError,
    MismatchError,
    SyntheticSpec,
    VersionError,
    fuse,
    generate_synthetic,
    kmeans,
    lda_projection,
    load_bundle,
    load_dataset,
    run_cli,
    silhouette,
    stage_graph_name,
    stage_graph_steps,
)

__all__ = [
    "ArtifactError",
    "BadMagicError",
    "Bundle",
    "ChecksumError",
    "ConfigError",
    "Error",
    "InvariantError",
    "MismatchError",
    "SyntheticSpec",
    "VersionError",
    "fuse",
    "generate_synthetic",
    "kmeans",
    "lda_projection",
    "load_bundle",
    "load_dataset",
    "run_cli",
    "silhouette",
    "stage_graph_name",
    "stage_graph_steps",
]
