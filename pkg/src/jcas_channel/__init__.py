"""Joint communication and sensing channel generation, clustering and statistics."""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    ChannelPair,
    Cluster,
    ClusterKind,
    LinkChannel,
    LinkTag,
    Mpc,
    ScenarioConfig,
    SdMode,
)
from .model import generate_channel_pair, sharing_degree  # noqa: E402
from .clustering import ClusteringConfig, classify_clusters, run_kpm_jca  # noqa: E402

__all__ = [
    "__version__",
    "ChannelPair",
    "Cluster",
    "ClusterKind",
    "LinkChannel",
    "LinkTag",
    "Mpc",
    "ScenarioConfig",
    "SdMode",
    "generate_channel_pair",
    "sharing_degree",
    "ClusteringConfig",
    "classify_clusters",
    "run_kpm_jca",
]
