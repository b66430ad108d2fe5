"""LoRaWAN / NB-IoT energy, latency and coverage models with a per-message
technology selector and a scenario simulator."""

from .errors import (
    ConfigError,
    FragmentationRequired,
    MultiRatError,
    NoFeasiblePlan,
    PayloadExceeded,
    ProtocolViolation,
    RankDeficiencyError,
    SchemaError,
)
from .profile import Profile, default_profile

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "FragmentationRequired",
    "MultiRatError",
    "NoFeasiblePlan",
    "PayloadExceeded",
    "Profile",
    "ProtocolViolation",
    "RankDeficiencyError",
    "SchemaError",
    "default_profile",
]
