"""Coverage model: reachability from path loss, RSRP derivation and the
environment classes that drive the CE-level mix.

Path loss is an input. :func:`log_distance_path_loss` exists only as a
convenience for writing scenarios.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .lorawan import LoRaRadioConfig
from .nbiot import CeLevel

LORA_SF12_BUDGET_DB = 156.0
NBIOT_MCL_DB = 164.0
# Reference such that the NB-IoT MCL maps to an RSRP of -141 dBm.
RSRP_REFERENCE_DBM = 23.0

# Required demodulator SNR (dB) per spreading factor, 125 kHz (SX127x family).
# The budget at a lower SF shrinks by its distance to the SF12 floor.
DEMOD_FLOOR_DB = {7: -7.5, 8: -10.0, 9: -12.5, 10: -15.0, 11: -17.5, 12: -20.0}


def lora_budget(spreading_factor: int) -> float:
    """Maximum tolerable path loss (dB) at a spreading factor."""
    try:
        floor = DEMOD_FLOOR_DB[spreading_factor]
    except KeyError:
        raise ConfigError(f"spreading_factor must be in 7..12, got {spreading_factor}") from None
    return LORA_SF12_BUDGET_DB - (floor - DEMOD_FLOOR_DB[12])


@dataclass(frozen=True)
class LinkState:
    """Channel snapshot of one node.

    ``path_loss_db`` is the cellular path loss; RSRP follows it one-for-one.
    ``lora_path_loss_db`` defaults to the same value (co-located gateway).
    ``lora_snr_margin_db`` is the margin over the SF12 demodulation floor at
    maximum power, i.e. what ADR starts from; it defaults to the slack in the
    SF12 budget.
    """

    path_loss_db: float
    lora_path_loss_db: float | None = None
    lora_snr_margin_db: float | None = None
    reference_dbm: float = RSRP_REFERENCE_DBM

    def __post_init__(self):
        if not (math.isfinite(self.path_loss_db) and self.path_loss_db >= 0):
            raise ConfigError(f"path_loss_db must be finite and >= 0, got {self.path_loss_db}")
        if self.lora_path_loss_db is None:
            object.__setattr__(self, "lora_path_loss_db", float(self.path_loss_db))
        elif not (math.isfinite(self.lora_path_loss_db) and self.lora_path_loss_db >= 0):
            raise ConfigError("lora_path_loss_db must be finite and >= 0")
        if self.lora_snr_margin_db is None:
            object.__setattr__(self, "lora_snr_margin_db", LORA_SF12_BUDGET_DB - self.lora_path_loss_db)

    @property
    def rsrp_dbm(self) -> float:
        return self.reference_dbm - self.path_loss_db

    @classmethod
    def from_rsrp(cls, rsrp_dbm: float, *, reference_dbm: float = RSRP_REFERENCE_DBM, **kwargs) -> "LinkState":
        return cls(path_loss_db=reference_dbm - rsrp_dbm, reference_dbm=reference_dbm, **kwargs)


def lora_reachable(link: LinkState, config: LoRaRadioConfig | None = None) -> bool:
    sf = 12 if config is None else config.spreading_factor
    return link.lora_path_loss_db <= lora_budget(sf)


def nbiot_reachable(link: LinkState) -> bool:
    return link.path_loss_db <= NBIOT_MCL_DB


def multirat_reachable(link: LinkState, config: LoRaRadioConfig | None = None) -> bool:
    return lora_reachable(link, config) or nbiot_reachable(link)


OUTDOOR = (0.93, 0.035, 0.035)
# No field distribution exists for ordinary indoor placement; this sits
# between the outdoor and underground mixes.
INDOOR = (0.75, 0.15, 0.10)
SUBTERRANEAN = (0.54, 0.27, 0.19)

_NAMED = {"outdoor": OUTDOOR, "indoor": INDOOR, "subterranean": SUBTERRANEAN}


@dataclass(frozen=True)
class EnvironmentClass:
    """Placement class with its probability of each CE level."""

    name: str = "outdoor"
    probabilities: tuple[float, float, float] | None = field(default=None)

    def __post_init__(self):
        probs = self.probabilities
        if probs is None:
            if self.name not in _NAMED:
                raise ConfigError(f"unknown environment {self.name!r}; give probabilities explicitly")
            probs = _NAMED[self.name]
        probs = tuple(float(p) for p in probs)
        if len(probs) != 3 or any(not (0 <= p <= 1) for p in probs):
            raise ConfigError("environment needs three probabilities in [0, 1]")
        if not math.isclose(math.fsum(probs), 1.0, abs_tol=1e-9):
            raise ConfigError(f"environment probabilities must sum to 1, got {math.fsum(probs)}")
        object.__setattr__(self, "probabilities", probs)

    @classmethod
    def named(cls, name: str) -> "EnvironmentClass":
        return cls(name)


def sample_environment(env: EnvironmentClass, rng: np.random.Generator, size=None):
    """Draw CE levels from the class's mix. A :class:`CeLevel` when ``size`` is None."""
    draws = rng.choice(3, size=size, p=np.asarray(env.probabilities))
    if size is None:
        return CeLevel(int(draws))
    return draws


def log_distance_path_loss(distance_m: float, *, pl0_db: float = 40.0, d0_m: float = 1.0, exponent: float = 3.0) -> float:
    """Textbook log-distance path loss, for scenario authoring only."""
    if distance_m <= 0:
        raise ValueError("distance_m must be > 0")
    return pl0_db + 10.0 * exponent * math.log10(max(distance_m, d0_m) / d0_m)
