"""Versioned JSON profile holding every model constant.

A profile bundles the LoRa radio defaults and energy profile, the NB-IoT
configuration, its per-state powers and the uplink latency model. Files are
validated against a strict schema (unknown keys are rejected).
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path

import jsonschema

from .errors import ConfigError, SchemaError
from .lorawan import DutyCycleLedger, LoRaEnergyProfile, LoRaRadioConfig
from .nbiot import (
    NB_STATES,
    CeLevel,
    LatencyModel,
    LatencyParams,
    NbIotConfig,
    NbIotEnergyProfile,
    StatePower,
    default_latency_model,
)

SCHEMA_VERSION = 1
PROFILE_ENV_VAR = "MULTIRAT_PROFILE"

_NUM = {"type": "number"}
_NONNEG = {"type": "number", "minimum": 0}
_OPT_NONNEG = {"type": ["number", "null"], "minimum": 0}


def _obj(props: dict, required=None) -> dict:
    return {
        "type": "object",
        "properties": props,
        "required": list(props) if required is None else required,
        "additionalProperties": False,
    }


_STATE = _obj({"power_w": _NONNEG, "duration_s": _NONNEG})
_LATENCY = _obj(
    {
        "median_s": {"type": "number", "exclusiveMinimum": 0},
        "sigma": _NONNEG,
        "tail_quantile": {"type": "number", "minimum": 0.5, "exclusiveMaximum": 1},
        "tail_sigma": _OPT_NONNEG,
        "cap_s": {"type": "number", "exclusiveMinimum": 0},
    },
    required=["median_s", "sigma"],
)

PROFILE_SCHEMA = _obj(
    {
        "schema_version": {"const": SCHEMA_VERSION},
        "description": {"type": "string"},
        "lora": _obj(
            {
                "radio": _obj(
                    {
                        "spreading_factor": {"type": "integer", "minimum": 7, "maximum": 12},
                        "bandwidth_hz": {"enum": [125000, 250000, 500000]},
                        "coding_rate": {"type": "integer", "minimum": 5, "maximum": 8},
                        "preamble_symbols": {"type": "integer", "minimum": 1},
                        "explicit_header": {"type": "boolean"},
                        "crc_enabled": {"type": "boolean"},
                        "low_datarate_optimize": {"type": ["boolean", "null"]},
                        "tx_power_dbm": _NUM,
                    },
                    required=[],
                ),
                "energy": _obj(
                    {
                        "p_transmit_w": {"type": "number", "exclusiveMinimum": 0},
                        "p_process_w": _NONNEG,
                        "p_receive_w": {"type": "number", "exclusiveMinimum": 0},
                        "t_process1_s": _NONNEG,
                        "t_process2_s": _NONNEG,
                        "t_rx1_s": _OPT_NONNEG,
                        "t_rx2_s": _OPT_NONNEG,
                        "p_sleep_w": _NONNEG,
                        "rx_window_symbols": {"type": "integer", "minimum": 0},
                    },
                    required=["p_transmit_w", "p_process_w", "p_receive_w"],
                ),
                "duty_fraction": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
            },
            required=["energy"],
        ),
        "nbiot": _obj(
            {
                "config": _obj(
                    {
                        "rsrp_threshold_01_dbm": _NUM,
                        "rsrp_threshold_12_dbm": _NUM,
                        "tx_power_dbm": _NUM,
                        "max_payload_bytes": {"type": "integer", "minimum": 1, "maximum": 1600},
                        "t_cdrx_s": _NONNEG,
                        "edrx_cycle_s": {"type": "number", "minimum": 0, "maximum": 11160},
                        "ptw_s": _NONNEG,
                        "edrx_rounds": {"type": "integer", "minimum": 0},
                        "psm_tau_s": _NONNEG,
                        "include_join_energy": {"type": "boolean"},
                        "repetitions": {
                            "type": "array",
                            "items": {"type": "integer", "minimum": 1},
                            "minItems": 3,
                            "maxItems": 3,
                        },
                        "wake_latency_s": _NONNEG,
                    },
                    required=[],
                ),
                "energy": _obj(
                    {**{s: _STATE for s in NB_STATES}, "uplink_rate_bps": {"type": "number", "exclusiveMinimum": 0}},
                    required=list(NB_STATES),
                ),
                "latency": _obj({lv.name: _LATENCY for lv in CeLevel}, required=[]),
            },
            required=["energy"],
        ),
    },
    required=["schema_version", "lora", "nbiot"],
)


def validate(document: dict, schema: dict = PROFILE_SCHEMA) -> None:
    """Raise :class:`SchemaError` with a JSON path for the first violation."""
    validator = jsonschema.Draft202012Validator(schema)
    errors = sorted(validator.iter_errors(document), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        path = "$" + "".join(f"[{p}]" if isinstance(p, int) else f".{p}" for p in err.absolute_path)
        raise SchemaError(err.message, path)


@dataclass(frozen=True)
class Profile:
    lora_radio: LoRaRadioConfig
    lora_energy: LoRaEnergyProfile
    nbiot_config: NbIotConfig
    nbiot_energy: NbIotEnergyProfile
    latency: LatencyModel = field(default_factory=default_latency_model)
    duty_fraction: float = 0.01
    description: str = ""

    def ledger(self, origin_s: float = 0.0) -> DutyCycleLedger:
        return DutyCycleLedger(self.duty_fraction, origin_s=origin_s, next_free_s=origin_s)

    def scaled(self, factor: float) -> "Profile":
        """Both technologies' powers multiplied by ``factor``."""
        return replace(self, lora_energy=self.lora_energy.scaled(factor), nbiot_energy=self.nbiot_energy.scaled(factor))

    def to_dict(self) -> dict:
        doc = {"schema_version": SCHEMA_VERSION}
        if self.description:
            doc["description"] = self.description
        doc["lora"] = {
            "radio": asdict(self.lora_radio),
            "energy": asdict(self.lora_energy),
            "duty_fraction": self.duty_fraction,
        }
        cfg = asdict(self.nbiot_config)
        cfg["repetitions"] = list(cfg["repetitions"])
        energy = {s: asdict(self.nbiot_energy.state(s)) for s in NB_STATES}
        energy["uplink_rate_bps"] = self.nbiot_energy.uplink_rate_bps
        latency = {}
        for lv in CeLevel:
            p = asdict(self.latency[lv])
            if p["cap_s"] == float("inf"):
                del p["cap_s"]
            latency[lv.name] = p
        doc["nbiot"] = {"config": cfg, "energy": energy, "latency": latency}
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "Profile":
        validate(doc)
        lora, nb = doc["lora"], doc["nbiot"]
        cfg = dict(nb.get("config", {}))
        if "repetitions" in cfg:
            cfg["repetitions"] = tuple(cfg["repetitions"])
        energy = nb["energy"]
        latency = default_latency_model().levels.copy()
        try:
            for name, params in nb.get("latency", {}).items():
                latency[CeLevel[name]] = LatencyParams(**params)
            return cls(
                lora_radio=LoRaRadioConfig(**lora.get("radio", {})),
                lora_energy=LoRaEnergyProfile(**lora["energy"]),
                nbiot_config=NbIotConfig(**cfg),
                nbiot_energy=NbIotEnergyProfile(
                    *(StatePower(**energy[s]) for s in NB_STATES),
                    **({"uplink_rate_bps": energy["uplink_rate_bps"]} if "uplink_rate_bps" in energy else {}),
                ),
                latency=LatencyModel(latency),
                duty_fraction=lora.get("duty_fraction", 0.01),
                description=doc.get("description", ""),
            )
        except ConfigError as exc:
            raise SchemaError(str(exc)) from exc


def loads(text: str) -> Profile:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON: {exc}") from exc
    return Profile.from_dict(doc)


def load(path) -> Profile:
    return loads(Path(path).read_text(encoding="utf-8"))


def dumps(profile: Profile) -> str:
    return json.dumps(profile.to_dict(), indent=2, sort_keys=False) + "\n"


def dump(profile: Profile, path) -> None:
    Path(path).write_text(dumps(profile), encoding="utf-8")


def data_path(name: str) -> Path:
    return Path(str(resources.files("multirat") / "data" / name))


def default_profile_path() -> Path:
    override = os.environ.get(PROFILE_ENV_VAR)
    return Path(override) if override else data_path("default_profile.json")


def default_profile() -> Profile:
    """The calibrated default profile, or the file named by ``MULTIRAT_PROFILE``."""
    return load(default_profile_path())


def prior_profile() -> Profile:
    """Uncalibrated priors: datasheet LoRa powers, placeholder NB-IoT powers."""
    return load(data_path("prior_profile.json"))


__all__ = [
    "PROFILE_ENV_VAR",
    "PROFILE_SCHEMA",
    "Profile",
    "SCHEMA_VERSION",
    "data_path",
    "default_profile",
    "default_profile_path",
    "dump",
    "dumps",
    "load",
    "loads",
    "prior_profile",
    "validate",
]
