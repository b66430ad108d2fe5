"""Energy-per-byte curves of both technologies over a payload range."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

from .calibration import crossover_payload
from .lorawan import payload_energy
from .nbiot import CeLevel, message_energy
from .profile import Profile

LORA_SFS = (7, 8, 9, 10, 11, 12)


@dataclass(frozen=True)
class SweepTable:
    columns: tuple[str, ...]
    rows: tuple[tuple, ...]
    crossover_bytes: int | None

    def column(self, name: str) -> list[float]:
        i = self.columns.index(name)
        return [r[i] for r in self.rows]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for r in self.rows:
            w.writerow([r[0], *(repr(float(v)) for v in r[1:])])
        return buf.getvalue()


def lora_energy_per_byte(profile: Profile, sf: int, payload: int) -> float:
    config = profile.lora_radio.with_sf(sf)
    return payload_energy(config, profile.lora_energy, payload) / payload


def nbiot_energy_per_byte(profile: Profile, ce: CeLevel, payload: int) -> float:
    """Steady-state message from PSM: access, send and tail, no registration."""
    return message_energy(ce, payload, profile.nbiot_energy, profile.nbiot_config, include_join=False) / payload


def sweep_energy_per_byte(profile: Profile, start: int = 1, stop: int = 1600, step: int = 1) -> SweepTable:
    """One row per payload with J/B for LoRa SF7-SF12 and NB-IoT CE0-CE2.

    LoRa payloads beyond the frame cap are fragmented, each fragment carrying
    its own MAC header. The crossover is reported between SF12 and CE2.
    """
    if not 1 <= start <= stop:
        raise ValueError("need 1 <= start <= stop")
    if step < 1:
        raise ValueError("step must be >= 1")
    if stop > profile.nbiot_config.max_payload_bytes:
        raise ValueError(f"stop must be <= {profile.nbiot_config.max_payload_bytes}")
    payloads = range(start, stop + 1, step)
    columns = ("payload_bytes", *(f"lora_sf{sf}" for sf in LORA_SFS), *(f"nbiot_{ce.name.lower()}" for ce in CeLevel))
    rows = tuple(
        (
            n,
            *(lora_energy_per_byte(profile, sf, n) for sf in LORA_SFS),
            *(nbiot_energy_per_byte(profile, ce, n) for ce in CeLevel),
        )
        for n in payloads
    )
    table = {r[0]: r for r in rows}
    i_lora, i_nb = columns.index("lora_sf12"), columns.index("nbiot_ce2")
    crossover = crossover_payload(lambda n: table[n][i_lora], lambda n: table[n][i_nb], table)
    return SweepTable(columns, rows, crossover)
