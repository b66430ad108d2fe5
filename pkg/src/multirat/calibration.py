"""Fit energy-profile constants to measured per-message energies.

NB-IoT state powers are found by non-negative least squares over the
measured samples. The LoRa profile has no per-message measurements; it is
scaled as a whole so that the SF12 vs CE2 energy-per-byte crossover lands at
a target payload.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import scipy.linalg
import scipy.optimize

from .errors import ConfigError, RankDeficiencyError
from .lorawan import payload_energy
from .nbiot import (
    NB_STATES,
    CeLevel,
    NbIotConfig,
    NbIotEnergyProfile,
    StatePower,
    message_energy,
    select_ce_level,
    transmit_duration,
)
from .profile import Profile

MIN_SAMPLES_PER_LEVEL = 3
DEFAULT_FREE_STATES = ("search_join", "transmit")


@dataclass(frozen=True)
class CalibrationSample:
    rsrp_dbm: float
    payload_bytes: int
    measured_energy_j: float
    ce_level: CeLevel | None = None

    def __post_init__(self):
        if not (math.isfinite(self.measured_energy_j) and self.measured_energy_j > 0):
            raise ConfigError(f"measured_energy_j must be > 0, got {self.measured_energy_j}")
        if self.payload_bytes < 0:
            raise ConfigError("payload_bytes must be >= 0")
        if self.ce_level is not None:
            object.__setattr__(self, "ce_level", CeLevel.parse(self.ce_level))

    def level(self, config: NbIotConfig) -> CeLevel:
        return self.ce_level if self.ce_level is not None else select_ce_level(self.rsrp_dbm, config)


def read_samples(path) -> list[CalibrationSample]:
    """Read a samples CSV (rsrp_dbm, payload_bytes, measured_energy_j[, ce_level])."""
    out = []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        required = {"rsrp_dbm", "payload_bytes", "measured_energy_j"}
        missing = required - set(reader.fieldnames or ())
        if missing:
            raise ConfigError(f"samples file lacks columns {sorted(missing)}")
        for row in reader:
            ce = row.get("ce_level")
            out.append(
                CalibrationSample(
                    float(row["rsrp_dbm"]),
                    int(row["payload_bytes"]),
                    float(row["measured_energy_j"]),
                    CeLevel.parse(int(ce)) if ce not in (None, "") else None,
                )
            )
    return out


def _state_seconds(sample, profile, config) -> dict[str, float]:
    """Seconds each state is active for one measured (cold-start) message."""
    ce = sample.level(config)
    return {
        "search_join": profile.search_join.duration_s,
        "transmit": transmit_duration(ce, sample.payload_bytes, profile, config),
        "cdrx": profile.cdrx.duration_s,
        "edrx_ptw": profile.edrx_ptw.duration_s,
        "psm": 0.0,
    }


def design_matrix(samples, profile, config, free_states=DEFAULT_FREE_STATES):
    """(A, b) with measured = A @ powers[free] + fixed, b = measured - fixed."""
    rows, b = [], []
    for s in samples:
        secs = _state_seconds(s, profile, config)
        fixed = math.fsum(profile.state(k).power_w * secs[k] for k in NB_STATES if k not in free_states)
        rows.append([secs[k] for k in free_states])
        b.append(s.measured_energy_j - fixed)
    return np.asarray(rows, dtype=float), np.asarray(b, dtype=float)


def unresolvable_columns(a: np.ndarray, names, rtol: float = 1e-9) -> list[str]:
    """Names of constants that the samples cannot pin down.

    A constant is unresolvable when it takes part in a null-space direction of
    the design matrix: its value can be traded against others at zero cost.
    """
    names = list(names)
    if a.shape[0] == 0:
        return names
    # Column scaling keeps the rank test independent of units.
    norms = np.linalg.norm(a, axis=0)
    scaled = a / np.where(norms > 0, norms, 1.0)
    null = scipy.linalg.null_space(scaled, rcond=rtol)
    involved = np.any(np.abs(null) > 1e-6, axis=1) if null.size else np.zeros(a.shape[1], bool)
    return [n for n, bad in zip(names, involved | (norms == 0)) if bad]


@dataclass(frozen=True)
class LevelResidual:
    count: int
    mean_measured_j: float
    mean_predicted_j: float
    rms_residual_j: float
    measured_min_j: float
    measured_max_j: float


@dataclass(frozen=True)
class NbIotFit:
    profile: NbIotEnergyProfile
    powers: dict
    residuals: dict
    sum_squared_residual: float


def fit_nbiot(samples, profile: NbIotEnergyProfile, config: NbIotConfig, free_states=DEFAULT_FREE_STATES) -> NbIotFit:
    """Least-squares, non-negative fit of the ``free_states`` powers.

    Every sample is treated as a cold-start message: registration, send and
    the connected/eDRX tail. Durations and the non-free powers stay fixed.
    """
    free_states = tuple(free_states)
    unknown = set(free_states) - set(NB_STATES)
    if unknown:
        raise ConfigError(f"unknown states {sorted(unknown)}")
    samples = list(samples)
    by_level: dict[CeLevel, list] = {}
    for s in samples:
        by_level.setdefault(s.level(config), []).append(s)
    short = sorted(lv.name for lv, group in by_level.items() if len(group) < MIN_SAMPLES_PER_LEVEL)
    if not samples or short:
        raise ConfigError(f"need at least {MIN_SAMPLES_PER_LEVEL} samples per CE level, short: {short}")

    a, b = design_matrix(samples, profile, config, free_states)
    bad = unresolvable_columns(a, free_states)
    if bad:
        raise RankDeficiencyError(bad)
    x, _ = scipy.optimize.nnls(a, b)

    states = {k: profile.state(k) for k in NB_STATES}
    for k, p in zip(free_states, x):
        states[k] = StatePower(float(p), states[k].duration_s)
    fitted = NbIotEnergyProfile(*(states[k] for k in NB_STATES), uplink_rate_bps=profile.uplink_rate_bps)

    residuals = {}
    sse = 0.0
    for lv, group in sorted(by_level.items()):
        pred = np.array([_cold_energy(s, fitted, config) for s in group])
        meas = np.array([s.measured_energy_j for s in group])
        sse += float(np.sum((pred - meas) ** 2))
        residuals[lv] = LevelResidual(
            count=len(group),
            mean_measured_j=float(meas.mean()),
            mean_predicted_j=float(pred.mean()),
            rms_residual_j=float(np.sqrt(np.mean((pred - meas) ** 2))),
            measured_min_j=float(meas.min()),
            measured_max_j=float(meas.max()),
        )
    return NbIotFit(fitted, dict(zip(free_states, map(float, x))), residuals, sse)


def _cold_energy(sample, profile, config) -> float:
    return message_energy(sample.level(config), sample.payload_bytes, profile, config, include_join=True)


def crossover_payload(lora_energy_fn, nb_energy_fn, payloads) -> int | None:
    """Smallest payload from which NB-IoT is strictly cheaper per byte for good.

    Returns None when NB-IoT is not cheaper at the largest payload.
    """
    crossover = None
    for n in sorted(payloads, reverse=True):
        if nb_energy_fn(n) < lora_energy_fn(n):
            crossover = n
        else:
            break
    return crossover


def lora_scale_for_crossover(
    profile: Profile,
    target_bytes: int = 240,
    *,
    max_bytes: int = 1600,
    lora_sf: int = 12,
    nb_level: CeLevel = CeLevel.CE2,
) -> float:
    """Smallest LoRa active-power scale putting the crossover at or below ``target_bytes``.

    LoRa energy is linear in the scale, so NB-IoT wins at payload ``n`` iff the
    scale exceeds ``nb(n) / lora_1(n)``; the answer is the maximum of that ratio
    over ``[target_bytes, max_bytes]``, nudged up to make the inequality strict.
    """
    cfg = profile.lora_radio.with_sf(lora_sf)
    base = profile.lora_energy
    ratios = [
        message_energy(nb_level, n, profile.nbiot_energy, profile.nbiot_config, include_join=False)
        / payload_energy(cfg, base, n)
        for n in range(target_bytes, max_bytes + 1)
    ]
    return max(ratios) * (1 + 1e-9)


def scale_lora_active(profile: Profile, factor: float) -> Profile:
    """Scale LoRa transmit/process/receive powers; sleep draw is left alone."""
    e = profile.lora_energy
    return replace(
        profile,
        lora_energy=replace(
            e,
            p_transmit_w=e.p_transmit_w * factor,
            p_process_w=e.p_process_w * factor,
            p_receive_w=e.p_receive_w * factor,
        ),
    )


@dataclass(frozen=True)
class CalibrationResult:
    profile: Profile
    nbiot: NbIotFit
    lora_scale: float
    crossover_bytes: int | None


def calibrate(
    prior: Profile,
    samples,
    *,
    free_states=DEFAULT_FREE_STATES,
    crossover_target_bytes: int = 240,
) -> CalibrationResult:
    """Fit NB-IoT powers to ``samples``, then scale LoRa powers to the crossover target."""
    samples = list(samples)
    fit = fit_nbiot(samples, prior.nbiot_energy, prior.nbiot_config, free_states)
    nb_fitted = replace(prior, nbiot_energy=fit.profile)
    scale = lora_scale_for_crossover(nb_fitted, crossover_target_bytes)
    out = scale_lora_active(nb_fitted, scale)
    out = replace(
        out,
        description=(
            f"Calibrated. NB-IoT powers of {', '.join(fit.powers)} fitted to {len(samples)} measured messages; "
            f"LoRa active powers scaled by {scale:.6g} for a {crossover_target_bytes} B SF12/CE2 crossover target."
        ),
    )
    cfg12 = out.lora_radio.with_sf(12)
    lora_e = out.lora_energy
    crossover = crossover_payload(
        lambda n: payload_energy(cfg12, lora_e, n) / n,
        lambda n: message_energy(CeLevel.CE2, n, out.nbiot_energy, out.nbiot_config, include_join=False) / n,
        range(1, 1601),
    )
    return CalibrationResult(out, fit, scale, crossover)
