"""NB-IoT modem model.

Coverage-enhancement (CE) level selection from RSRP, the per-message energy
of the join / send / connected-DRX / eDRX / PSM sequence, energy per byte,
uplink latency sampling, downlink reachability and the modem state machine.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from statistics import NormalDist

import numpy as np

from .errors import ConfigError, PayloadExceeded, ProtocolViolation

MESSAGE_OVERHEAD_BYTES = 18
MAX_PAYLOAD_BYTES = 1600
UPLINK_RATE_CAP_BPS = 180_000
DOWNLINK_RATE_CAP_BPS = 200_000
MAX_EDRX_CYCLE_S = 186 * 60


class CeLevel(IntEnum):
    CE0 = 0
    CE1 = 1
    CE2 = 2

    @classmethod
    def parse(cls, value) -> "CeLevel":
        if isinstance(value, CeLevel):
            return value
        if isinstance(value, str):
            key = value.strip().upper()
            if not key.startswith("CE"):
                key = "CE" + key
            try:
                return cls[key]
            except KeyError:
                pass
        elif isinstance(value, (int, np.integer)) and 0 <= int(value) <= 2:
            return cls(int(value))
        raise ConfigError(f"not a CE level: {value!r}")


@dataclass(frozen=True)
class NbIotConfig:
    """Network-granted parameters of the NB-IoT attachment.

    ``repetitions`` gives the transmit-time multiplier per CE level.
    The eDRX phase lasts ``edrx_rounds`` cycles before the modem enters PSM.
    ``wake_latency_s`` is added to the uplink latency when the modem must
    leave eDRX/PSM before sending.
    """

    rsrp_threshold_01_dbm: float = -119.0
    rsrp_threshold_12_dbm: float = -125.0
    tx_power_dbm: float = 23.0
    max_payload_bytes: int = MAX_PAYLOAD_BYTES
    t_cdrx_s: float = 20.0
    edrx_cycle_s: float = 81.92
    ptw_s: float = 2.56
    edrx_rounds: int = 2
    psm_tau_s: float = 86_400.0
    include_join_energy: bool = False
    repetitions: tuple[int, int, int] = (1, 4, 8)
    wake_latency_s: float = 0.5

    def __post_init__(self):
        if not self.rsrp_threshold_01_dbm > self.rsrp_threshold_12_dbm:
            raise ConfigError("rsrp_threshold_01_dbm must be greater than rsrp_threshold_12_dbm")
        for name in ("t_cdrx_s", "edrx_cycle_s", "ptw_s", "psm_tau_s", "wake_latency_s"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ConfigError(f"{name} must be finite and >= 0, got {v}")
        if self.edrx_cycle_s > MAX_EDRX_CYCLE_S:
            raise ConfigError(f"edrx_cycle_s must be <= {MAX_EDRX_CYCLE_S}, got {self.edrx_cycle_s}")
        if self.edrx_rounds < 0:
            raise ConfigError("edrx_rounds must be >= 0")
        if self.ptw_s > self.edrx_cycle_s:
            raise ConfigError("ptw_s cannot exceed edrx_cycle_s")
        if not 1 <= self.max_payload_bytes <= MAX_PAYLOAD_BYTES:
            raise ConfigError(f"max_payload_bytes must be in 1..{MAX_PAYLOAD_BYTES}")
        reps = tuple(int(r) for r in self.repetitions)
        if len(reps) != 3 or reps[0] < 1 or any(b < a for a, b in zip(reps, reps[1:])):
            raise ConfigError("repetitions must be three positive, non-decreasing integers")
        object.__setattr__(self, "repetitions", reps)

    def multiplier(self, ce: CeLevel) -> int:
        return self.repetitions[int(ce)]

    @property
    def edrx_phase_s(self) -> float:
        return self.edrx_rounds * self.edrx_cycle_s


@dataclass(frozen=True)
class StatePower:
    power_w: float
    duration_s: float

    def __post_init__(self):
        for name in ("power_w", "duration_s"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ConfigError(f"{name} must be finite and >= 0, got {v}")

    @property
    def energy_j(self) -> float:
        return self.power_w * self.duration_s


NB_STATES = ("search_join", "transmit", "cdrx", "edrx_ptw", "psm")


@dataclass(frozen=True)
class NbIotEnergyProfile:
    """Power and base duration of each modem state.

    ``transmit.duration_s`` is the access part of a send (synchronisation and
    random access). The data part lasts ``bits / uplink_rate_bps``; both are
    stretched by the CE repetition multiplier. ``psm.duration_s`` is unused:
    PSM lasts until the next event.
    """

    search_join: StatePower
    transmit: StatePower
    cdrx: StatePower
    edrx_ptw: StatePower
    psm: StatePower
    uplink_rate_bps: float = 90_000.0

    def __post_init__(self):
        if not (math.isfinite(self.uplink_rate_bps) and self.uplink_rate_bps > 0):
            raise ConfigError("uplink_rate_bps must be > 0")
        powers = [getattr(self, s).power_w for s in NB_STATES]
        if self.psm.power_w > min(powers):
            raise ConfigError("psm power must be the lowest state power")

    def state(self, name: str) -> StatePower:
        return getattr(self, name)

    def scaled(self, factor: float) -> "NbIotEnergyProfile":
        def sc(sp):
            return StatePower(sp.power_w * factor, sp.duration_s)

        return NbIotEnergyProfile(
            *(sc(getattr(self, s)) for s in NB_STATES), uplink_rate_bps=self.uplink_rate_bps
        )


def select_ce_level(rsrp_dbm: float, config: NbIotConfig) -> CeLevel:
    """CE0 at or above the first threshold, CE2 below the second, CE1 between."""
    if not math.isfinite(rsrp_dbm):
        raise ValueError("rsrp_dbm must be finite")
    if rsrp_dbm >= config.rsrp_threshold_01_dbm:
        return CeLevel.CE0
    if rsrp_dbm >= config.rsrp_threshold_12_dbm:
        return CeLevel.CE1
    return CeLevel.CE2


def transmit_duration(
    ce: CeLevel,
    payload_bytes: int,
    profile: NbIotEnergyProfile,
    config: NbIotConfig,
    *,
    access: bool = True,
) -> float:
    """Seconds in the send state: (access + data time) times the CE multiplier.

    The data rate never exceeds the 180 kbps uplink cap. ``access=False``
    models a send from connected mode, where synchronisation and random
    access are already done.
    """
    bits = (payload_bytes + MESSAGE_OVERHEAD_BYTES) * 8
    data_time = bits / min(profile.uplink_rate_bps, UPLINK_RATE_CAP_BPS)
    base = (profile.transmit.duration_s if access else 0.0) + data_time
    return config.multiplier(ce) * base


def message_state_energies(
    ce: CeLevel,
    payload_bytes: int,
    profile: NbIotEnergyProfile,
    config: NbIotConfig,
    *,
    include_join: bool | None = None,
    access: bool = True,
) -> dict[str, float]:
    """Energy per modem state for one message, PSM excluded."""
    ce = CeLevel.parse(ce)
    if payload_bytes > config.max_payload_bytes:
        raise PayloadExceeded(
            f"{payload_bytes} B exceeds the NB-IoT per-message cap of {config.max_payload_bytes} B"
        )
    if payload_bytes < 0:
        raise ValueError("payload_bytes must be >= 0")
    join = config.include_join_energy if include_join is None else include_join
    return {
        "search_join": profile.search_join.energy_j if join else 0.0,
        "transmit": profile.transmit.power_w * transmit_duration(ce, payload_bytes, profile, config, access=access),
        "cdrx": profile.cdrx.energy_j,
        "edrx_ptw": profile.edrx_ptw.energy_j,
    }


def message_energy(ce, payload_bytes, profile, config, *, include_join=None, access=True) -> float:
    """Energy (J) of sending one message and running its CDRX/eDRX tail."""
    return math.fsum(
        message_state_energies(ce, payload_bytes, profile, config, include_join=include_join, access=access).values()
    )


def energy_per_byte(ce, payload_bytes, profile, config, **kwargs) -> float:
    if payload_bytes < 1:
        raise ValueError("payload_bytes must be >= 1")
    return message_energy(ce, payload_bytes, profile, config, **kwargs) / payload_bytes


@dataclass(frozen=True)
class LatencyParams:
    """Uplink latency of one CE level.

    Log-normal around ``median_s`` with log-spread ``sigma`` up to the
    ``tail_quantile``; above it the log-spread switches to ``tail_sigma``
    (continuous at the joint) and samples are clipped at ``cap_s``. The
    median is exact because the joint sits above it.
    """

    median_s: float
    sigma: float
    tail_quantile: float = 0.75
    tail_sigma: float | None = None
    cap_s: float = math.inf

    def __post_init__(self):
        if not (self.median_s > 0 and math.isfinite(self.median_s)):
            raise ConfigError("median_s must be > 0")
        if self.sigma < 0 or (self.tail_sigma is not None and self.tail_sigma < 0):
            raise ConfigError("latency spreads must be >= 0")
        if not 0.5 <= self.tail_quantile < 1:
            raise ConfigError("tail_quantile must be in [0.5, 1)")
        if not self.cap_s >= self.median_s:
            raise ConfigError("cap_s must be >= median_s")

    def quantile(self, q: float) -> float:
        if not 0 < q < 1:
            raise ValueError("q must be in (0, 1)")
        return float(self._from_z(np.asarray(NormalDist().inv_cdf(q))))

    def _from_z(self, z):
        tail_sigma = self.sigma if self.tail_sigma is None else self.tail_sigma
        z_t = NormalDist().inv_cdf(self.tail_quantile)
        log_dev = np.where(z <= z_t, self.sigma * z, self.sigma * z_t + tail_sigma * (z - z_t))
        return np.minimum(self.median_s * np.exp(log_dev), self.cap_s)


@dataclass(frozen=True)
class LatencyModel:
    levels: dict = field(default_factory=dict)

    def __post_init__(self):
        levels = {CeLevel.parse(k): v for k, v in self.levels.items()}
        missing = set(CeLevel) - set(levels)
        if missing:
            raise ConfigError(f"latency model misses {sorted(m.name for m in missing)}")
        object.__setattr__(self, "levels", levels)

    def __getitem__(self, ce) -> LatencyParams:
        return self.levels[CeLevel.parse(ce)]


def latency_from_box(q1_s, median_s, q3_s, cap_s, *, p99_s=None) -> LatencyParams:
    """Fit :class:`LatencyParams` to boxplot statistics.

    The body spread comes from the mean log-distance of the quartiles to the
    median; ``p99_s`` (if given) sets a heavier tail above the upper quartile.
    """
    z75 = NormalDist().inv_cdf(0.75)
    sigma = (math.log(q3_s / median_s) + math.log(median_s / q1_s)) / 2 / z75
    tail = sigma
    if p99_s is not None:
        tail = (math.log(p99_s / median_s) - sigma * z75) / (NormalDist().inv_cdf(0.99) - z75)
    return LatencyParams(median_s, sigma, 0.75, tail, cap_s)


def default_latency_model() -> LatencyModel:
    # Field boxplot quartiles per CE level; caps are the largest observed
    # samples, CE2 tail set by its 99th percentile of about 15 s.
    return LatencyModel({
        CeLevel.CE0: latency_from_box(0.5545, 0.859, 1.231, 5.345),
        CeLevel.CE1: latency_from_box(0.7505, 1.117, 1.600, 9.636),
        CeLevel.CE2: latency_from_box(1.6715, 1.915, 2.1895, 23.52, p99_s=15.0),
    })


def uplink_latency_sample(ce, model: LatencyModel, rng: np.random.Generator, size=None):
    """Draw uplink latencies (s). A scalar when ``size`` is None."""
    params = model[ce]
    z = rng.standard_normal(size)
    out = params._from_z(z)
    return float(out) if size is None else out


class ModemState(str, Enum):
    DETACHED = "detached"
    SEARCH_JOIN = "search_join"
    SEND = "send"
    CDRX = "cdrx"
    EDRX = "edrx"
    PSM = "psm"


class ModemEvent(str, Enum):
    ATTACH_COMPLETE = "attach_complete"
    MESSAGE_SENT = "message_sent"
    CDRX_EXPIRED = "cdrx_expired"
    EDRX_ROUNDS_DONE = "edrx_rounds_done"
    TAU_FIRED = "tau_fired"
    WAKE_INTERRUPT = "wake_interrupt"


_TRANSITIONS = {
    (ModemState.DETACHED, ModemEvent.WAKE_INTERRUPT): ModemState.SEARCH_JOIN,
    (ModemState.SEARCH_JOIN, ModemEvent.ATTACH_COMPLETE): ModemState.SEND,
    (ModemState.SEND, ModemEvent.MESSAGE_SENT): ModemState.CDRX,
    (ModemState.CDRX, ModemEvent.CDRX_EXPIRED): ModemState.EDRX,
    (ModemState.CDRX, ModemEvent.WAKE_INTERRUPT): ModemState.SEND,
    (ModemState.EDRX, ModemEvent.EDRX_ROUNDS_DONE): ModemState.PSM,
    (ModemState.EDRX, ModemEvent.WAKE_INTERRUPT): ModemState.SEND,
    (ModemState.PSM, ModemEvent.TAU_FIRED): ModemState.SEND,
    (ModemState.PSM, ModemEvent.WAKE_INTERRUPT): ModemState.SEND,
}


def advance_state(current, event) -> ModemState:
    """Next modem state; raises :class:`ProtocolViolation` for illegal events.

    Registration happens once per power cycle: a wake from PSM goes straight
    to sending.
    """
    current, event = ModemState(current), ModemEvent(event)
    try:
        return _TRANSITIONS[(current, event)]
    except KeyError:
        raise ProtocolViolation(f"event {event.value!r} is not legal in state {current.value!r}") from None


def audit_trace(states) -> bool:
    """True iff a trace starts unattached and only takes legal transitions.

    Starting from DETACHED, legality implies every send is preceded by a join.
    """
    states = [ModemState(s) for s in states]
    if not states:
        return True
    if states[0] not in (ModemState.DETACHED, ModemState.SEARCH_JOIN):
        return False
    legal = {(a, b) for (a, _), b in _TRANSITIONS.items()}
    return all((a, b) in legal for a, b in zip(states, states[1:]))


def downlink_next_opportunity(modem_state, elapsed_s: float, config: NbIotConfig) -> float:
    """Seconds until a downlink can reach the modem.

    ``elapsed_s`` is measured from entry into the given state.
    """
    state = ModemState(modem_state)
    if state in (ModemState.CDRX, ModemState.SEND):
        return 0.0
    if state is ModemState.EDRX:
        phase = elapsed_s % config.edrx_cycle_s if config.edrx_cycle_s > 0 else 0.0
        return 0.0 if phase < config.ptw_s else config.edrx_cycle_s - phase
    if state is ModemState.PSM:
        return max(config.psm_tau_s - elapsed_s, 0.0)
    return math.inf
