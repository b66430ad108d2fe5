"""Per-message technology selection.

For every message one LoRaWAN plan (at the ADR spreading factor) and one
NB-IoT plan (at the RSRP-derived CE level) are built. Plans that break a
constraint stay in the candidate list with machine-readable reasons; the
selector picks the cheapest feasible plan.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

from .errors import ConfigError, NoFeasiblePlan
from .link import LinkState, lora_reachable, nbiot_reachable
from .lorawan import (
    RECEIVE_DELAY1_S,
    DutyCycleLedger,
    LoRaRadioConfig,
    ack_airtime,
    adr_adjust,
    fragment_payload,
    uplink_delivery_latency,
    uplink_energy,
)
from .nbiot import CeLevel, ModemState, message_energy, select_ce_level
from .profile import Profile

LORAWAN = "lorawan"
NBIOT = "nbiot"
TECHNOLOGIES = (LORAWAN, NBIOT)

# Rejection reasons.
COVERAGE = "coverage"
PAYLOAD = "payload"
DEADLINE = "deadline"
QOS = "qos"
BATTERY = "battery"


class Qos(str, Enum):
    BEST_EFFORT = "best_effort"
    ASSURED = "assured"


@dataclass(frozen=True)
class MessageRequest:
    id: str
    payload_bytes: int
    deadline_s: float | None = None
    qos: Qos = Qos.BEST_EFFORT
    created_at_s: float = 0.0

    def __post_init__(self):
        if int(self.payload_bytes) != self.payload_bytes or self.payload_bytes < 1:
            raise ConfigError(f"payload_bytes must be an integer >= 1, got {self.payload_bytes}")
        if self.deadline_s is not None and not self.deadline_s > 0:
            raise ConfigError(f"deadline_s must be > 0, got {self.deadline_s}")
        object.__setattr__(self, "qos", Qos(self.qos))


@dataclass(frozen=True)
class TransmissionPlan:
    technology: str
    parameter: str
    fragments: tuple[int, ...]
    predicted_energy_j: float
    predicted_latency_s: float
    qos_met: bool
    reasons: tuple[str, ...] = ()
    confirmed: bool = False
    spreading_factor: int | None = None
    ce_level: CeLevel | None = None
    wakes_modem: bool = False
    radio: LoRaRadioConfig | None = None

    @property
    def feasible(self) -> bool:
        return not self.reasons

    def to_dict(self) -> dict:
        return {
            "technology": self.technology,
            "parameter": self.parameter,
            "fragments": list(self.fragments),
            "predicted_energy_j": self.predicted_energy_j,
            "predicted_latency_s": self.predicted_latency_s,
            "qos_met": self.qos_met,
            "feasible": self.feasible,
            "reasons": list(self.reasons),
        }


@dataclass(frozen=True)
class NodeState:
    """What the selector knows about the node when a message is due.

    ``ce_override`` replaces the RSRP-based CE level (environment sampling).
    """

    link: LinkState
    ledger: DutyCycleLedger = field(default_factory=DutyCycleLedger)
    modem_state: ModemState = ModemState.PSM
    battery_j: float = math.inf
    now_s: float = 0.0
    ce_override: CeLevel | None = None

    def __post_init__(self):
        if not self.battery_j >= 0:
            raise ConfigError("battery_j must be >= 0")
        object.__setattr__(self, "modem_state", ModemState(self.modem_state))


@dataclass(frozen=True)
class PolicyOptions:
    """``latency_quantile`` switches deadline checks from the median to a
    conservative NB-IoT latency quantile."""

    technologies: tuple[str, ...] = TECHNOLOGIES
    confirmed_uplink: bool = False
    latency_quantile: float | None = None

    def __post_init__(self):
        unknown = set(self.technologies) - set(TECHNOLOGIES)
        if unknown or not self.technologies:
            raise ConfigError(f"technologies must be a non-empty subset of {TECHNOLOGIES}")
        if self.latency_quantile is not None and not 0 < self.latency_quantile < 1:
            raise ConfigError("latency_quantile must be in (0, 1)")


def qos_gate(msg: MessageRequest, plan: TransmissionPlan) -> bool:
    """Assured messages need NB-IoT or a confirmed LoRaWAN uplink."""
    if msg.qos is Qos.BEST_EFFORT:
        return True
    return plan.technology == NBIOT or plan.confirmed


def _common_reasons(msg, state, energy, latency) -> list[str]:
    # Infinite predictions come from a payload or coverage reason already given.
    reasons = []
    if msg.deadline_s is not None and math.isfinite(latency) and latency > msg.deadline_s:
        reasons.append(DEADLINE)
    if math.isfinite(energy) and energy > state.battery_j:
        reasons.append(BATTERY)
    return reasons


def lora_candidate(msg, state, profile: Profile, options: PolicyOptions) -> TransmissionPlan:
    config = adr_adjust(state.link.lora_snr_margin_db, profile.lora_radio)
    frags = fragment_payload(msg.payload_bytes, config.spreading_factor)
    confirmed = options.confirmed_uplink
    energy = math.fsum(uplink_energy(config, profile.lora_energy, f, confirmed=confirmed) for f in frags)
    latency = uplink_delivery_latency(frags, config, state.ledger, state.now_s)
    if confirmed:
        latency += RECEIVE_DELAY1_S + ack_airtime(config)
    reasons = [] if lora_reachable(state.link, config) else [COVERAGE]
    reasons += _common_reasons(msg, state, energy, latency)
    plan = TransmissionPlan(
        LORAWAN, f"SF{config.spreading_factor}", tuple(frags), energy, latency, True,
        confirmed=confirmed, spreading_factor=config.spreading_factor, radio=config,
    )
    qos_met = qos_gate(msg, plan)
    if not qos_met:
        reasons.append(QOS)
    return replace(plan, qos_met=qos_met, reasons=tuple(reasons))


def nbiot_candidate(msg, state, profile: Profile, options: PolicyOptions) -> TransmissionPlan:
    cfg = profile.nbiot_config
    ce = state.ce_override if state.ce_override is not None else select_ce_level(state.link.rsrp_dbm, cfg)
    reasons = [] if nbiot_reachable(state.link) else [COVERAGE]
    # A modem still in connected mode skips synchronisation and random access.
    access = state.modem_state not in (ModemState.CDRX, ModemState.SEND)
    wakes = state.modem_state in (ModemState.EDRX, ModemState.PSM, ModemState.DETACHED)
    params = profile.latency[ce]
    latency = params.median_s if options.latency_quantile is None else params.quantile(options.latency_quantile)
    if wakes:
        latency += cfg.wake_latency_s
    if msg.payload_bytes > cfg.max_payload_bytes:
        reasons.append(PAYLOAD)
        energy = math.inf
    else:
        energy = message_energy(ce, msg.payload_bytes, profile.nbiot_energy, cfg, include_join=False, access=access)
    reasons += _common_reasons(msg, state, energy, latency)
    return TransmissionPlan(
        NBIOT, ce.name, (msg.payload_bytes,), energy, latency, True,
        reasons=tuple(reasons), ce_level=ce, wakes_modem=wakes,
    )


def enumerate_candidates(
    msg: MessageRequest,
    state: NodeState,
    profile: Profile,
    options: PolicyOptions | None = None,
) -> list[TransmissionPlan]:
    """One plan per enabled technology, infeasible ones flagged with reasons."""
    options = options or PolicyOptions()
    builders = {LORAWAN: lora_candidate, NBIOT: nbiot_candidate}
    return [builders[t](msg, state, profile, options) for t in TECHNOLOGIES if t in options.technologies]


def _rank(plan: TransmissionPlan):
    return (plan.predicted_energy_j, plan.predicted_latency_s, TECHNOLOGIES.index(plan.technology))


def select_plan(candidates) -> TransmissionPlan:
    """Cheapest feasible plan; ties go to lower latency, then LoRaWAN.

    Raises :class:`NoFeasiblePlan` carrying every candidate when none qualifies.
    """
    candidates = list(candidates)
    feasible = [c for c in candidates if c.feasible]
    if not feasible:
        raise NoFeasiblePlan(candidates)
    return min(feasible, key=_rank)


def plan_message(msg, state, profile, options=None) -> TransmissionPlan:
    return select_plan(enumerate_candidates(msg, state, profile, options))
