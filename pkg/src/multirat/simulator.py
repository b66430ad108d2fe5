"""Deterministic discrete-event simulation of one multi-RAT node.

Every message goes through the selector; the chosen radio is then driven
through its timeline. Time is kept in integer microseconds. The NB-IoT modem
follows join -> send -> connected DRX -> eDRX -> PSM, with periodic tracking
area updates while in PSM. A new send cuts the running tail short and only
the part actually spent is charged.

Energy is split into three buckets: per-message transmit energy (what the
selector optimises), idle energy (sleep draw and tracking area updates) and
the one-off network registration.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import NoFeasiblePlan, SchemaError
from .link import EnvironmentClass, LinkState, sample_environment
from .lorawan import max_app_payload, schedule_fragments, uplink_state_energies
from .nbiot import (
    CeLevel,
    ModemEvent,
    ModemState,
    advance_state,
    audit_trace,
    transmit_duration,
    uplink_latency_sample,
)
from .policy import (
    LORAWAN,
    NBIOT,
    MessageRequest,
    NodeState,
    PolicyOptions,
    enumerate_candidates,
    select_plan,
)
from .profile import Profile, default_profile, load as load_profile, validate

US = 1_000_000
WEEK_S = 7 * 24 * 3600
WEEKS_PER_YEAR = 52.18
SCENARIO_VERSION = 1
MODES = {"multirat": (LORAWAN, NBIOT), "lora_only": (LORAWAN,), "nbiot_only": (NBIOT,)}


def to_us(seconds: float) -> int:
    return int(round(seconds * US))


# ---------------------------------------------------------------- scenario

_POS = {"type": "number", "exclusiveMinimum": 0}
_OPT_DEADLINE = {"type": ["number", "null"], "exclusiveMinimum": 0}
_QOS = {"enum": ["best_effort", "assured"]}
_PAYLOAD = {"type": "integer", "minimum": 1}

SCENARIO_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["schema_version", "duration_s", "traffic", "link"],
    "properties": {
        "schema_version": {"const": SCENARIO_VERSION},
        "name": {"type": "string"},
        "duration_s": _POS,
        "seed": {"type": "integer", "minimum": 0},
        "mode": {"enum": list(MODES)},
        "battery": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"capacity_mah": _POS, "voltage_v": _POS, "energy_j": {"type": "number", "minimum": 0}},
            "oneOf": [{"required": ["capacity_mah", "voltage_v"]}, {"required": ["energy_j"]}],
        },
        "link": {
            "type": "object",
            "additionalProperties": False,
            "required": ["path_loss_db"],
            "properties": {
                "path_loss_db": {"type": "number", "minimum": 0},
                "lora_path_loss_db": {"type": "number", "minimum": 0},
                "lora_snr_margin_db": {"type": "number"},
            },
        },
        "environment": {
            "oneOf": [
                {"enum": ["outdoor", "indoor", "subterranean"]},
                {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["probabilities"],
                    "properties": {
                        "name": {"type": "string"},
                        "probabilities": {
                            "type": "array",
                            "items": {"type": "number", "minimum": 0, "maximum": 1},
                            "minItems": 3,
                            "maxItems": 3,
                        },
                    },
                },
            ]
        },
        "policy": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "confirmed_uplink": {"type": "boolean"},
                "latency_quantile": {"type": ["number", "null"], "exclusiveMinimum": 0, "exclusiveMaximum": 1},
            },
        },
        "profile": {"type": "string"},
        "traffic": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["kind", "name", "payload_bytes"],
                "properties": {
                    "kind": {"enum": ["periodic", "event"]},
                    "name": {"type": "string"},
                    "payload_bytes": _PAYLOAD,
                    "deadline_s": _OPT_DEADLINE,
                    "qos": _QOS,
                    "interval_s": _POS,
                    "offset_s": {"type": "number", "minimum": 0},
                    "rate_per_week": {"type": "number", "minimum": 0},
                },
                "additionalProperties": False,
                "allOf": [
                    {
                        "if": {"properties": {"kind": {"const": "periodic"}}},
                        "then": {"required": ["interval_s"], "not": {"required": ["rate_per_week"]}},
                    },
                    {
                        "if": {"properties": {"kind": {"const": "event"}}},
                        "then": {"required": ["rate_per_week"], "properties": {"interval_s": False, "offset_s": False}},
                    },
                ],
            },
        },
    },
}


@dataclass(frozen=True)
class TrafficSource:
    kind: str
    name: str
    payload_bytes: int
    interval_s: float | None = None
    offset_s: float = 0.0
    rate_per_week: float | None = None
    deadline_s: float | None = None
    qos: str = "best_effort"


@dataclass(frozen=True)
class Scenario:
    duration_s: float
    traffic: tuple[TrafficSource, ...]
    link: LinkState
    profile: Profile
    battery_j: float = 0.0
    mode: str = "multirat"
    seed: int = 0
    environment: EnvironmentClass | None = None
    confirmed_uplink: bool = False
    latency_quantile: float | None = None
    name: str = ""

    def with_mode(self, mode: str) -> "Scenario":
        if mode not in MODES:
            raise SchemaError(f"unknown mode {mode!r}", "$.mode")
        return replace(self, mode=mode)


def battery_joules(capacity_mah: float, voltage_v: float) -> float:
    """Nominal battery energy: mAh x V x 3.6."""
    return capacity_mah * voltage_v * 3.6


def parse_scenario(doc: dict, *, base_dir=None, profile: Profile | None = None) -> Scenario:
    """Validate and build a :class:`Scenario`; errors carry the JSON path."""
    validate(doc, SCENARIO_SCHEMA)
    if profile is None:
        if "profile" in doc:
            path = Path(doc["profile"])
            if base_dir is not None and not path.is_absolute():
                path = Path(base_dir) / path
            profile = load_profile(path)
        else:
            profile = default_profile()
    bat = doc.get("battery", {})
    battery_j = bat["energy_j"] if "energy_j" in bat else battery_joules(bat["capacity_mah"], bat["voltage_v"]) if bat else 0.0
    env = doc.get("environment")
    try:
        environment = None
        if isinstance(env, str):
            environment = EnvironmentClass(env)
        elif env is not None:
            environment = EnvironmentClass(env.get("name", "custom"), tuple(env["probabilities"]))
    except Exception as exc:
        raise SchemaError(str(exc), "$.environment") from exc
    pol = doc.get("policy", {})
    return Scenario(
        duration_s=float(doc["duration_s"]),
        traffic=tuple(TrafficSource(**t) for t in doc["traffic"]),
        link=LinkState(**doc["link"]),
        profile=profile,
        battery_j=float(battery_j),
        mode=doc.get("mode", "multirat"),
        seed=int(doc.get("seed", 0)),
        environment=environment,
        confirmed_uplink=bool(pol.get("confirmed_uplink", False)),
        latency_quantile=pol.get("latency_quantile"),
        name=doc.get("name", ""),
    )


def load_scenario(path, *, profile: Profile | None = None) -> Scenario:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON: {exc}") from exc
    return parse_scenario(doc, base_dir=path.parent, profile=profile)


@dataclass(frozen=True)
class _Message:
    t_us: int
    source_index: int
    seq: int
    source: TrafficSource

    @property
    def id(self) -> str:
        return f"{self.source.name}-{self.seq}"


def generate_traffic(scenario: Scenario, rng: np.random.Generator) -> list[_Message]:
    """All messages of the run in time order.

    Event sources place ``round(rate * weeks)`` messages uniformly at random.
    """
    end_us = to_us(scenario.duration_s)
    out = []
    for i, src in enumerate(scenario.traffic):
        if src.kind == "periodic":
            step, t = to_us(src.interval_s), to_us(src.offset_s)
            times = range(t, end_us, step)
        else:
            n = int(round(src.rate_per_week * scenario.duration_s / WEEK_S))
            times = np.sort(rng.integers(0, end_us, size=n))
        out += [_Message(int(t), i, k, src) for k, t in enumerate(times)]
    out.sort(key=lambda m: (m.t_us, m.source_index, m.seq))
    return out


# ---------------------------------------------------------------- NB modem


@dataclass
class _Record:
    """Per-message outcome; NB-IoT tail energy is added as it is spent."""

    message_id: str
    source: str
    t_us: int
    payload_bytes: int
    technology: str = ""
    parameter: str = ""
    fragments: int = 0
    latency_s: float = math.nan
    delivered: bool = False
    reasons: tuple = ()
    states: dict = field(default_factory=dict)

    @property
    def energy_j(self) -> float:
        return math.fsum(self.states.values())

    def charge(self, state: str, joules: float):
        self.states[state] = self.states.get(state, 0.0) + joules


class _NbModem:
    """Timeline of the NB-IoT modem; energies go to the record owning a phase."""

    def __init__(self, profile: Profile, idle: _Record, join: _Record):
        self.p = profile.nbiot_energy
        self.cfg = profile.nbiot_config
        self.idle, self.join = idle, join
        self.state = ModemState.DETACHED
        self.trace = [self.state]
        self.phase_start = 0
        self.phase_end = None  # None: lasts until the next event
        self.owner = idle
        self.tau_ce = CeLevel.CE0

    def _move(self, event: ModemEvent, t_us: int, end_us=None):
        self.state = advance_state(self.state, event)
        self.trace.append(self.state)
        self.phase_start, self.phase_end = t_us, end_us

    def _phase_energy(self, until_us: int) -> tuple[str, float]:
        """Energy of the running phase from its start up to ``until_us``."""
        spent = (until_us - self.phase_start) / US
        if self.state in (ModemState.PSM, ModemState.DETACHED):
            return "psm", self.p.psm.power_w * spent
        if self.state is ModemState.CDRX:
            full = self.cfg.t_cdrx_s
            return "cdrx", self.p.cdrx.energy_j * (spent / full if full > 0 else 1.0)
        if self.state is ModemState.EDRX:
            full = self.cfg.edrx_phase_s
            return "edrx_ptw", self.p.edrx_ptw.energy_j * (spent / full if full > 0 else 1.0)
        return "", 0.0  # sends are charged up front

    def _close_phase(self, t_us: int):
        name, joules = self._phase_energy(t_us)
        if name:
            (self.idle if name == "psm" else self.owner).charge(name, joules)

    def advance_to(self, t_us: int):
        """Run timer-driven transitions with boundaries at or before ``t_us``."""
        while self.phase_end is not None and self.phase_end <= t_us:
            end = self.phase_end
            self._close_phase(end)
            if self.state is ModemState.SEND:
                self._move(ModemEvent.MESSAGE_SENT, end, end + to_us(self.cfg.t_cdrx_s))
            elif self.state is ModemState.CDRX:
                self._move(ModemEvent.CDRX_EXPIRED, end, end + to_us(self.cfg.edrx_phase_s))
            elif self.state is ModemState.EDRX:
                tau = to_us(self.cfg.psm_tau_s) if self.cfg.psm_tau_s > 0 else None
                self._move(ModemEvent.EDRX_ROUNDS_DONE, end, None if tau is None else end + tau)
            elif self.state is ModemState.PSM:
                # Periodic tracking area update: access only, billed as idle.
                self._move(ModemEvent.TAU_FIRED, end)
                self.owner = self.idle
                self._send_phase(end, self.cfg.multiplier(self.tau_ce) * self.p.transmit.duration_s, "tau")

    def _send_phase(self, t_us: int, secs: float, bucket: str = "transmit"):
        self.owner.charge(bucket, self.p.transmit.power_w * secs)
        self.phase_end = t_us + to_us(secs)

    def busy_until(self, t_us: int) -> int:
        self.advance_to(t_us)
        if self.state is ModemState.SEND and self.phase_end > t_us:
            return self.phase_end
        return t_us

    def send(self, t_us: int, payload: int, ce: CeLevel, record: _Record) -> int:
        """Start a send at ``t_us`` (modem not busy); returns when data starts.

        A detached modem registers first, which delays the data.
        """
        self.advance_to(t_us)
        self.tau_ce = ce
        access = self.state not in (ModemState.CDRX, ModemState.SEND)
        if self.state is ModemState.DETACHED:
            self._close_phase(t_us)
            self._move(ModemEvent.WAKE_INTERRUPT, t_us)
            self.join.charge("search_join", self.p.search_join.energy_j)
            t_us += to_us(self.p.search_join.duration_s)
            self._move(ModemEvent.ATTACH_COMPLETE, t_us)
        else:
            self._close_phase(t_us)
            self._move(ModemEvent.WAKE_INTERRUPT, t_us)
        self.owner = record
        self._send_phase(t_us, transmit_duration(ce, payload, self.p, self.cfg, access=access))
        return t_us

    def finish(self, end_us: int):
        self.advance_to(end_us)
        self._close_phase(end_us)
        self.phase_start = end_us


# ---------------------------------------------------------------- report


def _percentiles(values) -> dict:
    if not values:
        return {"count": 0}
    arr = np.asarray(values, dtype=float)
    p = np.percentile(arr, [50, 90, 99])
    return {"count": int(arr.size), "p50_s": float(p[0]), "p90_s": float(p[1]), "p99_s": float(p[2]), "max_s": float(arr.max())}


def _peak_window_utilization(log, window_s: float) -> float:
    """Largest airtime share over any window starting at a frame start."""
    if not log:
        return 0.0
    starts = np.array([s for s, _ in log])
    ends = np.array([s + a for s, a in log])
    peak = 0.0
    for s in starts:
        w_end = s + window_s
        inside = np.clip(np.minimum(ends, w_end) - np.maximum(starts, s), 0, None)
        peak = max(peak, float(inside.sum()) / window_s)
    return peak


@dataclass(frozen=True)
class SimReport:
    data: dict
    trace_rows: tuple

    def __getitem__(self, key):
        return self.data[key]

    def to_json(self) -> str:
        return json.dumps(self.data, indent=2, sort_keys=True, allow_nan=False) + "\n"

    def trace_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for row in self.trace_rows:
            w.writerow(row)
        return buf.getvalue()


TRACE_COLUMNS = ("message_id", "t_s", "technology", "parameter", "fragments", "energy_j", "latency_s", "delivered")


def _fmt(x: float) -> str:
    return "" if x is None or (isinstance(x, float) and math.isnan(x)) else repr(float(x))


def _finite_or_none(x: float):
    return None if not math.isfinite(x) else x


def run(scenario: Scenario, seed: int | None = None) -> SimReport:
    """Simulate the scenario; ``seed`` overrides the scenario's own seed."""
    seed = scenario.seed if seed is None else seed
    techs = MODES[scenario.mode]
    profile = scenario.profile
    traffic_rng = np.random.default_rng([seed, 0])
    latency_rng = np.random.default_rng([seed, 1])
    env_rng = np.random.default_rng([seed, 2])
    end_us = to_us(scenario.duration_s)
    options = PolicyOptions(
        technologies=techs, confirmed_uplink=scenario.confirmed_uplink, latency_quantile=scenario.latency_quantile
    )

    idle = _Record("idle", "", 0, 0)
    join = _Record("join", "", 0, 0)
    modem = _NbModem(profile, idle, join) if NBIOT in techs else None
    ledger = profile.ledger()
    battery = scenario.battery_j if scenario.battery_j > 0 else math.inf
    records: list[_Record] = []

    for msg in generate_traffic(scenario, traffic_rng):
        src = msg.source
        rec = _Record(msg.id, src.name, msg.t_us, src.payload_bytes)
        records.append(rec)
        if msg.t_us >= end_us:
            continue
        start_us = modem.busy_until(msg.t_us) if modem else msg.t_us
        modem_state = modem.state if modem else ModemState.PSM
        ce_override = sample_environment(scenario.environment, env_rng) if scenario.environment else None
        state = NodeState(
            link=scenario.link,
            ledger=ledger,
            modem_state=modem_state,
            battery_j=battery,
            now_s=msg.t_us / US,
            ce_override=ce_override,
        )
        request = MessageRequest(msg.id, src.payload_bytes, src.deadline_s, src.qos, msg.t_us / US)
        try:
            plan = select_plan(enumerate_candidates(request, state, profile, options))
        except NoFeasiblePlan as exc:
            rec.reasons = tuple(f"{c.technology}:{r}" for c in exc.candidates for r in c.reasons)
            continue
        rec.technology, rec.parameter, rec.fragments = plan.technology, plan.parameter, len(plan.fragments)
        if plan.technology == LORAWAN:
            config = plan.radio
            latency, ledger = schedule_fragments(list(plan.fragments), config, ledger, msg.t_us / US)
            if plan.confirmed:
                latency = plan.predicted_latency_s
            for f in plan.fragments:
                for k, v in uplink_state_energies(config, profile.lora_energy, f, confirmed=plan.confirmed).items():
                    rec.charge(k, v)
            rec.latency_s = latency
        else:
            wakes = modem.state in (ModemState.EDRX, ModemState.PSM, ModemState.DETACHED)
            data_us = modem.send(start_us, src.payload_bytes, plan.ce_level, rec)
            wait = (data_us - msg.t_us) / US
            wake = profile.nbiot_config.wake_latency_s if wakes else 0.0
            rec.latency_s = wait + wake + uplink_latency_sample(plan.ce_level, profile.latency, latency_rng)
        rec.delivered = True
        battery -= plan.predicted_energy_j

    if modem:
        modem.finish(end_us)
    sleep_s = scenario.duration_s
    if LORAWAN in techs:
        idle.charge("lora_sleep", profile.lora_energy.p_sleep_w * sleep_s)

    return _build_report(scenario, seed, records, idle, join, ledger, modem)


def _build_report(scenario, seed, records, idle, join, ledger, modem) -> SimReport:
    delivered = [r for r in records if r.delivered]
    transmit = math.fsum(r.energy_j for r in delivered)
    idle_j = idle.energy_j
    join_j = join.energy_j
    total = math.fsum([transmit, idle_j, join_j])
    weeks = scenario.duration_s / WEEK_S

    by_tech = {LORAWAN: 0.0, NBIOT: 0.0}
    counts = {LORAWAN: 0, NBIOT: 0, "undelivered": 0}
    by_state = {LORAWAN: {}, NBIOT: {}}
    for r in records:
        if not r.delivered:
            counts["undelivered"] += 1
            continue
        counts[r.technology] += 1
        by_tech[r.technology] = math.fsum([by_tech[r.technology], r.energy_j])
        for k, v in r.states.items():
            by_state[r.technology][k] = by_state[r.technology].get(k, 0.0) + v
    for k, v in idle.states.items():
        tech = LORAWAN if k == "lora_sleep" else NBIOT
        by_state[tech][k] = by_state[tech].get(k, 0.0) + v
    for k, v in join.states.items():
        by_state[NBIOT][k] = by_state[NBIOT].get(k, 0.0) + v

    per_class = {}
    for src in scenario.traffic:
        per_class[src.name] = _percentiles([r.latency_s for r in delivered if r.source == src.name])

    on_air = ledger.on_air_s
    # Queued fragments may spill past the end; their off-time counts too.
    horizon_s = max(scenario.duration_s, ledger.next_free_s - ledger.origin_s)
    state_sum = math.fsum(v for tech in by_state.values() for v in tech.values())
    nb_ok = all(r.payload_bytes <= scenario.profile.nbiot_config.max_payload_bytes for r in delivered if r.technology == NBIOT)
    lora_ok = all(
        r.payload_bytes <= r.fragments * max_app_payload(int(r.parameter[2:])) for r in delivered if r.technology == LORAWAN
    )
    audits = {
        "duty_cycle": ledger.audit() and on_air <= ledger.duty_fraction * horizon_s * (1 + 1e-12),
        "state_order": audit_trace(modem.trace) if modem else True,
        "energy_conservation": math.isclose(total, math.fsum([*(r.energy_j for r in delivered), idle_j, join_j]), rel_tol=0, abs_tol=1e-9)
        and math.isclose(total, state_sum, rel_tol=1e-12, abs_tol=1e-9),
        "nbiot_payload_cap": nb_ok,
        "lora_fragment_cap": lora_ok,
    }

    data = {
        "scenario": scenario.name,
        "mode": scenario.mode,
        "seed": seed,
        "duration_s": scenario.duration_s,
        "transmit_energy_j": transmit,
        "weekly_transmit_energy_j": transmit / weeks,
        "idle_energy_j": idle_j,
        "join_energy_j": join_j,
        "total_energy_j": total,
        "idle_energy_by_kind_j": dict(sorted(idle.states.items())),
        "energy_by_technology_j": by_tech,
        "energy_by_state_j": {t: dict(sorted(s.items())) for t, s in by_state.items()},
        "message_counts": counts,
        "latency_percentiles": per_class,
        "duty_cycle": {
            "on_air_s": on_air,
            "utilization": on_air / horizon_s,
            "horizon_s": horizon_s,
            "peak_hourly_utilization": _peak_window_utilization(ledger.log, 3600.0),
            "limit": ledger.duty_fraction,
        },
        "battery_j": scenario.battery_j,
        "undelivered": [{"message_id": r.message_id, "reasons": list(r.reasons)} for r in records if not r.delivered],
        "audits": audits,
    }
    data["battery_lifetime_years"] = _finite_or_none(battery_lifetime(data, scenario.battery_j))
    data["battery_lifetime_with_idle_years"] = _finite_or_none(
        battery_lifetime(data, scenario.battery_j, include_idle=True)
    )
    rows = tuple(
        (
            r.message_id,
            _fmt(r.t_us / US),
            r.technology,
            r.parameter,
            r.fragments,
            _fmt(r.energy_j if r.delivered else 0.0),
            _fmt(r.latency_s),
            str(r.delivered).lower(),
        )
        for r in records
    )
    return SimReport(data, rows)


def battery_lifetime(report, battery_j: float, *, include_idle: bool = False) -> float:
    """Years until ``battery_j`` is used up at the report's weekly rate.

    By default only transmit energy counts; ``include_idle`` adds sleep draw,
    tracking area updates and registration. Self-discharge is ignored.
    """
    data = report.data if isinstance(report, SimReport) else report
    if battery_j <= 0:
        return 0.0
    weeks = data["duration_s"] / WEEK_S
    energy = data["transmit_energy_j"]
    if include_idle:
        energy = math.fsum([energy, data["idle_energy_j"], data["join_energy_j"]])
    weekly = energy / weeks
    if weekly <= 0:
        return math.inf
    return battery_j / weekly / WEEKS_PER_YEAR


def compare_modes(scenario: Scenario, seed: int | None = None) -> dict:
    """Run all three modes and report weekly transmit energy ratios to multi-RAT."""
    reports = {m: run(scenario.with_mode(m), seed) for m in MODES}
    base = reports["multirat"]["weekly_transmit_energy_j"]

    def ratio(m):
        return reports[m]["weekly_transmit_energy_j"] / base if base > 0 else None

    others = [reports[m]["transmit_energy_j"] for m in ("lora_only", "nbiot_only")]
    all_delivered = all(r["message_counts"]["undelivered"] == 0 for r in reports.values())
    return {
        "reports": reports,
        "ratios": {"nbiot_only_over_multirat": ratio("nbiot_only"), "lora_only_over_multirat": ratio("lora_only")},
        # Only comparable when every mode delivered the same messages.
        "multirat_dominates": (reports["multirat"]["transmit_energy_j"] <= min(others) * (1 + 1e-9)) if all_delivered else None,
    }
