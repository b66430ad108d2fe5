"""LoRaWAN uplink model: airtime, payload caps, fragmentation, duty cycle,
per-state energy, ADR and downlink latency by device class.

All functions are pure. The :class:`DutyCycleLedger` is immutable; operations
that consume airtime return a new ledger.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

from .errors import ConfigError, FragmentationRequired

MAC_OVERHEAD_BYTES = 13
MAX_PHY_PAYLOAD_BYTES = 255
ALLOWED_BANDWIDTHS_HZ = (125_000, 250_000, 500_000)
LDRO_SYMBOL_THRESHOLD_S = 0.016

# EU868 regional defaults, application payload per frame.
MAX_APP_PAYLOAD = {7: 242, 8: 242, 9: 115, 10: 51, 11: 51, 12: 51}

EU868_MAX_TX_POWER_DBM = 14.0
EU868_MIN_TX_POWER_DBM = 2.0
ADR_STEP_DB = 3.0
ADR_DEADBAND_DB = 3.0
ADR_POWER_STEP_DB = 3.0

RECEIVE_DELAY1_S = 1.0


@dataclass(frozen=True)
class LoRaRadioConfig:
    """PHY settings of one LoRa transmission.

    ``coding_rate`` is the denominator of the 4/x code rate (5..8).
    ``low_datarate_optimize=None`` derives the flag from the symbol time.
    """

    spreading_factor: int = 12
    bandwidth_hz: int = 125_000
    coding_rate: int = 5
    preamble_symbols: int = 8
    explicit_header: bool = True
    crc_enabled: bool = True
    low_datarate_optimize: bool | None = None
    tx_power_dbm: float = EU868_MAX_TX_POWER_DBM

    def __post_init__(self):
        if not 7 <= self.spreading_factor <= 12:
            raise ConfigError(f"spreading_factor must be in 7..12, got {self.spreading_factor}")
        if self.bandwidth_hz not in ALLOWED_BANDWIDTHS_HZ:
            raise ConfigError(f"bandwidth_hz must be one of {ALLOWED_BANDWIDTHS_HZ}, got {self.bandwidth_hz}")
        if not 5 <= self.coding_rate <= 8:
            raise ConfigError(f"coding_rate denominator must be in 5..8, got {self.coding_rate}")
        if self.preamble_symbols < 1:
            raise ConfigError("preamble_symbols must be positive")
        if not math.isfinite(self.tx_power_dbm):
            raise ConfigError("tx_power_dbm must be finite")
        needs_ldro = self.symbol_time_s >= LDRO_SYMBOL_THRESHOLD_S
        if self.low_datarate_optimize is None:
            object.__setattr__(self, "low_datarate_optimize", needs_ldro)
        elif needs_ldro and not self.low_datarate_optimize:
            raise ConfigError(
                f"low_datarate_optimize is mandatory at SF{self.spreading_factor}/{self.bandwidth_hz} Hz"
            )

    @property
    def symbol_time_s(self) -> float:
        return 2 ** self.spreading_factor / self.bandwidth_hz

    def with_sf(self, spreading_factor: int) -> "LoRaRadioConfig":
        return replace(self, spreading_factor=spreading_factor, low_datarate_optimize=None)


@dataclass(frozen=True)
class LoRaEnergyProfile:
    """Power per radio state (W) and the fixed state durations (s).

    ``t_rx1_s``/``t_rx2_s`` of ``None`` mean "preamble-detection minimum":
    ``rx_window_symbols`` symbols at the uplink spreading factor.
    """

    p_transmit_w: float
    p_process_w: float
    p_receive_w: float
    t_process1_s: float = 0.15
    t_process2_s: float = 0.15
    t_rx1_s: float | None = None
    t_rx2_s: float | None = None
    p_sleep_w: float = 0.0
    rx_window_symbols: int = 8

    def __post_init__(self):
        for name in ("p_transmit_w", "p_receive_w"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ConfigError(f"{name} must be finite and > 0, got {v}")
        for name in ("p_process_w", "p_sleep_w", "t_process1_s", "t_process2_s"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ConfigError(f"{name} must be finite and >= 0, got {v}")
        for name in ("t_rx1_s", "t_rx2_s"):
            v = getattr(self, name)
            if v is not None and not (math.isfinite(v) and v >= 0):
                raise ConfigError(f"{name} must be finite and >= 0, got {v}")
        if self.rx_window_symbols < 0:
            raise ConfigError("rx_window_symbols must be >= 0")

    def scaled(self, factor: float) -> "LoRaEnergyProfile":
        """Every active-state power multiplied by ``factor`` (sleep included)."""
        return replace(
            self,
            p_transmit_w=self.p_transmit_w * factor,
            p_process_w=self.p_process_w * factor,
            p_receive_w=self.p_receive_w * factor,
            p_sleep_w=self.p_sleep_w * factor,
        )


def max_app_payload(spreading_factor: int) -> int:
    try:
        return MAX_APP_PAYLOAD[spreading_factor]
    except KeyError:
        raise ConfigError(f"spreading_factor must be in 7..12, got {spreading_factor}") from None


def time_on_air(config: LoRaRadioConfig, payload_bytes: int) -> float:
    """Airtime in seconds of a frame carrying ``payload_bytes`` of PHY payload.

    The PHY payload of a LoRaWAN uplink is the application payload plus the
    13 B MAC overhead.
    """
    if payload_bytes < 0:
        raise ValueError("payload_bytes must be >= 0")
    limit = max_app_payload(config.spreading_factor) + MAC_OVERHEAD_BYTES
    if payload_bytes > limit:
        raise FragmentationRequired(payload_bytes, limit, config.spreading_factor)

    sf = config.spreading_factor
    de = 1 if config.low_datarate_optimize else 0
    ih = 0 if config.explicit_header else 1
    crc = 1 if config.crc_enabled else 0
    cr = config.coding_rate - 4

    numerator = 8 * payload_bytes - 4 * sf + 28 + 16 * crc - 20 * ih
    payload_symbols = 8 + max(math.ceil(numerator / (4 * (sf - 2 * de))) * (cr + 4), 0)
    return (config.preamble_symbols + 4.25 + payload_symbols) * config.symbol_time_s


def fragment_payload(total_bytes: int, spreading_factor: int) -> list[int]:
    """Split an application payload into full-size frames plus a remainder."""
    if total_bytes < 1:
        raise ValueError("total_bytes must be >= 1")
    cap = max_app_payload(spreading_factor)
    full, rest = divmod(total_bytes, cap)
    return [cap] * full + ([rest] if rest else [])


def rx_window_durations(config: LoRaRadioConfig, profile: LoRaEnergyProfile) -> tuple[float, float]:
    default = profile.rx_window_symbols * config.symbol_time_s
    rx1 = default if profile.t_rx1_s is None else profile.t_rx1_s
    rx2 = default if profile.t_rx2_s is None else profile.t_rx2_s
    return rx1, rx2


def ack_airtime(config: LoRaRadioConfig) -> float:
    """Airtime of an empty downlink ACK frame (MAC overhead only)."""
    return time_on_air(config, MAC_OVERHEAD_BYTES)


def uplink_state_durations(
    config: LoRaRadioConfig,
    profile: LoRaEnergyProfile,
    payload_bytes: int,
    *,
    confirmed: bool = False,
) -> dict[str, float]:
    """Time spent in transmit / processing / receive for one uplink frame.

    A confirmed uplink keeps RX1 open for a full ACK frame and skips RX2.
    """
    toa = time_on_air(config, payload_bytes + MAC_OVERHEAD_BYTES)
    rx1, rx2 = rx_window_durations(config, profile)
    if confirmed:
        rx1, rx2 = max(rx1, ack_airtime(config)), 0.0
    return {
        "transmit": toa,
        "processing": profile.t_process1_s + profile.t_process2_s,
        "receive": rx1 + rx2,
    }


def uplink_state_energies(config, profile, payload_bytes, *, confirmed=False) -> dict[str, float]:
    d = uplink_state_durations(config, profile, payload_bytes, confirmed=confirmed)
    return {
        "transmit": profile.p_transmit_w * d["transmit"],
        "processing": profile.p_process_w * d["processing"],
        "receive": profile.p_receive_w * d["receive"],
    }


def uplink_energy(
    config: LoRaRadioConfig,
    profile: LoRaEnergyProfile,
    payload_bytes: int,
    *,
    confirmed: bool = False,
) -> float:
    """Energy (J) of one uplink frame carrying ``payload_bytes`` of application data.

    Charges transmit, both processing slots and both receive windows; the MAC
    overhead is added to the payload before computing the airtime.
    """
    return math.fsum(uplink_state_energies(config, profile, payload_bytes, confirmed=confirmed).values())


def payload_energy(config, profile, total_bytes: int, *, confirmed=False) -> float:
    """Energy of delivering ``total_bytes`` after fragmentation at the config's SF."""
    return math.fsum(
        uplink_energy(config, profile, f, confirmed=confirmed)
        for f in fragment_payload(total_bytes, config.spreading_factor)
    )


@dataclass(frozen=True)
class DutyCycleLedger:
    """Per-band airtime bookkeeping with a fixed off-time after each frame.

    After a frame of airtime ``t`` the band stays closed for ``t * (1/d - 1)``,
    so cumulative airtime never exceeds ``d`` times the elapsed time at any
    release boundary.
    """

    duty_fraction: float = 0.01
    origin_s: float = 0.0
    next_free_s: float = 0.0
    on_air_s: float = 0.0
    log: tuple[tuple[float, float], ...] = field(default=(), repr=False)

    def __post_init__(self):
        if not 0 < self.duty_fraction <= 1:
            raise ConfigError(f"duty_fraction must be in (0, 1], got {self.duty_fraction}")

    def off_time(self, airtime_s: float) -> float:
        return airtime_s * (1.0 / self.duty_fraction - 1.0)

    def earliest_start(self, t_request_s: float) -> float:
        return max(t_request_s, self.next_free_s)

    def transmit(self, t_request_s: float, airtime_s: float) -> tuple[float, "DutyCycleLedger"]:
        """Book one frame; returns its start time and the updated ledger."""
        start = self.earliest_start(t_request_s)
        end = start + airtime_s
        return start, replace(
            self,
            next_free_s=end + self.off_time(airtime_s),
            on_air_s=self.on_air_s + airtime_s,
            log=self.log + ((start, airtime_s),),
        )

    def audit(self) -> bool:
        """True iff cumulative airtime <= duty * elapsed at every release boundary."""
        on_air = 0.0
        for start, airtime in self.log:
            on_air += airtime
            release = start + airtime + self.off_time(airtime)
            if on_air > self.duty_fraction * (release - self.origin_s) * (1 + 1e-12):
                return False
        return True


def schedule_fragments(
    fragments: list[int],
    config: LoRaRadioConfig,
    ledger: DutyCycleLedger,
    t_request_s: float = 0.0,
) -> tuple[float, DutyCycleLedger]:
    """Transmit fragments back-to-back under the duty cycle.

    Returns (latency from ``t_request_s`` to the end of the last fragment,
    updated ledger).
    """
    t = t_request_s
    for f in fragments:
        toa = time_on_air(config, f + MAC_OVERHEAD_BYTES)
        start, ledger = ledger.transmit(t, toa)
        t = start + toa
    return t - t_request_s, ledger


def uplink_delivery_latency(
    fragments: list[int],
    config: LoRaRadioConfig,
    ledger: DutyCycleLedger,
    t_request_s: float = 0.0,
) -> float:
    """Seconds from send intent to the end of the last fragment (ledger untouched)."""
    latency, _ = schedule_fragments(fragments, config, ledger, t_request_s)
    return latency


@dataclass(frozen=True)
class DeviceClass:
    """LoRaWAN downlink scheduling class.

    Class A listens only after its own uplinks (``uplink_period_s`` apart),
    class B additionally every ``ping_slot_period_s``, class C continuously.
    """

    kind: str = "A"
    ping_slot_period_s: float | None = None
    uplink_period_s: float | None = None

    def __post_init__(self):
        if self.kind not in ("A", "B", "C"):
            raise ConfigError(f"device class must be A, B or C, got {self.kind!r}")


def downlink_latency_bound(device_class: DeviceClass, elapsed_s: float, receive_delay_s: float = RECEIVE_DELAY1_S) -> float:
    """Worst-case wait until the device can receive a downlink queued now.

    ``elapsed_s`` is the time since the last uplink (class A) or since the
    last ping slot (class B); class C ignores it.
    """
    if device_class.kind == "C":
        return 0.0
    if device_class.kind == "B":
        period = device_class.ping_slot_period_s
        if not period or period <= 0:
            raise ConfigError("class B requires a positive ping_slot_period_s")
        return (period - elapsed_s % period) % period
    if device_class.uplink_period_s is None:
        return math.inf
    return max(device_class.uplink_period_s - elapsed_s, 0.0) + receive_delay_s


def adr_steps(snr_margin_db: float) -> int:
    """Signed number of ADR steps: positive lowers the data-rate cost.

    Margins within the dead band leave the configuration alone; beyond it
    every full 3 dB buys one step.
    """
    excess = abs(snr_margin_db) - ADR_DEADBAND_DB
    if excess < ADR_STEP_DB:
        return 0
    n = int(excess // ADR_STEP_DB)
    return n if snr_margin_db > 0 else -n


def adr_adjust(snr_margin_db: float, current: LoRaRadioConfig) -> LoRaRadioConfig:
    """Move SF and TX power according to the link margin.

    Positive steps lower the SF first, then the TX power; negative steps raise
    the TX power first, then the SF. Both stay inside the EU868 limits.
    """
    steps = adr_steps(snr_margin_db)
    sf, power = current.spreading_factor, current.tx_power_dbm
    while steps > 0:
        if sf > 7:
            sf -= 1
        elif power - ADR_POWER_STEP_DB >= EU868_MIN_TX_POWER_DBM:
            power -= ADR_POWER_STEP_DB
        else:
            break
        steps -= 1
    while steps < 0:
        if power + ADR_POWER_STEP_DB <= EU868_MAX_TX_POWER_DBM:
            power += ADR_POWER_STEP_DB
        elif power < EU868_MAX_TX_POWER_DBM:
            power = EU868_MAX_TX_POWER_DBM
        elif sf < 12:
            sf += 1
        else:
            break
        steps += 1
    if sf == current.spreading_factor and power == current.tx_power_dbm:
        return current
    return replace(current, spreading_factor=sf, tx_power_dbm=power, low_datarate_optimize=None)
