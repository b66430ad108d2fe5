import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from multirat.errors import ConfigError
from multirat.link import (
    DEMOD_FLOOR_DB,
    EnvironmentClass,
    LinkState,
    lora_budget,
    lora_reachable,
    multirat_reachable,
    nbiot_reachable,
    sample_environment,
)
from multirat.lorawan import LoRaRadioConfig
from multirat.nbiot import CeLevel


def test_lora_examples():
    assert lora_reachable(LinkState(150), LoRaRadioConfig(spreading_factor=12))
    assert not lora_reachable(LinkState(160), LoRaRadioConfig(spreading_factor=12))
    assert not lora_reachable(LinkState(150), LoRaRadioConfig(spreading_factor=7))


def test_sf7_budget_from_floor_table():
    # SX127x floors: SF7 -7.5 dB, SF12 -20 dB, so SF7 loses 12.5 dB.
    assert DEMOD_FLOOR_DB[7] - DEMOD_FLOOR_DB[12] == pytest.approx(12.5)
    assert lora_budget(7) == pytest.approx(143.5)
    assert lora_budget(12) == 156.0
    budgets = [lora_budget(sf) for sf in range(7, 13)]
    assert budgets == sorted(budgets)


def test_nbiot_examples():
    assert nbiot_reachable(LinkState(164))
    assert not nbiot_reachable(LinkState(165))
    link = LinkState(158)
    assert nbiot_reachable(link) and not lora_reachable(link)


def test_rsrp_anchor_and_slope():
    assert LinkState(164).rsrp_dbm == pytest.approx(-141)
    assert LinkState(100).rsrp_dbm - LinkState(101).rsrp_dbm == pytest.approx(1.0)
    assert LinkState.from_rsrp(-90).path_loss_db == pytest.approx(113)


def test_snr_margin_default():
    assert LinkState(113).lora_snr_margin_db == pytest.approx(43)
    assert LinkState(113, lora_snr_margin_db=6).lora_snr_margin_db == 6
    assert LinkState(113, lora_path_loss_db=150).lora_snr_margin_db == pytest.approx(6)


@given(st.floats(0, 200))
def test_union_coverage(pl):
    link = LinkState(pl)
    assert multirat_reachable(link) == (lora_reachable(link) or nbiot_reachable(link))
    if 156 < pl <= 164:
        assert multirat_reachable(link) and not lora_reachable(link)


@given(st.floats(0, 200), st.floats(0, 200), st.integers(7, 12))
def test_reachability_monotone(a, b, sf):
    lo, hi = sorted((a, b))
    cfg = LoRaRadioConfig(spreading_factor=sf)
    if lora_reachable(LinkState(hi), cfg):
        assert lora_reachable(LinkState(lo), cfg)
    if nbiot_reachable(LinkState(hi)):
        assert nbiot_reachable(LinkState(lo))


def test_environment_frequencies():
    rng = np.random.default_rng(5)
    out = sample_environment(EnvironmentClass("outdoor"), rng, size=100_000)
    assert np.mean(out == 0) == pytest.approx(0.93, abs=0.01)
    sub = sample_environment(EnvironmentClass("subterranean"), rng, size=100_000)
    assert np.mean(sub == 1) == pytest.approx(0.27, abs=0.01)
    assert np.mean(sub == 2) == pytest.approx(0.19, abs=0.01)


def test_environment_point_mass_and_determinism():
    env = EnvironmentClass("deep", (0.0, 0.0, 1.0))
    rng = np.random.default_rng(0)
    assert all(sample_environment(env, rng) is CeLevel.CE2 for _ in range(100))
    a = sample_environment(EnvironmentClass("indoor"), np.random.default_rng(3), size=100)
    b = sample_environment(EnvironmentClass("indoor"), np.random.default_rng(3), size=100)
    assert np.array_equal(a, b)


def test_environment_validation():
    with pytest.raises(ConfigError):
        EnvironmentClass("bad", (0.5, 0.5, 0.5))
    with pytest.raises(ConfigError):
        EnvironmentClass("nowhere")
    for name in ("outdoor", "indoor", "subterranean"):
        assert sum(EnvironmentClass(name).probabilities) == pytest.approx(1.0)
