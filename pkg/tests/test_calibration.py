import json

import numpy as np
import pytest

from multirat.calibration import (
    CalibrationSample,
    calibrate,
    crossover_payload,
    fit_nbiot,
    lora_scale_for_crossover,
    read_samples,
    scale_lora_active,
)
from multirat.errors import ConfigError, RankDeficiencyError
from multirat.nbiot import CeLevel, NbIotConfig, StatePower, message_energy
from multirat.profile import data_path, default_profile, dumps, prior_profile
from multirat.sweep import sweep_energy_per_byte

SAMPLES = data_path("nbiot_energy_samples.csv")


@pytest.fixture(scope="module")
def fitted():
    return calibrate(prior_profile(), read_samples(SAMPLES))


def test_paper_samples_level_means_inside_bands(fitted):
    res = fitted.nbiot.residuals
    assert set(res) == set(CeLevel)
    for lv, r in res.items():
        assert r.measured_min_j <= r.mean_predicted_j <= r.measured_max_j, lv
        assert r.mean_predicted_j == pytest.approx(r.mean_measured_j, rel=0.05)
    assert res[CeLevel.CE2].mean_predicted_j <= 4 * res[CeLevel.CE0].mean_predicted_j


def test_fitted_powers_non_negative(fitted):
    assert all(p >= 0 for p in fitted.nbiot.powers.values())


def test_recalibration_reproduces_shipped_default(fitted):
    shipped = json.loads(data_path("default_profile.json").read_text())
    regenerated = json.loads(dumps(fitted.profile))
    assert _close(regenerated, shipped)


def _close(a, b):
    if isinstance(a, dict):
        assert a.keys() == b.keys()
        return all(_close(a[k], b[k]) for k in a)
    if isinstance(a, list):
        return all(_close(x, y) for x, y in zip(a, b))
    if isinstance(a, float):
        assert a == pytest.approx(b, rel=1e-9)
        return True
    assert a == b
    return True


def _synthetic(profile, config, rng, n=60):
    out = []
    for _ in range(n):
        ce = CeLevel(int(rng.integers(0, 3)))
        payload = int(rng.integers(1, 1600))
        e = message_energy(ce, payload, profile, config, include_join=True)
        out.append(CalibrationSample(-100.0, payload, e, ce))
    return out


def test_synthetic_round_trip_within_1pct():
    prior = prior_profile()
    truth = prior.nbiot_energy
    truth = type(truth)(
        StatePower(0.83, truth.search_join.duration_s),
        StatePower(0.41, truth.transmit.duration_s),
        truth.cdrx,
        truth.edrx_ptw,
        truth.psm,
        uplink_rate_bps=truth.uplink_rate_bps,
    )
    samples = _synthetic(truth, prior.nbiot_config, np.random.default_rng(3))
    fit = fit_nbiot(samples, prior.nbiot_energy, prior.nbiot_config)
    assert fit.powers["search_join"] == pytest.approx(0.83, rel=0.01)
    assert fit.powers["transmit"] == pytest.approx(0.41, rel=0.01)
    # Regenerating from the fitted profile reproduces the samples.
    for s in samples:
        again = message_energy(s.ce_level, s.payload_bytes, fit.profile, prior.nbiot_config, include_join=True)
        assert again == pytest.approx(s.measured_energy_j, rel=1e-9)


def test_collinear_samples_raise_rank_deficiency():
    prior = prior_profile()
    samples = [CalibrationSample(-90.0, 5, 6.0 + 0.1 * i, CeLevel.CE0) for i in range(5)]
    with pytest.raises(RankDeficiencyError) as exc:
        fit_nbiot(samples, prior.nbiot_energy, prior.nbiot_config)
    assert sorted(exc.value.unresolvable) == ["search_join", "transmit"]


def test_zero_duration_state_is_unresolvable():
    prior = prior_profile()
    samples = read_samples(SAMPLES)
    with pytest.raises(RankDeficiencyError) as exc:
        fit_nbiot(samples, prior.nbiot_energy, prior.nbiot_config, free_states=("transmit", "psm"))
    assert exc.value.unresolvable == ["psm"]


def test_identical_samples_fit_perfectly():
    prior = prior_profile()
    samples = [CalibrationSample(-90.0, 5, 7.0, CeLevel.CE0)] * 4
    fit = fit_nbiot(samples, prior.nbiot_energy, prior.nbiot_config, free_states=("transmit",))
    assert fit.sum_squared_residual == pytest.approx(0.0, abs=1e-20)
    assert fit.residuals[CeLevel.CE0].rms_residual_j == pytest.approx(0.0, abs=1e-10)


def test_too_few_samples_per_level():
    prior = prior_profile()
    samples = [CalibrationSample(-90.0, 5, 7.0, CeLevel.CE0)] * 2
    with pytest.raises(ConfigError):
        fit_nbiot(samples, prior.nbiot_energy, prior.nbiot_config)


def test_non_positive_energy_rejected():
    with pytest.raises(ConfigError):
        CalibrationSample(-90.0, 5, 0.0)


def test_samples_without_level_use_thresholds():
    s = CalibrationSample(-130.0, 5, 10.0)
    assert s.level(NbIotConfig()) is CeLevel.CE2


def test_lora_scale_is_tight(fitted):
    assert fitted.crossover_bytes <= 240
    nb_only = default_profile()
    base = scale_lora_active(nb_only, 1 / fitted.lora_scale)
    below = scale_lora_active(base, fitted.lora_scale * 0.999)
    assert sweep_energy_per_byte(below).crossover_bytes > 240
    assert lora_scale_for_crossover(base) == pytest.approx(fitted.lora_scale, rel=1e-9)


def test_crossover_definition():
    lora = {1: 5.0, 2: 1.0, 3: 3.0, 4: 4.0}
    nb = {1: 1.0, 2: 2.0, 3: 2.0, 4: 2.0}
    assert crossover_payload(lora.get, nb.get, lora) == 3
    assert crossover_payload(lambda n: 0.0, lambda n: 1.0, range(1, 10)) is None
