"""Acceptance checks, one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the verdict lines.
"""

import json
import numpy as np
import pytest

from multirat.calibration import CalibrationSample, fit_nbiot
from multirat.link import EnvironmentClass, LinkState, sample_environment
from multirat.lorawan import DutyCycleLedger, LoRaRadioConfig, fragment_payload, time_on_air, uplink_delivery_latency
from multirat.nbiot import CeLevel, StatePower, audit_trace, default_latency_model, message_energy, uplink_latency_sample
from multirat.policy import MessageRequest, NodeState, plan_message
from multirat.profile import data_path, default_profile, prior_profile
from multirat.simulator import battery_lifetime, compare_modes, load_scenario, parse_scenario, run
from multirat.errors import NoFeasiblePlan
from multirat.sweep import sweep_energy_per_byte

PROFILE = default_profile()


def verdict(capsys, tag, ok, detail):
    with capsys.disabled():
        print(f"\n[{tag}] {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, detail


def within(x, target, rel):
    return abs(x - target) <= rel * target


def test_c1_time_on_air_endpoints(capsys):
    sf7 = time_on_air(LoRaRadioConfig(spreading_factor=7), 1)
    sf12 = time_on_air(LoRaRadioConfig(spreading_factor=12), 51)
    ok = within(sf7, 0.025, 0.10) and within(sf12, 2.5, 0.10)
    verdict(capsys, "C1", ok, f"ToA SF7/1 B = {sf7 * 1e3:.2f} ms (25 ms +-10%), SF12/51 B = {sf12:.3f} s (2.5 s +-10%)")


def test_c2_fragmentation(capsys):
    n = len(fragment_payload(1600, 12))
    verdict(capsys, "C2", n == 32, f"1600 B at SF12 -> {n} fragments (expected 32)")


def test_c3_crossover(capsys):
    table = sweep_energy_per_byte(PROFILE)
    cross = table.crossover_bytes
    lora, nb = table.column("lora_sf12"), table.column("nbiot_ce2")
    ratio_1600 = lora[-1] / nb[-1]
    # Advantage measured on the full-frame envelope, where fragment sawtooth cancels.
    full = [lora[n - 1] / nb[n - 1] for n in range(51, 1601, 51) if cross is not None and n >= cross]
    grows = len(full) > 1 and all(b > a for a, b in zip(full, full[1:]))
    ok = cross is not None and within(cross, 240, 0.15) and grows and 4 <= ratio_1600 <= 7
    verdict(
        capsys,
        "C3",
        ok,
        f"crossover = {cross} B (240 B +-15%), advantage grows on full frames = {grows}, "
        f"ratio at 1600 B = {ratio_1600:.2f} (in [4, 7])",
    )


def test_c4_nbiot_energy_bands(capsys):
    p, cfg = PROFILE.nbiot_energy, PROFILE.nbiot_config
    # Field points are cold starts, so registration is included.
    ce0 = message_energy(CeLevel.CE0, 5, p, cfg, include_join=True)
    ce2 = message_energy(CeLevel.CE2, 5, p, cfg, include_join=True)
    ok = 4.2 <= ce0 <= 8.2 and 7.9 <= ce2 <= 20.2 and ce2 <= 4 * ce0
    verdict(capsys, "C4", ok, f"5 B energy CE0 = {ce0:.2f} J in [4.2, 8.2], CE2 = {ce2:.2f} J in [7.9, 20.2], CE2/CE0 = {ce2 / ce0:.2f} <= 4")


def test_c5_nbiot_latency(capsys):
    model = default_latency_model()
    rng = np.random.default_rng(2024)
    draws = {ce: uplink_latency_sample(ce, model, rng, size=100_000) for ce in CeLevel}
    medians = {ce: float(np.median(x)) for ce, x in draws.items()}
    targets = {CeLevel.CE0: 0.859, CeLevel.CE1: 1.117, CeLevel.CE2: 1.915}
    med_ok = all(within(medians[ce], targets[ce], 0.05) for ce in CeLevel)
    under10 = {ce: float(np.mean(draws[ce] <= 10.0)) for ce in (CeLevel.CE0, CeLevel.CE1)}
    tail = float(draws[CeLevel.CE2].max())
    ok = med_ok and all(v >= 0.99 for v in under10.values()) and 15.0 <= tail <= 25.0
    verdict(
        capsys,
        "C5",
        ok,
        "medians " + " / ".join(f"{medians[ce]:.3f}" for ce in CeLevel) + " s (0.859 / 1.117 / 1.915 +-5%), "
        f"P(<=10 s) CE0 = {under10[CeLevel.CE0]:.4f}, CE1 = {under10[CeLevel.CE1]:.4f}, CE2 max = {tail:.1f} s (~20 s)",
    )


@pytest.fixture(scope="module")
def smart_city():
    scenario = load_scenario(data_path("smart_city.json"))
    return scenario, compare_modes(scenario)


def test_c6_smart_city(capsys, smart_city):
    _, out = smart_city
    multi = out["reports"]["multirat"]["weekly_transmit_energy_j"]
    nb_ratio = out["ratios"]["nbiot_only_over_multirat"]
    lora_ratio = out["ratios"]["lora_only_over_multirat"]
    checks = {
        "multirat": within(multi, 23, 0.25),
        "nbiot_only": within(nb_ratio, 15, 0.25),
        "lora_only": within(lora_ratio, 4, 0.25),
    }
    failed = [k for k, v in checks.items() if not v]
    verdict(
        capsys,
        "C6",
        not failed,
        f"multirat = {multi:.2f} J/week (23 +-25%), nbiot_only/multirat = {nb_ratio:.2f} (15 +-25%), "
        f"lora_only/multirat = {lora_ratio:.3f} (4 +-25%)" + (f"; failing: {', '.join(failed)}" if failed else ""),
    )


def test_c7_battery(capsys, smart_city):
    _, out = smart_city
    report = out["reports"]["multirat"]
    years = battery_lifetime(report, 33_300)
    verdict(capsys, "C7", 25 <= years <= 32, f"33300 J at {report['weekly_transmit_energy_j']:.2f} J/week -> {years:.1f} years (in [25, 32])")


def test_c8_duty_cycle_latency(capsys):
    cfg = LoRaRadioConfig(spreading_factor=12)
    latency = uplink_delivery_latency(fragment_payload(1600, 12), cfg, DutyCycleLedger(0.01))
    ok = 42 * 60 <= latency <= 68 * 3600
    verdict(capsys, "C8", ok, f"1600 B at SF12, 1% duty -> {latency:.0f} s = {latency / 3600:.2f} h (in [42 min, 68 h])")


def _random_scenarios(n, rng):
    base = json.loads(data_path("smart_city.json").read_text())
    for i in range(n):
        yield dict(
            base,
            duration_s=float(rng.uniform(3600, 86_400)),
            seed=i,
            mode=str(rng.choice(["multirat", "lora_only", "nbiot_only"])),
            link={"path_loss_db": float(rng.uniform(100, 165))},
            traffic=[
                {"kind": "periodic", "name": "p", "interval_s": float(rng.uniform(20, 3600)), "payload_bytes": int(rng.integers(1, 400))},
                {"kind": "event", "name": "e", "rate_per_week": float(rng.uniform(0, 300)), "payload_bytes": int(rng.integers(1, 1600))},
            ],
        )


def _scale_invariance(rng, trials=300):
    for _ in range(trials):
        msg = MessageRequest("m", int(rng.integers(1, 1601)), None)
        link = LinkState(float(rng.uniform(80, 170)), lora_path_loss_db=float(rng.uniform(80, 170)))
        k = float(10 ** rng.uniform(-3, 3))
        try:
            base = plan_message(msg, NodeState(link), PROFILE)
        except NoFeasiblePlan:
            try:
                plan_message(msg, NodeState(link), PROFILE.scaled(k))
            except NoFeasiblePlan:
                continue
            return False
        scaled = plan_message(msg, NodeState(link), PROFILE.scaled(k))
        if (scaled.technology, scaled.parameter) != (base.technology, base.parameter):
            return False
    return True


def _calibration_round_trip(rng):
    prior = prior_profile()
    cfg = prior.nbiot_config
    t = prior.nbiot_energy
    truth = type(t)(StatePower(0.71, t.search_join.duration_s), StatePower(0.37, t.transmit.duration_s), t.cdrx, t.edrx_ptw, t.psm, uplink_rate_bps=t.uplink_rate_bps)
    samples = []
    for _ in range(90):
        ce = CeLevel(int(rng.integers(0, 3)))
        n = int(rng.integers(1, 1601))
        samples.append(CalibrationSample(-100.0, n, message_energy(ce, n, truth, cfg, include_join=True), ce))
    fit = fit_nbiot(samples, prior.nbiot_energy, cfg)
    return within(fit.powers["search_join"], 0.71, 0.01) and within(fit.powers["transmit"], 0.37, 0.01)


def test_c9_properties(capsys):
    rng = np.random.default_rng(9)
    duty_ok = order_ok = True
    for doc in _random_scenarios(1000, rng):
        audits = run(parse_scenario(doc, profile=PROFILE))["audits"]
        duty_ok &= audits["duty_cycle"]
        order_ok &= audits["state_order"]

    scenario = load_scenario(data_path("smart_city.json"))
    a, b = run(scenario, 11), run(scenario, 11)
    determinism = a.to_json() == b.to_json() and a.trace_csv() == b.trace_csv()

    scale_ok = _scale_invariance(rng)
    calib_ok = _calibration_round_trip(rng)

    env_rng = np.random.default_rng(10)
    outdoor = sample_environment(EnvironmentClass("outdoor"), env_rng, size=100_000)
    sub = sample_environment(EnvironmentClass("subterranean"), env_rng, size=100_000)
    freqs = (float(np.mean(outdoor == 0)), float(np.mean(sub == 1)), float(np.mean(sub == 2)))
    env_ok = all(abs(f - t) <= 0.01 for f, t in zip(freqs, (0.93, 0.27, 0.19)))

    parts = {
        "duty audit (10^3 scenarios)": duty_ok,
        "scale invariance": scale_ok,
        "state order": order_ok and audit_trace(["detached", "search_join", "send", "cdrx", "edrx", "psm"]),
        "seed determinism": determinism,
        "calibration round trip": calib_ok,
        "environment frequencies": env_ok,
    }
    detail = ", ".join(f"{k}={'ok' if v else 'FAIL'}" for k, v in parts.items())
    detail += f" (outdoor CE0 {freqs[0]:.3f}, subterranean CE1/CE2 {freqs[1]:.3f}/{freqs[2]:.3f})"
    verdict(capsys, "C9", all(parts.values()), detail)
