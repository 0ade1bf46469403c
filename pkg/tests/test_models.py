import math
import warnings

import numpy as np
import pytest

from qotto.models import (
    AdiabaticValidityWarning,
    BatteryParams,
    EngineParams,
    build_battery3,
    build_effective2,
    build_engine4,
    effective_hot_temperature,
    effective_hot_temperature_from_rates,
    gibbs_state,
    preset,
    pumping_rate,
    thermal_occupation,
    thermal_rates,
    validity_metric,
)


def _eff(p):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", AdiabaticValidityWarning)
        return build_effective2(p)


def test_thermal_occupation_examples():
    assert thermal_occupation(1.0, 0.0) == 0.0
    assert thermal_occupation(0.37, 0.37 / math.log(2)) == pytest.approx(1.0, rel=1e-12)
    assert thermal_occupation(1.0, 0.5) == pytest.approx(1 / (math.e**2 - 1), rel=1e-12)
    assert thermal_occupation(1.0, 0.5) == pytest.approx(0.1565, abs=1e-4)
    with pytest.raises(ValueError):
        thermal_occupation(0.0, 1.0)


@pytest.mark.parametrize("gap", [0.02, 1.0, 4.0])
@pytest.mark.parametrize("T", [0.01, 0.3, 5.0])
def test_detailed_balance(gap, T):
    up, down = thermal_rates(1e-3, gap, T)
    assert up / down == pytest.approx(math.exp(-gap / T), rel=1e-12)


def test_gibbs_examples():
    assert np.allclose(gibbs_state((0.0, 1.0, 1.02), 0.0), np.diag([1, 0, 0]))
    assert np.allclose(gibbs_state((0.0, 1.0, 1.02), 1e12), np.eye(3) / 3, atol=1e-10)
    w = np.array([1.0, math.exp(-2.0), math.exp(-2.04)])
    assert np.allclose(np.diag(gibbs_state((0.0, 1.0, 1.02), 0.5)).real, w / w.sum(), rtol=1e-12)


def test_battery_channels_zero_T():
    p = preset("fig3")
    model = build_battery3(p)
    rates = {c.name: c.rate for c in model.channels}
    assert len(model.channels) == 4
    assert sorted(rates.values()) == sorted([0.0, 0.0, 1e-4, 1e-9])
    assert p.rates_m == (0.0, 1e-4) and p.rates_i == (0.0, 1e-9)
    assert p.Omega == 1e-6
    bohr = {c.group: c.bohr_energy for c in model.channels}
    assert bohr["m"] == pytest.approx(0.02) and bohr["i"] == 1.0


def test_fig7_thermal_occupation():
    p = preset("fig7")
    n = thermal_occupation(p.omega_m - p.omega_i, p.T)
    assert n == pytest.approx(1 / (math.exp(8) - 1), rel=1e-12)
    assert n == pytest.approx(3.36e-4, rel=2e-3)


def test_engine_model():
    p = preset("fig5").replace(T=0.0)
    assert p.rates_e == (0.0, 1e-9)
    rec = build_engine4(p, "recharge")
    dis = build_engine4(p, "discharge")
    assert len(rec.channels) == 6 and len(rec.drives) == 1
    assert len(dis.drives) == 2
    ext = dis.drive("ext")
    assert ext.frequency == pytest.approx(p.omega_i - p.omega_e)
    assert p.pulse_duration == pytest.approx(math.pi / (2 * p.epsilon))
    q = preset("fig5")
    assert (q.omega_e, q.omega_m, q.gamma0_i, q.gamma0_e) == (0.01, 1.02, 1e-9, 1e-9)


def test_param_validation():
    with pytest.raises(ValueError):
        BatteryParams(omega_m=0.9)
    with pytest.raises(ValueError):
        BatteryParams(Omega=-1.0)
    with pytest.raises(ValueError):
        EngineParams(omega_e=1.5)


def test_pumping_rate_examples():
    assert pumping_rate(0.0, 1e-4, 0.0) == 0.0
    assert pumping_rate(1e-6, 1e-4, 0.0) == pytest.approx(4e-4, rel=1e-12)
    assert pumping_rate(1e-6, 1e-4, 5e-5) == pytest.approx(2e-4, rel=1e-12)


def test_pumping_rate_even_and_decreasing():
    dws = np.linspace(0, 1e-3, 50)
    ps = np.array([pumping_rate(1e-6, 1e-4, d) for d in dws])
    assert np.all(np.diff(ps) < 0)
    assert np.allclose(ps, [pumping_rate(1e-6, 1e-4, -d) for d in dws], rtol=0)


def test_effective_rates():
    p = preset("fig3")
    m = _eff(p)
    assert m.Gamma_i_plus == pytest.approx(4e-8, rel=1e-12)
    assert _eff(p.replace(Omega=0.0)).Gamma_i_plus == 0.0
    q = p.replace(Omega=0.0, T=0.3)
    assert _eff(q).Gamma_i_plus == pytest.approx(q.rates_i[0], rel=1e-12)
    assert m.excited_fraction == pytest.approx(40 / 41, rel=1e-12)
    assert m.level_shift == 0.0
    d = _eff(p.with_detuning(2e-5))
    assert d.level_shift == pytest.approx(d.p * 2e-5)


def test_hot_temperature():
    p = preset("fig3")
    assert effective_hot_temperature(_eff(p)) == pytest.approx(1 / math.log(1e-9 / 4e-8), rel=1e-12)
    assert effective_hot_temperature(_eff(p)) == pytest.approx(-0.271, abs=1e-3)
    q = p.replace(Omega=0.0, T=0.2)
    assert effective_hot_temperature(_eff(q)) == pytest.approx(0.2, rel=1e-10)
    assert effective_hot_temperature_from_rates(1e-9, 1e-9) == math.inf
    with pytest.raises(ValueError):
        effective_hot_temperature_from_rates(1e-9, 0.0)


def test_validity_warning():
    p = preset("fig3").replace(Omega=5e-5)
    assert validity_metric(p) == pytest.approx(0.5)
    with pytest.warns(AdiabaticValidityWarning):
        build_effective2(p)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        build_effective2(preset("fig3"))


def test_desk_preset_keeps_ratios():
    for name in ("fig3", "fig5", "fig6"):
        pa, de = preset(name), preset(name, "desk")
        assert de.p == pytest.approx(pa.p, rel=1e-12)
        assert de.p * de.rates_m[1] / de.rates_i[1] == pytest.approx(pa.p * pa.rates_m[1] / pa.rates_i[1])
        assert validity_metric(de) == pytest.approx(validity_metric(pa))
    with pytest.raises(KeyError):
        preset("nope")
