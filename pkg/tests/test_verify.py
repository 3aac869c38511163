import json

import numpy as np
import pytest

from fattail.kernel import brownian, constant, power_sum
from fattail.moments import InequalityCheck
from fattail.solver import ProfileProblem
from fattail.verify import (TailFit, VerifyConfig, amplitude_error,
                            assemble_report, check_gain_decay, check_pointwise_decay,
                            envelope_fit, fit_tail, fit_zero, tail_window, write_asymptotics_csv,
                            write_report)
from fattail.selftest import power_law


def test_fit_tail_exact_power_law(plaw):
    tf = fit_tail(plaw, (1e2, 1e4), 0.5)
    assert tf.valid
    assert tf.exponent == pytest.approx(-1.5, abs=1e-12)
    assert tf.amplitude == pytest.approx(0.5, rel=1e-12)
    assert tf.residual < 1e-12


def test_fit_tail_in_closure_flagged(plaw):
    tf = fit_tail(plaw, (1e4, 1e6), 0.5)
    assert not tf.valid and "closure" in tf.note


def test_fit_zero_power_law():
    g_lam = 0.4
    p = power_law(0.5)
    q = p.with_values(p.x ** (-1 - g_lam), zero_exponent=1 + g_lam)
    assert fit_zero(q) == pytest.approx(-1.4, abs=1e-12)


def test_tail_window_top_decade(plaw):
    lo, hi = tail_window(plaw)
    assert hi == pytest.approx(1e3) and lo == pytest.approx(1e2)


def test_amplitude_error(plaw):
    assert amplitude_error(plaw, 0.5, (1e2, 1e3)) < 1e-13
    assert amplitude_error(plaw.with_values(1.03 * plaw.values), 0.5, (1e2, 1e3)) == pytest.approx(0.03)


def test_pointwise_decay_power_law(plaw):
    prob = ProfileProblem(constant(), 0.5)
    chk = check_pointwise_decay(prob, plaw)
    # sup over [R, 2R] of R^{1.5} f sits at x = R
    assert chk.passed and chk.C == pytest.approx(0.5, rel=1e-12)
    assert chk.r_star == pytest.approx(1.0)


def test_pointwise_decay_bump_fails(plaw):
    prob = ProfileProblem(constant(), 0.5)
    x = plaw.x
    bump = 1 + 2.0 * np.exp(-((np.log10(x) - 4.0) / 0.1) ** 2)
    chk = check_pointwise_decay(prob, plaw.with_values(plaw.values * bump))
    assert not chk.passed


def test_envelope_fit_pure_power():
    x = np.geomspace(1, 1e3, 20)
    d, res = envelope_fit(x, 3 * x ** -0.4)
    assert d == pytest.approx(0.4, abs=1e-12) and res < 1e-12


def test_gain_decay_power_law_constant_kernel(plaw):
    # I[x^{-1-rho}] is homogeneous of degree 1 - 2 rho, so x^{rho-1} I ~ x^{-rho}
    prob = ProfileProblem(constant(), 0.5)
    gd = check_gain_decay(prob, plaw)
    assert gd.delta == pytest.approx(0.5, abs=1e-10) and gd.passed
    ctrl = check_gain_decay(prob, plaw, linear_control=True)
    assert abs(ctrl.delta) < 1e-12 and not ctrl.passed


def test_gain_decay_on_solution(coarse_constant):
    prob, p, _ = coarse_constant
    cfg = VerifyConfig()
    lo, hi = tail_window(p, cfg)
    gd = check_gain_decay(prob, p, (lo, hi))
    assert gd.regime == "mixed" and gd.predicted == pytest.approx(0.5)
    assert gd.delta > 0
    ctrl = check_gain_decay(prob, p, (lo, hi), linear_control=True)
    assert not ctrl.passed and abs(ctrl.delta) < 0.05


def test_regimes():
    from fattail.verify import _regime
    assert _regime(power_sum(-0.5, -0.2), 0.3) == ("negative", pytest.approx(0.2))
    assert _regime(power_sum(0.1, 0.3), 0.7) == ("positive", pytest.approx(0.3))
    assert _regime(brownian(), 0.6) == ("mixed", pytest.approx(0.6 - 1 / 3))


def test_full_suite_on_power_law(plaw):
    prob = ProfileProblem(constant(), 0.5)
    rep = assemble_report(prob, plaw, laplace=False)
    assert rep.tail_fit.residual < 1e-12 and rep.amplitude_error < 1e-12
    assert all(c.passed for c in rep.inequality_suite)
    assert rep.overall


def _synthetic(monkeypatch, tail_ok, suite_ok, plaw):
    import fattail.verify as v
    good = TailFit(-1.5, 0.5, (1.0, 10.0), 0.0)
    bad = TailFit(-1.3, 0.5, (1.0, 10.0), 0.0)
    monkeypatch.setattr(v, "fit_tail", lambda p, w, rho: good if tail_ok else bad)
    monkeypatch.setattr(v, "run_suite", lambda *a, **k: [
        InequalityCheck("moment:1", 0.1, (1.0,), 1.0, suite_ok)])
    return v.assemble_report(ProfileProblem(constant(), 0.5), plaw, laplace=False)


@pytest.mark.parametrize("tail_ok,suite_ok", [(True, True), (True, False), (False, True)])
def test_report_aggregation(monkeypatch, plaw, tail_ok, suite_ok):
    rep = _synthetic(monkeypatch, tail_ok, suite_ok, plaw)
    assert rep.overall == (tail_ok and suite_ok)


def test_report_json(tmp_path, coarse_constant):
    prob, p, _ = coarse_constant
    rep = assemble_report(prob, p, config_echo={"kernel": {"family": "constant"}})
    path = write_report(rep, tmp_path / "r.json")
    d = json.loads(path.read_text())
    for key in ("tail_fit", "zero_fit", "delta_estimate", "r_star", "inequality_suite",
                "laplace_residual", "overall"):
        assert key in d
    assert d["config"]["kernel"]["family"] == "constant"
    assert d["laplace_residual"] < 1e-3
    csv = write_asymptotics_csv(prob, p, tmp_path / "a.csv")
    assert csv.read_text().splitlines()[0] == "x,x^(1+rho)f,x^(rho-1)I"
