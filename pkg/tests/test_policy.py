import numpy as np
import pytest

from timely_ou.channel import CodeConfig, DelayDistribution, delay_distribution, mds_success_probs
from timely_ou.ou import OUParams
from timely_ou.penalty import CustomPenalty, MMSEPenalty
from timely_ou.policy import (FRPolicy, brute_force_threshold, fr_epoch_terms, fr_mmse,
                              fr_optimal_delta, fr_ratio, fr_zero_wait_check, iir_auxiliary,
                              iir_ratio, iir_waiting_closed_form, solve_iir)

DEFAULT = OUParams(0.01, 1.0)
DEFAULT_CODE = CodeConfig(5, 7, 0.05, 0.15)


def test_default_configuration_values():
    _, law = delay_distribution(DEFAULT_CODE, 0.1, True)
    pol = solve_iir(MMSEPenalty(DEFAULT, 5), law)
    assert pol.lambda_star == pytest.approx(0.83099, abs=1e-5)
    p0 = mds_success_probs(DEFAULT_CODE, 0.1, 0).p0
    assert fr_mmse(DEFAULT, DEFAULT_CODE, p0, fr_optimal_delta(DEFAULT_CODE)) == pytest.approx(0.77898, abs=1e-5)


def test_gap_changes_sign_at_the_root():
    _, law = delay_distribution(CodeConfig(2, 2, 0.05, 1.0), 0.45, False)
    g = MMSEPenalty(OUParams(0.05, 1.0), 2)
    pol = solve_iir(g, law)
    scale = g.c
    assert abs(iir_auxiliary(pol.lambda_star, g, law)) < 1e-7 * scale
    assert iir_auxiliary(pol.lambda_star * 0.99, g, law) > 0
    assert iir_auxiliary(pol.lambda_star * 1.01, g, law) < 0
    assert pol.ratio() == pytest.approx(pol.lambda_star, rel=1e-8)
    # waiting is optimal here and follows the threshold rule
    assert pol.wait(law.minimum) > 0
    np.testing.assert_allclose(pol.wait(law.support), iir_waiting_closed_form(law.support, pol.lambda_star,
                                                                              OUParams(0.05, 1.0), 2, law))


@pytest.mark.parametrize("code,eps,enh,theta", [
    (CodeConfig(2, 2, 0.05, 1.0), 0.45, False, 0.05),
    (CodeConfig(4, 5, 0.05, 0.5), 0.3, False, 0.5),
    (CodeConfig(5, 7, 0.05, 0.15), 0.1, True, 0.01),
])
def test_bisection_matches_brute_force(code, eps, enh, theta):
    _, law = delay_distribution(code, eps, enh)
    g = MMSEPenalty(OUParams(theta, 1.0), code.ell)
    pol = solve_iir(g, law)
    span = max(4 * (pol.threshold - law.minimum), 1.0)
    best, T = brute_force_threshold(g, law, span)
    assert best == pytest.approx(pol.lambda_star, rel=1e-6)
    assert best >= pol.lambda_star * (1 - 1e-9)


def test_custom_convex_penalty_policy():
    _, law = delay_distribution(CodeConfig(2, 3, 0.05, 0.3), 0.3, False)
    g = CustomPenalty(lambda a: a * a)
    pol = solve_iir(g, law)
    assert pol.threshold is None
    best, _ = brute_force_threshold(g, law, span=3.0, points=300)
    assert best == pytest.approx(pol.lambda_star, rel=1e-6)
    assert np.any(np.atleast_1d(pol.wait(law.support)) > 0)


def test_point_mass_delay_zero_wait_renewal():
    law = DelayDistribution.point_mass(0.4)
    g = MMSEPenalty(OUParams(0.3, 1.0), 2)
    pol = solve_iir(g, law)
    assert pol.wait(0.4) == 0.0
    assert pol.lambda_star == pytest.approx(g.area(0.4, 0.4) / 0.4, rel=1e-8)
    assert iir_ratio(g, law, [0.0]) == pytest.approx(g.area(0.4, 0.4) / 0.4)


def test_policy_csv(tmp_path):
    _, law = delay_distribution(DEFAULT_CODE, 0.1, True)
    pol = solve_iir(MMSEPenalty(DEFAULT, 5), law)
    pol.write_csv(tmp_path / "w.csv")
    lines = (tmp_path / "w.csv").read_text().splitlines()
    assert lines[0] == "ybar,wait" and len(lines) == len(law.support) + 1


def test_closed_form_wait_rejects_lambda_above_c():
    with pytest.raises(ValueError):
        iir_waiting_closed_form(0.5, 60.0, DEFAULT, 5, DelayDistribution.point_mass(0.5))


# --- FR


def test_fr_closed_form_matches_epoch_sum():
    params = OUParams(0.25, 1.0)
    for beta in (0.05, 0.15, 0.6):
        code = CodeConfig(4, 6, 0.05, beta)
        p0 = mds_success_probs(code, 0.2, 0).p0
        g = MMSEPenalty(params, 4)
        custom = CustomPenalty(g.evaluate, supremum=g.c)
        for delta in (fr_optimal_delta(code), beta):
            K = code.n * code.Tb + delta
            closed = fr_mmse(params, code, p0, delta)
            assert fr_ratio(g, code.nbar, p0, 0.0, K) == pytest.approx(closed, rel=1e-12)
            assert fr_ratio(custom, code.nbar, p0, 0.0, K) == pytest.approx(closed, rel=1e-8)


def test_fr_deterministic_channel():
    params = OUParams(0.25, 1.0)
    code = CodeConfig(4, 6, 0.05, 0.15)
    g = MMSEPenalty(params, 4)
    num, den = fr_epoch_terms(g, code.nbar, 1.0, 0.0, code.nbar)
    assert den == pytest.approx(code.nbar)
    assert num == pytest.approx(g.area(code.nbar, code.nbar))


def test_fr_mmse_saturates_below_just_in_time_offset():
    params = OUParams(0.25, 1.0)
    code = CodeConfig(2, 4, 0.05, 0.5)
    dstar = fr_optimal_delta(code)
    assert dstar == pytest.approx(0.3)
    assert fr_mmse(params, code, 0.9, dstar / 2) == params.steady_state_variance
    assert fr_mmse(params, code, 0.9, dstar) < fr_mmse(params, code, 0.9, code.beta)
    with pytest.raises(ValueError):
        fr_mmse(params, code, 0.0, dstar)
    with pytest.raises(ValueError):
        fr_mmse(params, code, 0.5, code.beta + 0.1)


def test_fr_policy_objects():
    code = CodeConfig(2, 4, 0.05, 0.5)
    assert FRPolicy.original(code).delta == 0.5
    assert FRPolicy.just_in_time(code).period == pytest.approx(0.5)
    assert fr_optimal_delta(CodeConfig(2, 4, 0.05, 0.1)) == 0.0
    with pytest.raises(ValueError):
        FRPolicy(0.6, code)


def test_zero_wait_check():
    code = CodeConfig(3, 5, 0.05, 0.15)
    g = MMSEPenalty(OUParams(0.25, 1.0), 3)
    assert fr_zero_wait_check(g, code, 0.8, np.linspace(0, 2, 200)) == 0.0
    with pytest.raises(ValueError):
        fr_zero_wait_check(g, code, 0.8, np.linspace(0.1, 2, 200))
