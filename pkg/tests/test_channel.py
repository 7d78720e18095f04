import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from timely_ou.channel import (ChannelTooNoisy, CodeConfig, DelayDistribution, delay_distribution,
                               delay_pmf_iir, enhanced_delay, enhanced_saving, kappa,
                               mds_success_probs, original_delay, sample_attempts_fr,
                               simulate_timeline_iir)
from timely_ou.ou import make_rng


def exact_success(ell, n, eps, j):
    """P(Bin(n+j, eps) <= floor((n+j-ell)/2)) in exact rational arithmetic."""
    m = n + j
    e = Fraction(eps).limit_denominator(10**6)
    t = (m - ell) // 2
    return float(sum(math.comb(m, i) * e**i * (1 - e) ** (m - i) for i in range(t + 1)))


def test_success_probs_small_case_by_hand():
    sp = mds_success_probs(CodeConfig(2, 4, 0.05, 0.15), 0.1, 2)
    assert sp.p0 == pytest.approx(0.94770, abs=5e-6)
    assert sp[1] == pytest.approx(0.91854, abs=5e-6)
    assert sp[2] == pytest.approx(0.98415, abs=5e-6)
    # one extra bit without extra correction power lowers the success chance
    assert sp.monotonicity_violations() == [0]


@settings(max_examples=60, deadline=None)
@given(ell=st.integers(1, 8), extra=st.integers(0, 12), eps=st.sampled_from([0.01, 0.1, 0.25, 0.4, 0.49]),
       j=st.integers(0, 40))
def test_success_probs_match_exact_binomial_sum(ell, extra, eps, j):
    n = ell + extra
    sp = mds_success_probs(CodeConfig(ell, n, 0.05, 0.1), eps, j)
    assert sp[j] == pytest.approx(exact_success(ell, n, eps, j), rel=1e-10, abs=1e-15)


def test_success_probs_long_codewords_stay_accurate():
    # deep tails: log-domain recurrence against scipy at thousands of bits
    sp = mds_success_probs(CodeConfig(4, 6, 0.05, 0.1), 0.4, 3000)
    for j in (500, 1500, 3000):
        m = 6 + j
        ref = stats.binom.cdf((m - 4) // 2, m, 0.4)
        assert sp[j] == pytest.approx(ref, rel=1e-9)


@pytest.mark.parametrize("eps", [0.0, 0.5, -0.1, 0.7])
def test_success_probs_reject_bad_epsilon(eps):
    with pytest.raises(ValueError):
        mds_success_probs(CodeConfig(2, 4, 0.05, 0.1), eps, 4)


def test_code_config_validation():
    with pytest.raises(ValueError):
        CodeConfig(5, 4, 0.05, 0.1)
    with pytest.raises(ValueError):
        CodeConfig(0, 4, 0.05, 0.1)
    with pytest.raises(ValueError):
        CodeConfig(2, 4, 0.0, 0.1)
    with pytest.raises(ValueError):
        CodeConfig(2, 4, 0.05, -0.1)
    assert CodeConfig(5, 7, 0.05, 0.15).nbar == pytest.approx(0.5)
    assert CodeConfig(5, 7, 0.05, 0.15).exact_nbar == Fraction(1, 2)


def product_form(sp, cfg, enhanced, k):
    """P(first success at attempt k), written as an explicit product."""
    ratio = Fraction(cfg.beta).limit_denominator(10**9) / Fraction(cfg.Tb).limit_denominator(10**9)
    if not enhanced or ratio < 1:
        bits = list(range(k + 1))
    else:
        bits = [math.floor(i * ratio) for i in range(k + 1)]
    out = sp[bits[-1]]
    for b in bits[:-1]:
        out *= 1 - sp[b]
    return out


@pytest.mark.parametrize("enhanced", [False, True])
@pytest.mark.parametrize("beta", [0.0, 0.02, 0.05, 0.15, 0.37])
def test_delay_pmf_product_form_and_support(enhanced, beta):
    cfg = CodeConfig(3, 5, 0.05, beta)
    sp, dist = delay_distribution(cfg, 0.3, enhanced)
    assert dist.mass_defect <= 1e-12
    assert dist.truncated_mass <= 1e-12
    for k in range(min(12, len(dist.support))):
        assert dist.pmf[k] == pytest.approx(product_form(sp, cfg, enhanced, k), rel=1e-12)
    nbar = cfg.nbar
    if not enhanced:
        step = cfg.Tb + beta
    elif beta < cfg.Tb:
        step = cfg.Tb
    else:
        step = beta
    np.testing.assert_allclose(dist.support, nbar + step * np.arange(len(dist.support)), rtol=1e-12)


def test_delay_distribution_grows_success_table_when_needed():
    cfg = CodeConfig(6, 6, 0.05, 0.2)
    sp, dist = delay_distribution(cfg, 0.45, False, j_start=2)
    assert len(sp) > 2
    assert dist.mass_defect <= 1e-12


def test_delay_pmf_raises_when_table_or_cap_too_short():
    cfg = CodeConfig(6, 6, 0.05, 0.2)
    sp = mds_success_probs(cfg, 0.45, 3)
    with pytest.raises(ChannelTooNoisy):
        delay_pmf_iir(sp, cfg)
    with pytest.raises(ChannelTooNoisy):
        delay_distribution(cfg, 0.45, False, max_support=3)


def test_enhanced_delay_dominated_by_original():
    for beta in (0.02, 0.05, 0.15, 0.4):
        cfg = CodeConfig(4, 6, 0.05, beta)
        _, e = delay_distribution(cfg, 0.35, True)
        _, o = delay_distribution(cfg, 0.35, False)
        for y in np.union1d(e.support, o.support):
            assert e.pmf[e.support <= y].sum() >= o.pmf[o.support <= y].sum() - 1e-12
        assert e.mean() <= o.mean()


def test_distribution_helpers():
    d = DelayDistribution(np.array([1.0, 2.0]), np.array([0.25, 0.75]), 0.0)
    assert d.mean() == pytest.approx(1.75)
    assert d.laplace(0.5) == pytest.approx(0.25 * math.exp(-0.5) + 0.75 * math.exp(-1.0))
    pm = DelayDistribution.point_mass(0.3)
    assert pm.minimum == 0.3 and pm.mass_defect == 0.0
    draws = d.sample(make_rng(0), 20_000)
    assert set(np.unique(draws)) <= {1.0, 2.0}
    assert np.mean(draws == 2.0) == pytest.approx(0.75, abs=0.02)
    with pytest.raises(ValueError):
        DelayDistribution(np.array([2.0, 1.0]), np.array([0.5, 0.5]), 0.0)
    with pytest.raises(ValueError):
        DelayDistribution(np.array([1.0]), np.array([-0.1]), 0.0)


# --- exact delay-saving arithmetic and the event timeline


def test_kappa_examples():
    cfg = CodeConfig(2, 4, 0.05, 0.1)  # beta/Tb = 2
    assert [kappa(r, cfg) for r in range(6)] == [0, 1, 1, 2, 2, 3]
    cfg = CodeConfig(2, 4, 0.05, 0.185)  # beta/Tb = 3.7
    assert kappa(4, cfg) == 2 and kappa(8, cfg) == 3
    with pytest.raises(ValueError):
        kappa(-1, cfg)


@pytest.mark.parametrize("ratio", [Fraction(1, 5), Fraction(1, 2), Fraction(1), Fraction(3, 2),
                                   Fraction(2), Fraction(37, 10)])
def test_timeline_matches_delay_formulas_exactly(ratio):
    cfg = CodeConfig(5, 7, 0.05, float(ratio * Fraction(1, 20)))
    for r in range(0, 30):
        e = simulate_timeline_iir(cfg, True, r=r)
        o = simulate_timeline_iir(cfg, False, r=r)
        assert e.delay == enhanced_delay(r, cfg)
        assert o.delay == original_delay(r, cfg)
        assert o.delay - e.delay == enhanced_saving(r, cfg)
        assert e.ir_bits >= r and o.ir_bits == r


def test_timeline_event_log_is_ordered():
    cfg = CodeConfig(3, 5, 0.05, 0.12)
    tl = simulate_timeline_iir(cfg, True, r=7)
    times = [t for t, _, _ in tl.events]
    assert times == sorted(times)
    assert tl.events[-1][1] == "ack"
    starts = [t for t, kind, _ in tl.events if kind == "decode_start"]
    # processing periods never overlap
    assert all(b - a >= Fraction(cfg.beta).limit_denominator(10**9) for a, b in zip(starts, starts[1:]))


def test_timeline_argument_checks():
    cfg = CodeConfig(3, 5, 0.05, 0.12)
    with pytest.raises(ValueError):
        simulate_timeline_iir(cfg, True)
    with pytest.raises(ValueError):
        simulate_timeline_iir(cfg, True, r=1, sp=mds_success_probs(cfg, 0.1, 5))
    with pytest.raises(ValueError):
        simulate_timeline_iir(cfg, True, sp=mds_success_probs(cfg, 0.1, 5))


@pytest.mark.parametrize("enhanced,beta", [(False, 0.15), (True, 0.02), (True, 0.15), (True, 0.185)])
def test_random_timeline_follows_delay_pmf(enhanced, beta):
    cfg = CodeConfig(3, 4, 0.05, beta)
    sp, dist = delay_distribution(cfg, 0.3, enhanced)
    rng = make_rng(123)
    draws = np.array([simulate_timeline_iir(cfg, enhanced, sp=sp, rng=rng).delay_float
                      for _ in range(20_000)])
    idx = np.searchsorted(dist.support, draws - 1e-9)
    assert np.allclose(dist.support[idx], draws)
    # merge the tail so every expected count is at least 5
    exp = dist.weights * len(draws)
    cut = int(np.searchsorted(np.cumsum(exp[::-1])[::-1] < 5, True))
    cut = max(cut, 2)
    obs = np.bincount(np.minimum(idx, cut - 1), minlength=cut)
    e = np.concatenate([exp[:cut - 1], [exp[cut - 1:].sum()]])
    assert stats.chisquare(obs, e).pvalue > 1e-3


def test_fr_attempts_geometric():
    a = sample_attempts_fr(0.3, make_rng(4), 200_000)
    assert a.min() >= 1
    assert a.mean() == pytest.approx(1 / 0.3, rel=0.01)
    with pytest.raises(ValueError):
        sample_attempts_fr(0.0, make_rng(4))
