"""Diophantine certification: exhaustive oracles, measure experiment, divisor sums."""

import math

import numpy as np
import pytest

from qpkam.diophantine import (
    DivisorTable,
    RejectionReport,
    admissible_mask,
    certify_frequency,
    certify_rotation,
    divisor_sum_bound_check,
    sample_admissible,
)
from qpkam.errors import NoneAdmissible, ResonantFrequency

SQRT2 = math.sqrt(2.0)
GOLDEN = (1.0 + math.sqrt(5.0)) / 2.0


# ---------------------------------------------------------------------------
# certify_frequency
# ---------------------------------------------------------------------------

def test_certify_golden_against_bruteforce():
    K, sigma0 = 10, 2.0
    freq = certify_frequency((1.0, GOLDEN), K, sigma0)
    # exhaustive lattice enumeration oracle (plain double loop)
    best = math.inf
    for k1 in range(-K, K + 1):
        for k2 in range(-K, K + 1):
            if k1 == k2 == 0:
                continue
            val = abs(k1 + k2 * GOLDEN) * (abs(k1) + abs(k2)) ** sigma0
            best = min(best, val)
    assert freq.c == pytest.approx(best, rel=1e-14)
    assert freq.cutoff == K


def test_certify_resonant():
    with pytest.raises(ResonantFrequency) as exc:
        certify_frequency((1.0, 2.0), K=2)
    assert abs(exc.value.k[0]) == 2 and abs(exc.value.k[1]) == 1


def test_certify_one_dim():
    freq = certify_frequency((1.0,), K=7, sigma0=0.0)
    assert freq.c == pytest.approx(1.0)


def test_certify_monotone_in_K():
    cs = [certify_frequency((1.0, SQRT2), K, 2.0).c for K in (5, 10, 20, 30)]
    for a, b in zip(cs, cs[1:]):
        assert b <= a + 1e-15


# ---------------------------------------------------------------------------
# certify_rotation
# ---------------------------------------------------------------------------

FREQ = certify_frequency((1.0, SQRT2), 40, 2.0)


def test_rotation_interval_rejection():
    rep = certify_rotation(0.3999, FREQ, gamma=1e-3, tau=3.0, interval=(0.4, 1.2), K=10)
    assert isinstance(rep, RejectionReport)
    assert rep.reason == "interval"


def test_rotation_exact_resonance():
    # alpha = 2*pi: <(1,0),omega>*alpha/(2*pi) = 1 exactly
    rep = certify_rotation(2 * math.pi, FREQ, gamma=1e-3, tau=3.0,
                           interval=(0.0, 10.0), K=10)
    assert isinstance(rep, RejectionReport)
    assert rep.reason == "divisor"
    assert tuple(abs(v) for v in rep.k) in {(1, 0), (0, 1)} or rep.margin < 1e-10
    assert rep.margin < 1e-10


def test_rotation_scan_against_mpmath_oracle():
    mp = pytest.importorskip("mpmath")
    mp.mp.dps = 50
    gamma, tau, K = 1e-3, 3.0, 30
    interval = (0.4, 1.2)
    om_hi = [mp.mpf(1), mp.sqrt(2)]
    for alpha in (0.7, 0.55, 0.9331, 1.05):
        got = certify_rotation(alpha, FREQ, gamma, tau, interval, K)
        # independent high-precision scan
        ok = True
        a_hi = mp.mpf(alpha)
        for k1 in range(-K, K + 1):
            for k2 in range(-K, K + 1):
                if k1 == k2 == 0:
                    continue
                x = (k1 * om_hi[0] + k2 * om_hi[1]) * a_hi / (2 * mp.pi)
                dist = abs(x - mp.nint(x))
                if dist < mp.mpf(gamma) / (abs(k1) + abs(k2)) ** tau:
                    ok = False
                    break
            if not ok:
                break
        assert bool(got) == ok


def test_sample_admissible_monotone_and_fraction():
    gammas = [1e-1, 1e-2, 1e-3]
    fractions = []
    for g in gammas:
        try:
            res = sample_admissible(FREQ, g, 3.0, (0.4, 1.2), K=30, count=1000, seed=42)
            fractions.append(res.fraction)
        except NoneAdmissible:
            fractions.append(0.0)
    assert fractions == sorted(fractions)          # nondecreasing as gamma decreases
    assert fractions[-1] >= 0.9


def test_sample_monotone_on_fixed_set():
    # same alphas certified under nested gamma conditions: exact monotonicity
    rng = np.random.default_rng(7)
    g_max = 1e-1
    pad = g_max / 12.0**3
    alphas = rng.uniform(0.4 + pad, 1.2 - pad, 400)
    fracs = []
    for g in (1e-1, 3e-2, 1e-2, 1e-3):
        mask = admissible_mask(alphas, FREQ, g, 3.0, (0.4, 1.2), K=30)
        fracs.append(mask.mean())
    assert fracs == sorted(fracs)


def test_none_admissible():
    with pytest.raises(NoneAdmissible):
        sample_admissible(FREQ, 0.49, 3.0, (0.4, 1.2), K=30, count=50, seed=1)


# ---------------------------------------------------------------------------
# divisor sums
# ---------------------------------------------------------------------------

def certified_alpha(gamma=1e-3, tau=3.0, K=30, seed=3):
    return sample_admissible(FREQ, gamma, tau, (0.4, 1.2), K, 50, seed).accepted[0]


def test_divisor_sum_small_case():
    # n = 1, m = 1: two lattice points k = +-1, lhs = 2/d^2, rhs = (81/8)/gamma^2
    freq1 = certify_frequency((1.0,), K=5, sigma0=1.01)
    # certify an alpha for omega = (1,); tau > n = 1
    res = sample_admissible(freq1, 0.05, 1.5, (0.4, 1.2), K=5, count=200, seed=0)
    alpha = res.accepted[0]
    d = abs(np.exp(1j * 1.0 * alpha.alpha) - 1.0)
    rep = divisor_sum_bound_check(freq1, alpha, 1)
    assert rep.lhs == pytest.approx(2.0 / d**2, rel=1e-12)
    assert rep.rhs == pytest.approx(81.0 / 8.0 / 0.05**2, rel=1e-12)
    assert rep.passed


def test_divisor_sum_bound_certified():
    alpha = certified_alpha()
    for m in (5, 10, 20):
        rep = divisor_sum_bound_check(FREQ, alpha, m)
        assert rep.passed, f"m={m}: lhs={rep.lhs:.3e} rhs={rep.rhs:.3e}"


def test_divisor_sum_monotone_in_m():
    alpha = certified_alpha(seed=9)
    lhs = [divisor_sum_bound_check(FREQ, alpha, m).lhs for m in range(1, 15)]
    for a, b in zip(lhs, lhs[1:]):
        assert b >= a


def test_divisor_lower_bound_pi_dist():
    # |e^{i phi} - 1| >= pi * dist(phi/(2 pi), Z) for every stored divisor
    alpha = certified_alpha(seed=11)
    table = DivisorTable.build(alpha, 20)
    kw = table.kvecs.T @ FREQ.vec
    x = kw * alpha.alpha / (2 * math.pi)
    dist = np.abs(x - np.round(x))
    assert np.all(table.divisors >= math.pi * dist - 1e-14)
    assert table.min_divisor() > 0


def test_quantified_divisor_bound_over_random_certified():
    # Eq.-(4.3)-style property over random certified rotation numbers
    res = sample_admissible(FREQ, 5e-3, 2.5, (0.4, 1.2), K=25, count=100, seed=21)
    rng = np.random.default_rng(0)
    picks = rng.choice(len(res.accepted), size=min(10, len(res.accepted)), replace=False)
    for i in picks:
        alpha = res.accepted[int(i)]
        for m in (3, 10, 25):
            assert divisor_sum_bound_check(FREQ, alpha, m).passed


def test_running_certificates_partial_scans():
    from qpkam.diophantine import running_certificates

    parts = running_certificates((1.0, GOLDEN), 10, 2.0)
    cs = [c for _, c in parts]
    for a, b in zip(cs, cs[1:]):
        assert b <= a + 1e-15
    full = certify_frequency((1.0, GOLDEN), 10, 2.0)
    assert cs[-1] == pytest.approx(full.c, rel=1e-14)
