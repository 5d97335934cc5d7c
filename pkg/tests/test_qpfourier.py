"""Shell/strip function algebra: examples with independent oracles, invariants."""

import math

import numpy as np
import pytest

from qpkam import qpfourier as qp
from qpkam.errors import CertifiedStripExceeded, NotMonotone, RealityDefect
from qpkam.qpfourier import (
    Frequency,
    ShellFunction,
    StripDomain,
    StripFunction,
    compose_angle,
    eval_shell,
    invert_angle_map,
    shell_product,
)

FREQ2 = Frequency((1.0, math.sqrt(2.0)))


def random_shell(rng, freq, K, scale=1.0, width=1.0, decay=0.5):
    coeffs = scale * (rng.standard_normal((2 * K + 1,) * freq.n)
                      + 1j * rng.standard_normal((2 * K + 1,) * freq.n))
    coeffs *= np.exp(-decay * qp.k1_norms(K, freq.n))
    f = ShellFunction(freq, coeffs, width)
    return f.symmetrized()[0]


def random_strip(rng, freq, domain, K, J, scale=1.0, decay=0.5):
    shape = (2 * K + 1,) * freq.n + (J + 1,)
    coeffs = scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
    coeffs *= np.exp(-decay * qp.k1_norms(K, freq.n))[..., None]
    coeffs *= 0.5 ** np.arange(J + 1)
    f = StripFunction(freq, domain, coeffs)
    return f.symmetrized()[0]


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def test_eval_constant():
    f = ShellFunction.constant(FREQ2, 2.0)
    assert f.eval(17.3) == pytest.approx(2.0, abs=1e-14)


def test_eval_cosine_at_zero():
    f = ShellFunction.from_modes(FREQ2, {(1, 0): 0.5}, K=1, width=1.0)
    assert f.eval(0.0).real == pytest.approx(1.0, abs=1e-14)


def test_eval_mixed_mode_oracle():
    # direct scalar oracle: f(t) = cos((1+sqrt(2)) t) at t = 1
    f = ShellFunction.from_modes(FREQ2, {(1, 1): 0.5}, K=1, width=1.0)
    expected = math.cos(1.0 + math.sqrt(2.0))   # -0.746920 (frozen from oracle)
    assert expected == pytest.approx(-0.7469196454668814, abs=1e-12)
    assert f.eval(1.0).real == pytest.approx(expected, abs=1e-13)


def test_eval_real_output_and_strip_flag():
    rng = np.random.default_rng(7)
    f = random_shell(rng, FREQ2, K=4, width=0.5)
    vals = f.eval(np.linspace(0, 10, 50))
    assert np.max(np.abs(vals.imag)) < 1e-12
    _, flagged = eval_shell(f, 0.3)
    assert not flagged
    _, flagged = eval_shell(f, 0.3 + 1.0j)
    assert flagged


# ---------------------------------------------------------------------------
# sup_norm
# ---------------------------------------------------------------------------

def test_sup_norm_constant():
    f = ShellFunction.constant(FREQ2, 2.0)
    lo, hi = f.sup_norm(0.7)
    assert lo == pytest.approx(2.0, abs=1e-13)
    assert hi == pytest.approx(2.0, abs=1e-13)


def test_sup_norm_cosine():
    f = ShellFunction.from_modes(FREQ2, {(1, 0): 0.5}, K=1, width=2.0)
    lo, hi = f.sup_norm(0.0)
    assert lo == pytest.approx(1.0, abs=1e-12)
    assert hi == pytest.approx(1.0, abs=1e-12)
    # closed-form weighted sum oracle at rho = 1: pairing gives cosh(1)
    lo1, hi1 = f.sup_norm(1.0)
    assert hi1 == pytest.approx(math.cosh(1.0), rel=1e-12)
    assert lo1 == pytest.approx(math.cosh(1.0), rel=1e-9)
    assert hi1 >= lo1 - 1e-12


def test_sup_norm_upper_dominates_lower():
    rng = np.random.default_rng(11)
    for _ in range(20):
        f = random_shell(rng, FREQ2, K=5, width=0.8)
        rho = rng.uniform(0, 0.8)
        lo, hi = f.sup_norm(rho)
        assert hi >= lo - 1e-12


# ---------------------------------------------------------------------------
# mean value
# ---------------------------------------------------------------------------

def test_mean_value_oscillation_averages_out():
    # f(x,y) = y + cos(omega_1 x) -> [f](y) = y
    dom = StripDomain(1.0, 0.5)
    f = StripFunction.zeros(FREQ2, dom, K=1, J=1)
    f.coeffs[(1, 1, 1)] = dom.s          # y = s*T_1(y/s), k = 0
    f.coeffs[(2, 1, 0)] = 0.5            # k = (1,0)
    f.coeffs[(0, 1, 0)] = 0.5            # k = (-1,0)
    mv = qp.mean_value(f)
    poly = f.mean_poly()
    assert mv[1] == pytest.approx(dom.s)
    assert poly[0] == pytest.approx(0.0, abs=1e-15)
    assert poly[1] == pytest.approx(1.0, rel=1e-12)


def test_mean_value_zero():
    f = StripFunction.zeros(FREQ2, StripDomain(1.0, 0.5), K=2, J=2)
    assert np.allclose(qp.mean_value(f), 0.0)


def test_mean_value_birkhoff_oracle():
    # f(x,y) = (3 + sin(omega_2 x)) y^2 -> [f](y) = 3 y^2
    dom = StripDomain(1.0, 0.5)

    def sampler(theta, y):
        return (3.0 + np.sin(theta[1])) * y**2

    f = StripFunction.from_sampler(sampler, FREQ2, dom, K=2, J=4)
    poly = f.mean_poly()
    assert poly[2] == pytest.approx(3.0, rel=1e-12)

    # long-time Birkhoff average of the sampled formula (independent oracle)
    y0 = 0.3
    T = 1.0e6
    xs = np.linspace(0.0, T, 2_000_001)
    vals = (3.0 + np.sin(math.sqrt(2.0) * xs)) * y0**2
    birkhoff = np.trapezoid(vals, xs) / T
    mean_at_y0 = qp.cheb_eval_rows(qp.mean_value(f).astype(complex), y0 / dom.s).real
    assert mean_at_y0 == pytest.approx(birkhoff, abs=1e-3)


# ---------------------------------------------------------------------------
# compose_angle
# ---------------------------------------------------------------------------

def test_compose_identity_displacement():
    rng = np.random.default_rng(3)
    g = random_shell(rng, FREQ2, K=4, width=1.0)
    f = ShellFunction.zeros(FREQ2, K=4)
    h = compose_angle(g, f)
    assert np.max(np.abs(h.coeffs - g.coeffs)) < 1e-12


def test_compose_constant_g():
    g = ShellFunction.constant(FREQ2, 4.2, K=3, width=2.0)
    rng = np.random.default_rng(4)
    f = random_shell(rng, FREQ2, K=3, scale=0.1)
    h = compose_angle(g, f)
    assert h.mean() == pytest.approx(4.2, abs=1e-12)
    assert h.norm_upper(0.0) == pytest.approx(4.2, abs=1e-10)


def test_compose_translation_by_pi():
    # g = cos(omega_1 t), f = pi: g(t + pi) = -cos on the omega_1 harmonic? No:
    # cos(omega_1 (t + pi)) = cos(omega_1 t + pi) only if omega_1 = 1 -- it is.
    g = ShellFunction.from_modes(FREQ2, {(1, 0): 0.5}, K=1, width=10.0)
    f = ShellFunction.constant(FREQ2, math.pi, K=1, width=10.0)
    h = compose_angle(g, f)
    xs = np.linspace(0, 7, 40)
    oracle = np.cos(xs + math.pi)
    assert np.max(np.abs(h.eval(xs).real - oracle)) < 1e-12


def test_compose_width_exceeded():
    g = ShellFunction.from_modes(FREQ2, {(1, 0): 0.5}, K=1, width=0.2)
    f = ShellFunction.constant(FREQ2, math.pi, K=1, width=10.0)
    with pytest.raises(CertifiedStripExceeded):
        compose_angle(g, f, require_width=0.1)


# ---------------------------------------------------------------------------
# invert_angle_map
# ---------------------------------------------------------------------------

def test_invert_zero():
    h = ShellFunction.zeros(FREQ2, K=3)
    h1 = invert_angle_map(h)
    assert np.max(np.abs(h1.coeffs)) < 1e-13


def test_invert_constant():
    h = ShellFunction.constant(FREQ2, 0.37, K=2, width=1.0)
    h1 = invert_angle_map(h)
    assert h1.mean() == pytest.approx(-0.37, abs=1e-12)


def test_invert_sine_residual():
    # h = 0.1 sin(omega_1 t); oracle is the forward-inverse residual
    h = ShellFunction.from_modes(FREQ2, {(1, 0): -0.05j}, K=8, width=1.0)
    h1 = invert_angle_map(h, K_out=12)
    taus = np.linspace(0, 20, 300)
    t = taus + h1.eval(taus).real
    residual = t + h.eval(t).real - taus
    assert np.max(np.abs(residual)) < 1e-10


def test_invert_not_monotone():
    h = ShellFunction.from_modes(FREQ2, {(1, 0): -0.9j}, K=2, width=1.0)  # 1.8 sin
    with pytest.raises(NotMonotone):
        invert_angle_map(h)


def test_compose_then_invert_round_trip():
    rng = np.random.default_rng(5)
    for _ in range(5):
        h = random_shell(rng, FREQ2, K=3, scale=1.0, width=1.0)
        # |h|_0 <= 0.2 per the invariant; the derivative cap keeps the
        # inverse's spectral tail below the 1e-9 budget at K_out = 24
        h = h * min(0.15 / h.norm_upper(0.0), 0.25 / h.derivative().norm_upper(0.0))
        assert h.norm_upper(0.0) <= 0.2
        h1 = invert_angle_map(h, K_out=24)
        # displacement of the composed map t -> t + h + h1(t + h)
        comp = compose_angle(h1, h, K_out=24) + h
        assert comp.norm_upper(0.0) < 1e-9


# ---------------------------------------------------------------------------
# invariants
# ---------------------------------------------------------------------------

def test_round_trip_grid_recovery():
    rng = np.random.default_rng(12)
    for K in (3, 8, 16):
        f = random_shell(rng, FREQ2, K=K)
        N = 2 * (2 * K + 1)
        g = ShellFunction.from_grid(f.sample(N), FREQ2, K)
        assert np.max(np.abs(g.coeffs - f.coeffs)) < 1e-12


def test_bessel_lemma_check():
    rng = np.random.default_rng(13)
    n = FREQ2.n
    for _ in range(20):
        f = random_shell(rng, FREQ2, K=6, width=0.7)
        r = rng.uniform(0.0, 0.7)
        lhs = float(np.sum(np.abs(f.coeffs) ** 2 * np.exp(2 * r * qp.k1_norms(f.K, n))))
        assert lhs <= 2**n * f.norm_upper(r) ** 2 * (1 + 1e-12)


def test_strip_round_trip():
    rng = np.random.default_rng(14)
    dom = StripDomain(0.8, 0.3)
    f = random_strip(rng, FREQ2, dom, K=5, J=6)
    vals = f.sample()
    g = StripFunction.from_grid(vals, FREQ2, dom, K=5, J=6)
    assert np.max(np.abs(g.coeffs - f.coeffs)) < 1e-12


def test_strip_eval_matches_series():
    rng = np.random.default_rng(15)
    dom = StripDomain(0.8, 0.3)
    f = random_strip(rng, FREQ2, dom, K=4, J=5)
    xs = rng.uniform(0, 10, 20)
    ys = rng.uniform(-0.3, 0.3, 20)
    direct = np.zeros(20, dtype=complex)
    kvecs = qp.mode_vectors(4, 2)
    for idx in range(kvecs.shape[1]):
        k = kvecs[:, idx]
        kw = k @ FREQ2.vec
        row = f.coeffs.reshape(-1, f.J + 1)[idx]
        cheb = np.polynomial.chebyshev.chebval(ys / dom.s, row)
        direct += cheb * np.exp(1j * kw * xs)
    assert np.max(np.abs(f.eval_xy(xs, ys) - direct)) < 1e-11


def test_reality_enforcement_fails_fast():
    coeffs = np.zeros((3, 3), dtype=complex)
    coeffs[2, 1] = 1.0  # k=(1,0) with no conjugate partner
    with pytest.raises(RealityDefect):
        qp.symmetrize(coeffs, 2)


def test_derivative_and_shift():
    f = ShellFunction.from_modes(FREQ2, {(1, 0): 0.5}, K=1, width=1.0)  # cos(t)
    xs = np.linspace(0, 5, 30)
    assert np.max(np.abs(f.derivative().eval(xs).real + np.sin(xs))) < 1e-12
    assert np.max(np.abs(f.shift(0.7).eval(xs).real - np.cos(xs + 0.7))) < 1e-12


def test_shell_product():
    f = ShellFunction.from_modes(FREQ2, {(1, 0): 0.5}, K=1, width=1.0)
    g = ShellFunction.from_modes(FREQ2, {(0, 1): 0.5}, K=1, width=1.0)
    h = shell_product(f, g)
    xs = np.linspace(0, 5, 30)
    oracle = np.cos(xs) * np.cos(math.sqrt(2.0) * xs)
    assert np.max(np.abs(h.eval(xs).real - oracle)) < 1e-12


def test_strip_scale_y_is_theta_composition():
    rng = np.random.default_rng(16)
    dom = StripDomain(0.8, 0.3)
    f = random_strip(rng, FREQ2, dom, K=3, J=4)
    theta = 0.25
    g = f.scale_y(theta)  # g(x, y) = f(x, theta*y) on |y| < s/theta
    xs = rng.uniform(0, 5, 10)
    ys = rng.uniform(-dom.s / theta, dom.s / theta, 10)
    assert np.max(np.abs(g.eval_xy(xs, ys) - f.eval_xy(xs, theta * ys))) < 1e-11


def test_serialization_round_trip():
    from qpkam.serialize import shell_from_dict, shell_to_dict, strip_from_dict, strip_to_dict

    rng = np.random.default_rng(17)
    f = random_shell(rng, FREQ2, K=3, width=0.4)
    g = shell_from_dict(shell_to_dict(f))
    assert np.max(np.abs(g.coeffs - f.coeffs)) == 0.0
    assert g.width == f.width

    dom = StripDomain(0.8, 0.3)
    u = random_strip(rng, FREQ2, dom, K=2, J=3)
    v = strip_from_dict(strip_to_dict(u))
    assert np.max(np.abs(v.coeffs - u.coeffs)) == 0.0
