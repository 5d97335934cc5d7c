"""Analytic smoothing of finitely differentiable quasi-periodic data.

The operator h -> h_delta multiplies shell Fourier coefficients by a C-infinity
low-pass symbol equal to 1 for |k|_1 <= 1/(2 delta) and 0 for |k|_1 >= 1/delta;
this is convolution with a kernel whose transform is that symbol (the flat
mollifier realization).  The Chebyshev index plays the role of the y-frequency
and is filtered by the same symbol.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import QTooLarge, SamplerNotFinite
from .qpfourier import (
    Frequency,
    ShellFunction,
    StripDomain,
    StripFunction,
    cheb_nodes,
    default_grid,
    k1_norms,
    symmetrize,
    theta_grid,
)


def lowpass_symbol(knorm: np.ndarray, delta: float) -> np.ndarray:
    """C-infinity ramp: 1 for |k| <= 1/(2 delta), 0 for |k| >= 1/delta."""
    lo = 0.5 / delta
    hi = 1.0 / delta
    t = np.clip((np.asarray(knorm, dtype=float) - lo) / (hi - lo), 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(t > 0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)
        b = np.where(t < 1, np.exp(-1.0 / np.where(t < 1, 1.0 - t, 1.0)), 0.0)
    return b / (a + b)


def q_bound(p: float, tau: float) -> tuple[float, float]:
    """The two branches of the q constraint: ((p-2tau-1)/(p+1))log2 and 1e-2*4^-tau."""
    return (p - 2.0 * tau - 1.0) / (p + 1.0) * math.log(2.0), 1e-2 * 4.0**-tau


@dataclass
class SampledCpFunction:
    """Finitely differentiable quasi-periodic map data.

    shell_sampler(theta_stack, y) evaluates the shell function F(theta, y) on
    stacked torus coordinates (shape (n, ...)); the line trace h(x, y) =
    F(omega*x, y) is derived.  p may be fractional; cp_norm is the declared
    C^p bound used by smallness checks.
    """

    shell_sampler: callable
    p: float
    cp_norm: float
    freq: Frequency

    def sample_line(self, x, y):
        x_arr = np.asarray(x, dtype=float)
        theta = np.multiply.outer(self.freq.vec, x_arr)
        return self.shell_sampler(theta, y)

    def check_quasiperiodic(self, n_periods: int = 6, tol: float = 1e-6) -> bool:
        """Spot-check |h(x + T, y) - h(x, y)| for near-periods T of omega."""
        # near-periods: T with omega_j*T all close to multiples of 2*pi
        om = self.freq.vec
        best_T, best_err = None, math.inf
        for m in range(1, 4000):
            T = 2.0 * math.pi * m / om[0]
            err = max(abs((w * T / (2 * math.pi)) % 1.0 - 0.5) for w in om[1:]) if len(om) > 1 else 0.5
            err = 0.5 - err
            if err < best_err:
                best_err, best_T = err, T
        xs = np.linspace(0.0, 5.0, 64)
        gap = np.abs(self.sample_line(xs + best_T, 0.0) - self.sample_line(xs, 0.0))
        # the defect scales with the angle misfit of the near-period
        return float(np.max(gap)) <= max(tol, 20.0 * best_err * self.cp_norm)


def smooth(h: SampledCpFunction, delta: float, K_trunc: int, J: int = 0,
           domain_s: float | None = None, N: int | None = None) -> StripFunction:
    """Analytic approximant h_delta as a Fourier x Chebyshev projection with
    coefficient mollification; holomorphic (as a truncated series) on E_delta.

    Quasi-periodicity and reality are preserved; the member is represented on
    D(delta, domain_s) with domain_s <= delta covering the disc in y.
    """
    if delta > 1.0:
        raise ValueError("delta <= 1 required")
    n = h.freq.n
    s_box = float(domain_s if domain_s is not None else delta)
    N = N or default_grid(K_trunc)
    th = theta_grid(N, n)
    ys = s_box * cheb_nodes(J)
    vals = np.empty((N,) * n + (J + 1,))
    for m, y in enumerate(ys):
        vals[..., m] = h.shell_sampler(th, y)
    if not np.all(np.isfinite(vals)):
        raise SamplerNotFinite("sampler produced non-finite values")
    f = StripFunction.from_grid(vals, h.freq, StripDomain(delta, s_box), K_trunc, J)
    sym_x = lowpass_symbol(k1_norms(K_trunc, n), delta)
    sym_y = lowpass_symbol(np.arange(J + 1), delta)
    coeffs = f.coeffs * sym_x[..., None] * sym_y
    coeffs, _ = symmetrize(coeffs, n)
    return StripFunction(h.freq, StripDomain(delta, s_box), coeffs)


def smooth_shell(h: ShellFunction, delta: float) -> ShellFunction:
    """Mollify an explicit shell function (pure coefficient filter)."""
    sym = lowpass_symbol(k1_norms(h.K, h.n), delta)
    return ShellFunction(h.freq, h.coeffs * sym, max(h.width, delta))


# frozen calibration constants for Lemma-2.9-type inequalities; fitted once on
# a corpus of known-norm trig data (see tests) and used by smallness reports
FROZEN_CONSTANTS = {"c0": 2.0, "c1": 2.0, "c2": 2.0}


@dataclass
class SmoothingFamily:
    deltas: np.ndarray
    members: list
    c0: float
    c1: float
    c2: float
    report: dict = field(default_factory=dict)

    def members_to_json(self) -> list:
        """Members in the strip-function schema with an added delta field."""
        from .serialize import strip_to_dict

        return [strip_to_dict(m, extra={"delta": float(d)})
                for d, m in zip(self.deltas, self.members)]


def _family_fit(h: SampledCpFunction, deltas, members, sup_h: float,
                n_grid: int = 1024) -> dict:
    """Measured ratios behind the three smoothing inequalities."""
    xs = np.linspace(0.0, 200.0, n_grid)
    h_line = h.sample_line(xs, 0.0)
    out = {"bounded": [], "approx": [], "cauchy_pairs": []}
    for delta, hd in zip(deltas, members):
        lhs = hd.norm_lower(delta, hd.domain.s)
        out["bounded"].append(lhs / max(sup_h, 1e-300))
        err = float(np.max(np.abs(h_line - hd.eval_xy(xs, 0.0).real)))
        out["approx"].append(err / max(h.cp_norm * delta**h.p, 1e-300))
    for i in range(len(members)):           # delta' = deltas[i]
        for jj in range(i + 1, len(members)):   # delta = deltas[jj] < delta'
            small, big = members[jj], members[i]
            diff_sup = _diff_sup(small, big, deltas[jj])
            out["cauchy_pairs"].append(
                diff_sup / max(h.cp_norm * deltas[i]**h.p, 1e-300))
    return out


def _diff_sup(small: StripFunction, big: StripFunction, delta: float) -> float:
    """Grid sup of |h_delta - h_delta'| over (samples of) E_delta."""
    K = max(small.K, big.K)
    N = default_grid(K)
    ys = np.linspace(-small.domain.s, small.domain.s, 5)
    best = 0.0
    for y in ys:
        a = small.sample(N, np.array([y]))[..., 0]
        b = big.sample(N, np.array([y]))[..., 0]
        best = max(best, float(np.max(np.abs(a - b))))
    # imaginary-x corner sheets of E_delta
    sh_small, sh_big = small.modes_at_y(0.0), big.modes_at_y(0.0)
    from .qpfourier import _lattice, synthesize

    kstack, _ = _lattice(K, small.n) if small.K == big.K else (None, None)
    if kstack is not None:
        for signs in np.ndindex(*([2] * small.n)):
            v = delta * (2 * np.array(signs) - 1)
            damp = np.exp(-np.tensordot(v, kstack, axes=1))
            diff = synthesize((sh_small - sh_big) * damp, small.n, N)
            best = max(best, float(np.max(np.abs(diff))))
    return best


def build_family(h: SampledCpFunction, q: float, depth: int, tau: float,
                 K_trunc: int, J: int = 0, domain_s=None, N: int | None = None,
                 sup_h: float | None = None) -> SmoothingFamily:
    """Members h_{delta_k}, delta_k = ((1+q)/2)^k, with empirically fitted
    constants making the three smoothing inequalities hold on the family."""
    b_smooth, b_abs = q_bound(h.p, tau)
    if not 0.0 < q <= min(b_smooth, b_abs) + 1e-15:
        raise QTooLarge(q, b_smooth, b_abs)
    deltas = ((1.0 + q) / 2.0) ** np.arange(depth + 1)
    members = [smooth(h, d, K_trunc, J,
                      domain_s=None if domain_s is None else min(domain_s, d), N=N)
               for d in deltas]
    if sup_h is None:
        xs = np.linspace(0.0, 200.0, 2048)
        sup_h = float(np.max(np.abs(h.sample_line(xs, 0.0))))
    fit = _family_fit(h, deltas, members, sup_h)
    c0 = max(max(fit["bounded"], default=0.0), 1.0)
    c1 = max(max(fit["approx"], default=0.0), 1e-12)
    c2 = max(max(fit["cauchy_pairs"], default=0.0), 1e-12)
    return SmoothingFamily(deltas, members, c0, c1, c2, fit)
