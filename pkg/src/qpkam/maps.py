"""Quasi-periodic planar map models and structural diagnostics.

Maps have the form theta_1 = theta + r + f(theta, r), r_1 = r + g(theta, r)
with f, g quasi-periodic in theta.  The catalog provides the pure twist, the
quasi-periodically kicked twist (f = g = lam * V'(theta), exact symplectic by
the generating function H(D, theta) = D^2/2 + lam*V(theta), optionally with a
radial flux), and the rigid radial shift counterexample.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NotAGraph, OutOfStrip
from .qpfourier import (
    Frequency,
    ShellFunction,
    compose_angle,
    default_grid,
    invert_angle_map,
    shell_product,
    synthesize,
    theta_grid,
)


@dataclass
class QpPlanarMap:
    """Planar map quasi-periodic in the angle, with shell samplers for f, g.

    f_shell/g_shell take (theta_stack, r) with theta_stack of shape (n, ...)
    and broadcastable r.  declared holds {"intersection", "exact_symplectic"}
    flags (True/False/None for unknown).
    """

    freq: Frequency
    f_shell: callable
    g_shell: callable
    strip: tuple
    p: float = math.inf
    cp_norm: float = 0.0
    sup_norm_fg: float = 0.0          # |f| + |g| on the strip (declared)
    declared: dict = field(default_factory=dict)
    label: str = "custom"
    params: dict = field(default_factory=dict)

    def f_line(self, theta, r):
        th = np.multiply.outer(self.freq.vec, np.asarray(theta, dtype=float))
        return self.f_shell(th, r)

    def g_line(self, theta, r):
        th = np.multiply.outer(self.freq.vec, np.asarray(theta, dtype=float))
        return self.g_shell(th, r)

    def apply(self, point, check_strip: bool = True):
        """Image of (theta, r); raises OutOfStrip when r leaves [a, b]."""
        theta, r = point
        a, b = self.strip
        if check_strip and not (np.all(a <= np.asarray(r)) and np.all(np.asarray(r) <= b)):
            raise OutOfStrip(f"r = {r} outside [{a}, {b}]")
        theta1 = theta + r + self.f_line(theta, r)
        r1 = r + self.g_line(theta, r)
        return theta1, r1

def apply_map(mp: QpPlanarMap, point):
    return mp.apply(point)


# ---------------------------------------------------------------------------
# catalog
# ---------------------------------------------------------------------------

def pure_twist(freq: Frequency, strip=(-math.inf, math.inf)) -> QpPlanarMap:
    zero = lambda th, r: np.zeros(np.broadcast_shapes(th.shape[1:], np.shape(r)))
    return QpPlanarMap(freq, zero, zero, strip, sup_norm_fg=0.0,
                       declared={"intersection": True, "exact_symplectic": True},
                       label="pure_twist")


def kicked_twist(freq: Frequency, lam: float, modes, flux: float = 0.0,
                 strip=(-math.inf, math.inf), p: float = math.inf) -> QpPlanarMap:
    """theta_1 = theta + r + lam*s(theta), r_1 = r + lam*s(theta) + flux,
    with s = sum of c*sin(<k,theta>) over modes = [(k_tuple, c), ...].

    flux = 0 is exact symplectic (generating function H = D^2/2 + lam*V);
    flux != 0 stays area preserving but breaks exactness by the flux constant.
    """
    ks = np.array([k for k, _ in modes], dtype=float)     # (n_modes, n)
    cs = np.array([c for _, c in modes], dtype=float)

    def s_of(theta):
        phases = np.tensordot(ks, theta, axes=([1], [0]))  # (n_modes, ...)
        return np.tensordot(cs, np.sin(phases), axes=([0], [0]))

    f = lambda th, r: lam * s_of(th) * np.ones(np.broadcast_shapes(th.shape[1:], np.shape(r)))
    g = lambda th, r: lam * s_of(th) + flux + np.zeros(np.broadcast_shapes(th.shape[1:], np.shape(r)))
    amp = float(lam) * float(np.sum(np.abs(cs)))
    kmax = float(np.max(np.abs(ks @ freq.vec))) if len(modes) else 0.0
    cp = sum(amp * kmax**i for i in range(0, 8))
    return QpPlanarMap(freq, f, g, strip, p=p, cp_norm=cp,
                       sup_norm_fg=2 * amp + abs(flux),
                       declared={"intersection": flux == 0.0,
                                 "exact_symplectic": flux == 0.0},
                       label="kicked_twist",
                       params={"lambda": lam, "modes": list(modes), "flux": flux})


def rigid_shift(freq: Frequency, c: float, strip=(-math.inf, math.inf)) -> QpPlanarMap:
    """r_1 = r + c: pushes every curve outward; violates intersection."""
    zero = lambda th, r: np.zeros(np.broadcast_shapes(th.shape[1:], np.shape(r)))
    g = lambda th, r: np.full(np.broadcast_shapes(th.shape[1:], np.shape(r)), c)
    return QpPlanarMap(freq, zero, g, strip, sup_norm_fg=abs(c),
                       declared={"intersection": False, "exact_symplectic": False},
                       label="rigid_shift", params={"c": c})


def model_from_config(cfg: dict, freq: Frequency) -> QpPlanarMap:
    """Catalog lookup from a JSON-style dict: {"model": .., parameters}."""
    name = cfg.get("model", "kicked_twist")
    strip = tuple(cfg.get("strip", (-math.inf, math.inf)))
    if name == "pure_twist":
        return pure_twist(freq, strip)
    if name == "kicked_twist":
        modes = [(tuple(m["k"]), float(m.get("c", 1.0))) for m in cfg.get("modes", [])]
        return kicked_twist(freq, float(cfg.get("lambda", 0.0)), modes,
                            flux=float(cfg.get("flux", 0.0)), strip=strip)
    if name == "rigid_shift":
        return rigid_shift(freq, float(cfg.get("c", 0.0)), strip)
    raise ValueError(f"unknown model {name!r}")


# ---------------------------------------------------------------------------
# curves and diagnostics
# ---------------------------------------------------------------------------

@dataclass
class CurveGraph:
    """Quasi-periodic graph curve theta = xi + phi(xi), r = psi(xi)."""

    phi: ShellFunction
    psi: ShellFunction

    def points(self, xi):
        xi = np.asarray(xi, dtype=float)
        return xi + self.phi.eval(xi).real, self.psi.eval(xi).real

    def r_of_theta(self) -> ShellFunction:
        """psi reparameterized by the angle theta (needs a monotone graph)."""
        inv = invert_angle_map(self.phi, K_out=max(2 * self.phi.K, 8))
        return compose_angle(self.psi, inv, K_out=max(2 * self.psi.K, 8))


def flat_curve(freq: Frequency, r0: float, K: int = 4) -> CurveGraph:
    return CurveGraph(ShellFunction.zeros(freq, K),
                      ShellFunction.constant(freq, r0, K))


def forward_shells(mp: QpPlanarMap, curve: CurveGraph, K_out: int | None = None):
    """Image of a graph curve in the original parameter: the angle displacement
    u = phi + psi + f(curve) and the radius R1 = psi + g(curve), both shells."""
    freq = mp.freq
    K_out = K_out if K_out is not None else max(2 * curve.phi.K, 8)
    N = default_grid(K_out)
    th = theta_grid(N, freq.n)
    thf = th.reshape(freq.n, -1)
    phi_v = synthesize(curve.phi.coeffs, freq.n, N).real.ravel()
    psi_v = synthesize(curve.psi.coeffs, freq.n, N).real.ravel()
    th_curve = thf + np.multiply.outer(freq.vec, phi_v)
    fv = mp.f_shell(th_curve, psi_v)
    gv = mp.g_shell(th_curve, psi_v)
    shape = (N,) * freq.n
    u = ShellFunction.from_grid((phi_v + psi_v + fv).reshape(shape), freq, K_out)
    r1 = ShellFunction.from_grid((psi_v + gv).reshape(shape), freq, K_out)
    return u, r1


def image_curve(mp: QpPlanarMap, curve: CurveGraph, K_out: int | None = None) -> CurveGraph:
    """Image of a graph curve, reparameterized as a graph over the angle.

    The graph parameter is recovered with the quasi-periodic inverse of the
    angle displacement (NotAGraph when the angle map folds); phi1 vanishes up
    to the inversion's truncation residual, which the pair (phi1, psi1)
    absorbs consistently.
    """
    freq = mp.freq
    K_out = K_out if K_out is not None else max(2 * curve.phi.K, 8)
    u, r1 = forward_shells(mp, curve, K_out)
    N = default_grid(K_out)
    du = synthesize(u.derivative().coeffs, freq.n, N).real
    if float(np.min(1.0 + du)) <= 0.0:
        raise NotAGraph(f"min(1 + u') = {float(np.min(1.0 + du)):.3e}")
    inv = invert_angle_map(u, K_out=K_out)
    phi1 = compose_angle(u, inv, K_out=K_out) + inv
    psi1 = compose_angle(r1, inv, K_out=K_out)
    return CurveGraph(phi1, psi1)


@dataclass
class WitnessReport:
    found: bool
    xi_star: float | None
    sign_change: bool
    displacement: ShellFunction
    area_signs: tuple | None = None    # (min, max) of Delta(t, T) when computed


def intersection_witness(mp: QpPlanarMap, curve: CurveGraph, grid_size: int = 256,
                         span: float = 200.0, atol: float = 1e-11) -> WitnessReport:
    """Witness of M(curve) meeting curve: a zero of the radial displacement
    d(theta) between the two graphs over the angle.

    d identically small counts as the trivial witness; otherwise the first
    sign change of d along increasing xi is reported.  For declared exact
    symplectic maps the area functional Delta(t, T) is evaluated on a grid and
    both signs are reported.
    """
    img = image_curve(mp, curve)
    r_orig = curve.r_of_theta()
    K = max(img.psi.K, r_orig.K)
    d = img.psi.pad_to(K) - r_orig.pad_to(K)
    scale = 1.0 + curve.psi.norm_upper(0.0)
    xs = np.linspace(0.0, span, grid_size, endpoint=False)
    dv = d.eval(xs).real
    found, xi_star, sign_change = False, None, False
    if float(np.max(np.abs(dv))) <= atol * scale:
        found, xi_star = True, float(xs[0])
    else:
        sgn = np.sign(dv)
        flips = np.nonzero(sgn[:-1] * sgn[1:] < 0)[0]
        if flips.size:
            i = int(flips[0])
            lo, hi = xs[i], xs[i + 1]
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                if np.sign(d.eval(mid).real) == sgn[i]:
                    lo = mid
                else:
                    hi = mid
            found, xi_star, sign_change = True, float(0.5 * (lo + hi)), True
    area = None
    if mp.declared.get("exact_symplectic"):
        area = _area_functional_signs(mp, curve, img)
    return WitnessReport(found, xi_star, sign_change, d, area)


def _area_functional_signs(mp: QpPlanarMap, curve: CurveGraph, img: CurveGraph,
                           n_grid: int = 64, span: float = 120.0):
    """Range of Delta(t, T) = int_t^T (r1 dtheta1 - r dtheta) over a (t, T) grid.

    Evaluated through cumulative quadrature of the angle-parameterized radii.
    """
    ts = np.linspace(0.0, span, n_grid * 8)
    r_orig = _radius_vs_angle(curve, ts)
    r_img = _radius_vs_angle(img, ts)
    diff = r_img - r_orig
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (diff[1:] + diff[:-1]) * np.diff(ts))])
    idx = np.linspace(0, len(ts) - 1, n_grid, dtype=int)
    delta = cum[idx][None, :] - cum[idx][:, None]     # Delta(t_i, T_j)
    return float(np.min(delta)), float(np.max(delta))


def _radius_vs_angle(curve: CurveGraph, thetas: np.ndarray) -> np.ndarray:
    rfun = curve.r_of_theta()
    return rfun.eval(thetas).real


def exactness_defect(mp: QpPlanarMap, curve: CurveGraph, K_out: int | None = None) -> float:
    """Difference of the Birkhoff averages of r dtheta along the image and the
    original curve, via shell-average quadrature in the original parameter
    (parameterization invariant, exact on the mode box; no inversion).

    Zero certifies exactness on this curve; a radial flux c shows up as +c.
    """
    K_out = K_out if K_out is not None else max(4 * curve.phi.K, 16)
    u, r1 = forward_shells(mp, curve, K_out)
    avg_img = shell_product(r1, u.derivative() + 1.0).mean()
    avg_orig = shell_product(curve.psi, curve.phi.derivative() + 1.0).mean()
    return avg_img - avg_orig
