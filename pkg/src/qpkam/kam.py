"""The KAM iteration: constants schedule, inductive step, solve-back, driver.

One level runs: (a) linearized coupled solve with the Theta-scaled right side,
(b) Picard contraction for the conjugacy correction z, (c) assembly of the
increment W = Theta + w and the conjugated map Phi_plus, (d) truncation
polynomial Q from the mean-value power series, then the solve-back replacing
the smoothed map A_k by A_{k+1} through the accumulated conjugacy Z, and the
intersection-property bound on Q.

The driver monitors the invariance defect on the real curve in original
(theta, r) units and emits one trace record per level.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cohomology import solve_coupled
from .diophantine import RotationNumber
from .errors import (
    ContractionDiverged,
    NoIntersectionWitness,
    NotConverged,
    PreconditionDefect,
    RootFindFailed,
    SmoothnessTooLow,
)
from .maps import QpPlanarMap
from .qpfourier import (
    Frequency,
    ShellFunction,
    StripDomain,
    StripFunction,
    cheb_eval_rows,
    cheb_nodes,
    default_grid,
    eval_modes,
    k_dot_omega,
    synthesize,
    theta_grid,
)
from .smoothing import FROZEN_CONSTANTS, SampledCpFunction, q_bound, smooth

INTERSECTION_STRIP = 1.0 / 600.0


# ---------------------------------------------------------------------------
# schedule
# ---------------------------------------------------------------------------

@dataclass
class KamSchedule:
    """Constants ledger: per-level domains, twists and defect bounds.

    r_k = 2^-k, s_k = 2^-k s0 with s0 = 2^-tau/300, r'_k = (4/3)(r_k - s_k),
    s'_k = (4/3) s_k, eps_k = 2^{-k tau} eps0, M_k = 2^{-k(tau+1)} M0 with
    M0 = q eps0 s0 / 3, b_k = 2^{-k tau}(1-q)^k, B_k = (1+q)^k.
    """

    p: float
    n: int
    tau: float
    gamma: float
    q: float
    k_max: int
    theta: float
    s0: float
    eps0: float
    M0: float
    r: np.ndarray
    s: np.ndarray
    r_prime: np.ndarray
    s_prime: np.ndarray
    eps: np.ndarray
    M: np.ndarray
    b: np.ndarray
    B: np.ndarray
    delta: np.ndarray

    def level(self, k: int) -> dict:
        return {"k": k, "r": self.r[k], "s": self.s[k], "r_prime": self.r_prime[k],
                "s_prime": self.s_prime[k], "eps": self.eps[k], "M": self.M[k],
                "b": self.b[k], "B": self.B[k], "delta": self.delta[k]}


def build_schedule(p: float, n: int, tau: float, gamma: float,
                   q: float | None = None, k_max: int = 12) -> KamSchedule:
    """Schedule from the constants ledger; q defaults to its upper bound."""
    if not tau >= n:
        raise ValueError(f"tau = {tau} must be >= n = {n}")
    if not p > 2 * tau + 1:
        raise SmoothnessTooLow(f"p = {p} must exceed 2*tau + 1 = {2 * tau + 1}")
    if not 0 < gamma < 0.5:
        raise ValueError("0 < gamma < 1/2 required")
    b_smooth, b_abs = q_bound(p, tau)
    if q is None:
        q = min(b_smooth, b_abs)
    if not 0 < q <= min(b_smooth, b_abs) + 1e-15:
        raise ValueError(f"q = {q} violates min({b_smooth:.3e}, {b_abs:.3e})")
    theta = 2.0**-tau
    if q > (theta / 10.0) ** 2 + 1e-15:
        raise ValueError("q <= (theta/10)^2 violated")
    # condition (1+q)^p/(1-q) <= 2^(p-1-2 tau), checked directly
    if (1 + q) ** p / (1 - q) > 2.0 ** (p - 1 - 2 * tau):
        raise ValueError("geometric condition (1+q)^p/(1-q) <= 2^(p-1-2tau) fails")
    s0 = 2.0**-tau / 300.0
    eps0 = 6.0 ** -(tau + (n + 1) / 2.0) * gamma / math.gamma(tau + 1.0)
    M0 = q * eps0 * s0 / 3.0
    ks = np.arange(k_max + 1)
    r = 2.0**-ks
    s = s0 * 2.0**-ks
    return KamSchedule(
        p=p, n=n, tau=tau, gamma=gamma, q=q, k_max=k_max, theta=theta,
        s0=s0, eps0=eps0, M0=M0,
        r=r, s=s, r_prime=4.0 / 3.0 * (r - s), s_prime=4.0 / 3.0 * s,
        eps=eps0 * 2.0 ** (-tau * ks), M=M0 * 2.0 ** (-(tau + 1) * ks),
        b=2.0 ** (-tau * ks) * (1 - q) ** ks, B=(1 + q) ** ks,
        delta=((1 + q) / 2.0) ** ks)


def smallness_check(sup_fg: float, cp_fg: float, schedule: KamSchedule,
                    c0: float | None = None, c1: float | None = None,
                    c2: float | None = None) -> dict:
    """Both smallness conditions; advisory (the driver may run beyond them)."""
    c0 = FROZEN_CONSTANTS["c0"] if c0 is None else c0
    c1 = FROZEN_CONSTANTS["c1"] if c1 is None else c1
    c2 = FROZEN_CONSTANTS["c2"] if c2 is None else c2
    n, tau, gamma, q = schedule.n, schedule.tau, schedule.gamma, schedule.q
    gg = (gamma / math.gamma(tau + 1.0)) ** 2
    pre = 6.0 ** -(n + 1) / 3.0
    rhs0 = pre * q / (300.0 * c0) * (1.0 / 72.0) ** tau * gg
    rhsP = pre * q * (1 - q) / (3600.0 * (3 * c1 + c2)) * (1.0 / 288.0) ** tau * gg
    return {"lhs0": sup_fg, "rhs0": rhs0, "lhsP": cp_fg, "rhsP": rhsP,
            "pass": bool(sup_fg <= rhs0 and cp_fg <= rhsP)}


# ---------------------------------------------------------------------------
# normalized maps and conjugacies
# ---------------------------------------------------------------------------

@dataclass
class NormalizedMap:
    """Level map x1 = x + alpha + twist*y + fx(x,y), y1 = y + fy(x,y)."""

    alpha: float
    twist: float
    fx: StripFunction
    fy: StripFunction
    domain: StripDomain

    def defect_sup(self, N: int | None = None) -> float:
        N = N or default_grid(self.fx.K)
        a = float(np.max(np.abs(self.fx.sample(N))))
        b = float(np.max(np.abs(self.fy.sample(N))))
        return max(a, b)

    def restricted(self, domain: StripDomain) -> "NormalizedMap":
        return NormalizedMap(self.alpha, self.twist,
                             self.fx.with_domain(domain), self.fy.with_domain(domain),
                             domain)


@dataclass
class ExactNormalizedMap:
    """The unsmoothed normalized map, kept as shell samplers of the original."""

    mp: QpPlanarMap
    alpha: float
    y_scale: float

    def displacement(self, theta_pts: np.ndarray, y_pts: np.ndarray):
        """(dx, dy) with x1 = x + dx, y1 = y + dy at shell points."""
        r = self.alpha + self.y_scale * y_pts
        f = self.mp.f_shell(theta_pts, r)
        g = self.mp.g_shell(theta_pts, r)
        return self.alpha + self.y_scale * y_pts + f, g / self.y_scale


@dataclass
class ConjugacyMap:
    """Z(x, y) = (x + P(x,y), L y + S(x,y)); P, S quasi-periodic strips."""

    P: StripFunction
    S: StripFunction
    L: float
    b: float
    B: float
    domain: StripDomain

    @staticmethod
    def identity(freq: Frequency, domain: StripDomain, K: int, J: int) -> "ConjugacyMap":
        return ConjugacyMap(StripFunction.zeros(freq, domain, K, J),
                            StripFunction.zeros(freq, domain, K, J),
                            1.0, 1.0, 1.0, domain)

    def values_at(self, theta_pts: np.ndarray, y_pts: np.ndarray):
        """(x-displacement P, image y) at scattered shell points."""
        vals = eval_strip_pair(self.P, self.S, theta_pts, y_pts)
        return vals[..., 0], self.L * y_pts + vals[..., 1]

    def jacobian_at(self, theta_pts: np.ndarray, y_pts: np.ndarray):
        """Rows of dZ = [[1+Px, Py], [Sx, L+Sy]] at scattered shell points."""
        strips = [self.P.dx(), self.P.dy(), self.S.dx(), self.S.dy()]
        vals = eval_strip_stack(strips, theta_pts, y_pts)
        return (1.0 + vals[..., 0], vals[..., 1],
                vals[..., 2], self.L + vals[..., 3])

    def range_containment(self, domain: StripDomain, target: StripDomain,
                          n_grid: int = 24) -> bool:
        """Z(domain) inside target, checked on a boundary grid: |Im Z_x| and
        |Z_y| sampled on the corner sheets Im x = +-r, |y| = s."""
        xs = np.linspace(0.0, 2 * math.pi, n_grid, endpoint=False)
        worst_im, worst_y = 0.0, 0.0
        for im in (-domain.r, 0.0, domain.r):
            for y in (-domain.s, 0.0, domain.s):
                pts = xs + 1j * im
                th = np.multiply.outer(self.P.freq.vec, pts)
                vals = eval_strip_stack([self.P, self.S], th,
                                        np.full(n_grid, y, dtype=complex))
                zx = pts + vals[..., 0]
                zy = self.L * y + vals[..., 1]
                worst_im = max(worst_im, float(np.max(np.abs(zx.imag))))
                worst_y = max(worst_y, float(np.max(np.abs(zy))))
        return worst_im <= target.r and worst_y <= target.s


def eval_strip_stack(strips, theta_pts, y_pts) -> np.ndarray:
    """Evaluate same-shape strip functions at scattered points, (..., m)."""
    coeffs = np.stack([s.coeffs for s in strips], axis=-1)
    rows = eval_modes(coeffs, theta_pts)          # (P, J+1, m)
    t = np.asarray(y_pts) / strips[0].domain.s
    vals = cheb_eval_rows(np.moveaxis(rows, -1, -2), t[..., None])
    if np.isrealobj(theta_pts) and np.isrealobj(y_pts):
        return vals.real
    return vals


def power_truncation(coeffs, m: int, q: float) -> np.ndarray:
    """Degree-(m-1) polynomial with coefficients (1 - q^{2(m-k)}) c_k.

    Satisfies sup_{|z| <= q r} |f - f_{m-1,q}| <= q^m sup_{|z| < r} |f| for f
    holomorphic on |z| < r.
    """
    out = np.zeros(m)
    upto = min(m, len(coeffs))
    ks = np.arange(upto)
    out[:upto] = (1.0 - q ** (2.0 * (m - ks))) * np.asarray(coeffs[:upto], dtype=float)
    return out


def eval_strip_pair(a: StripFunction, b: StripFunction, theta_pts, y_pts) -> np.ndarray:
    return eval_strip_stack([a, b], theta_pts, y_pts)


def grid_slices_shifted(strip: StripFunction, shifts, ys, N: int) -> np.ndarray:
    """Values of strip(x + shift_j, y_j) on the torus grid, stacked over j.

    Uniform-per-slice shifts keep everything in FFT form.
    """
    kw = k_dot_omega(strip.K, strip.freq.vec)
    out = np.empty((N,) * strip.n + (len(ys),))
    for j, (a, y) in enumerate(zip(np.broadcast_to(shifts, (len(ys),)), ys)):
        box = strip.modes_at_y(y) * np.exp(1j * kw * a)
        out[..., j] = synthesize(box, strip.n, N).real
    return out


# ---------------------------------------------------------------------------
# normalize
# ---------------------------------------------------------------------------

@dataclass
class NormalizeResult:
    exact: ExactNormalizedMap
    family: dict              # level -> NormalizedMap (built lazily via member())
    report: dict
    y_scale: float
    strip_halfwidth: float = INTERSECTION_STRIP


def normalize(mp: QpPlanarMap, alpha: RotationNumber, schedule: KamSchedule,
              K_trunc: int, J: int, y_scale: float | None = None) -> NormalizeResult:
    """Linear change theta = x, r = alpha + sigma*y and the smoothed family.

    sigma defaults to the schedule's eps0 (the proof normalization); the
    numerical driver passes a moderate sigma instead, since eps0 amplifies the
    radial perturbation by eps0^{-1}.  The intersection strip |y| < 1/600 must
    land inside the declared r-strip.
    """
    sigma = float(schedule.eps0 if y_scale is None else y_scale)
    a, b = mp.strip
    margin = min(alpha.alpha - a, b - alpha.alpha)
    if sigma * INTERSECTION_STRIP > margin:
        raise ValueError(
            f"intersection strip needs sigma/600 = {sigma * INTERSECTION_STRIP:.3e} "
            f"<= distance {margin:.3e} from alpha to the strip boundary")
    exact = ExactNormalizedMap(mp, alpha.alpha, sigma)
    y_strip = min(1.0, margin / sigma)

    freq = mp.freq
    hx = SampledCpFunction(lambda th, y: mp.f_shell(th, alpha.alpha + sigma * y),
                           mp.p, mp.cp_norm, freq)
    hy = SampledCpFunction(lambda th, y: mp.g_shell(th, alpha.alpha + sigma * y) / sigma,
                           mp.p, mp.cp_norm / sigma, freq)

    members: dict[int, NormalizedMap] = {}

    def member(k: int) -> NormalizedMap:
        if k not in members:
            d = float(schedule.delta[k])
            s_box = min(d, y_strip)
            fx = smooth(hx, d, K_trunc, J, domain_s=s_box)
            fy = smooth(hy, d, K_trunc, J, domain_s=s_box)
            members[k] = NormalizedMap(alpha.alpha, sigma, fx, fy,
                                       StripDomain(d, s_box))
        return members[k]

    report = {"sigma": sigma, "paper_eps0": schedule.eps0,
              "strip_halfwidth": INTERSECTION_STRIP,
              "proof_scaling": math.isclose(sigma, schedule.eps0, rel_tol=1e-9)}
    # the (c7)-style estimates for the first members, with sigma in eps0's role
    m0 = member(0)
    sup_fg = mp.sup_norm_fg
    report["family_level0_sup"] = m0.defect_sup()
    report["family_level0_bound"] = FROZEN_CONSTANTS["c0"] * sup_fg / sigma
    return NormalizeResult(exact, member, report, sigma)


def family_estimates(norm: NormalizeResult, mp: QpPlanarMap, schedule: KamSchedule,
                     k: int, p: float | None = None) -> dict:
    """Measured values behind the three smoothing-family estimates at level k:
    |A_0 - Omega_0| on E_0, |A - A_k| on the reals, |A_k - A_{k+1}| on E_{k+1},
    against the c0/c1/c2 bounds with the declared norms."""
    p = schedule.p if p is None else p
    sigma = norm.y_scale
    cp = mp.cp_norm / sigma + mp.cp_norm
    m_k, m_k1 = norm.family(k), norm.family(k + 1)
    # |A - A_k| on the real grid
    N = default_grid(m_k.fx.K)
    ys = m_k.domain.s * cheb_nodes(m_k.fx.J)
    th = theta_grid(N, mp.freq.n)
    diff = 0.0
    for j, y in enumerate(ys):
        fx = mp.f_shell(th, norm.exact.alpha + sigma * y)
        fy = mp.g_shell(th, norm.exact.alpha + sigma * y) / sigma
        diff = max(diff,
                   float(np.max(np.abs(fx - m_k.fx.sample(N, np.array([y]))[..., 0]))),
                   float(np.max(np.abs(fy - m_k.fy.sample(N, np.array([y]))[..., 0]))))
    gap = max(_member_diff(m_k, m_k1))
    delta_k = float(schedule.delta[k])
    return {
        "level0_sup": norm.report["family_level0_sup"],
        "level0_bound": norm.report["family_level0_bound"],
        "reals_gap": diff,
        "reals_bound": FROZEN_CONSTANTS["c1"] * cp * delta_k**p,
        "member_gap": gap,
        "member_bound": FROZEN_CONSTANTS["c2"] * cp * delta_k**p,
    }


# ---------------------------------------------------------------------------
# level context
# ---------------------------------------------------------------------------

@dataclass
class LevelContext:
    """Constants of one inductive call: domains at (r, s), target halves."""

    k: int
    r: float
    s: float
    theta: float
    q: float
    eps: float            # twist at this level (the working scale)
    M_paper: float
    alpha: RotationNumber

    @property
    def rho(self) -> float:
        return self.r / 6.0

    @property
    def t(self) -> float:
        return self.s / self.theta

    @property
    def r_plus(self) -> float:
        return self.r / 2.0

    @property
    def s_plus(self) -> float:
        return self.s / 2.0

    @property
    def rp_plus(self) -> float:
        return 4.0 / 3.0 * (self.r_plus - self.s_plus)

    @property
    def sp_plus(self) -> float:
        return 4.0 / 3.0 * self.s_plus

    @property
    def eps_plus(self) -> float:
        return self.theta * self.eps


@dataclass
class TruncationPolynomial:
    a0: float
    a1: float
    a2: float

    def eval(self, eta):
        return self.a0 + self.a1 * eta + self.a2 * eta * eta

    def sup_disc(self, s: float) -> float:
        return abs(self.a0) + abs(self.a1) * s + abs(self.a2) * s * s


@dataclass
class StepResult:
    w_u: StripFunction
    w_v: StripFunction
    phi_plus: NormalizedMap
    Q: TruncationPolynomial
    report: dict


# ---------------------------------------------------------------------------
# inductive step
# ---------------------------------------------------------------------------

def inductive_step(H: NormalizedMap, lc: LevelContext, strict: bool = False,
                   max_iter: int = 200, contraction_tol: float | None = None) -> StepResult:
    """One inductive cycle: coupled solve, contraction, W, Phi_plus, Q.

    strict enforces |H - Omega|_D <= M (the proof regime); the numerical
    driver runs with the measured defect as working size instead.
    """
    freq = H.fx.freq
    n = freq.n
    K = H.fx.K
    J = H.fx.J
    theta = lc.theta
    measured = H.defect_sup()
    regime = "proof" if measured <= lc.M_paper * (1 + 1e-12) else "numerical"
    if strict and measured > lc.M_paper * (1 + 1e-12):
        raise PreconditionDefect(f"|H-Omega| = {measured:.3e} > M = {lc.M_paper:.3e}")
    M_work = max(measured, lc.M_paper)

    # (a) coupled linear solve with Theta-scaled right side on D(r, t)
    fT = H.fx.scale_y(theta)
    gT = H.fy.scale_y(theta)
    sol = solve_coupled(fT, gT, lc.alpha, rho=lc.rho, epsilon=lc.eps, check=False)
    u, v = sol.u, sol.v
    w_scale = u.domain.s     # = t

    # collocation grid on D_plus
    N = default_grid(K)
    ys = lc.s_plus * cheb_nodes(J)
    th = theta_grid(N, n)
    thf = th.reshape(n, -1)
    shape = (N,) * n

    # fixed ingredients of the contraction
    w_omega_star = np.stack([grid_slices_shifted(u, lc.alpha.alpha, ys, N),
                             grid_slices_shifted(v, lc.alpha.alpha, ys, N)], axis=-1)
    shifts_plus = lc.alpha.alpha + lc.eps_plus * ys
    w_omega_plus = np.stack([grid_slices_shifted(u, shifts_plus, ys, N),
                             grid_slices_shifted(v, shifts_plus, ys, N)], axis=-1)
    h_theta = np.stack([grid_slices_shifted(H.fx, 0.0, theta * ys, N),
                        grid_slices_shifted(H.fy, 0.0, theta * ys, N)], axis=-1)
    w_at_grid = np.stack([grid_slices_shifted(u, 0.0, ys, N),
                          grid_slices_shifted(v, 0.0, ys, N)], axis=-1)

    # F3 = h o (Theta + w) - h o Theta is z-independent
    f3 = np.empty_like(h_theta)
    gmean = H.fy.mean_value()
    hstar2 = cheb_eval_rows(gmean.astype(complex), theta * ys / H.fy.domain.s).real
    for j, y in enumerate(ys):
        th_args = thf + np.multiply.outer(freq.vec, w_at_grid[..., j, 0].ravel())
        y_args = theta * y + w_at_grid[..., j, 1].ravel()
        vals = eval_strip_pair(H.fx, H.fy, th_args, y_args).reshape(shape + (2,))
        f3[..., j, :] = vals - h_theta[..., j, :]
    f2 = w_omega_star - w_omega_plus

    # (b) Picard contraction for z
    tol = contraction_tol if contraction_tol is not None else \
        max(1e-13 * theta**2 * M_work, 5e-16 * (1.0 + float(np.max(np.abs(w_at_grid)))))
    z = np.zeros(shape + (J + 1, 2))
    guard = 1e6 * (theta**2 * M_work + 1e-300)
    iters = 0
    ratios = []
    deltas = []
    prev_delta = None
    for iters in range(1, max_iter + 1):
        f1 = np.empty_like(z)
        for j, y in enumerate(ys):
            phi1 = z[..., j, 0].ravel()
            phi2 = (z[..., j, 1].ravel() + hstar2[j]) / theta
            th_args = thf + np.multiply.outer(freq.vec, shifts_plus[j] + phi1)
            y_args = y + phi2
            moved = eval_strip_pair(u, v, th_args, y_args).reshape(shape + (2,))
            f1[..., j, :] = w_omega_plus[..., j, :] - moved
        z_new = f1 + f2 + f3
        delta = float(np.max(np.abs(z_new - z)))
        z = z_new
        deltas.append(delta)
        if prev_delta is not None and prev_delta > 0:
            ratios.append(delta / prev_delta)
        prev_delta = delta
        if delta < tol:
            break
        if float(np.max(np.abs(z))) > guard:
            raise ContractionDiverged(
                f"|z| = {float(np.max(np.abs(z))):.3e} exceeds guard {guard:.3e}")
    else:
        raise ContractionDiverged(f"no fixed point in {max_iter} iterations "
                                  f"(last delta {delta:.3e})")

    # (c) phi = Theta^{-1}(z + h* o Theta), Phi_plus = Omega_plus + phi
    dom_plus = StripDomain(lc.r_plus, lc.s_plus)
    phi1_vals = z[..., 0]
    phi2_vals = (z[..., 1] + hstar2) / theta
    phi1 = StripFunction.from_grid(phi1_vals, freq, dom_plus, K, J)
    phi2 = StripFunction.from_grid(phi2_vals, freq, dom_plus, K, J)
    phi_plus = NormalizedMap(lc.alpha.alpha, lc.eps_plus, phi1, phi2, dom_plus)

    # (d) truncation polynomial from the power series of theta^{-1}[g](theta eta),
    # the m = 3, q = theta/2 truncation
    gpoly = H.fy.mean_poly()
    gpow = np.zeros(3)
    for m in range(min(3, len(gpoly))):
        gpow[m] = gpoly[m] * theta ** (m - 1)
    Q = TruncationPolynomial(*power_truncation(gpow, 3, theta / 2.0))

    # verification reports (theorems in the proof regime, advisory otherwise)
    w_sup_dprime = max(
        float(np.max(np.abs(u.sample(N, lc.sp_plus * cheb_nodes(J))))),
        float(np.max(np.abs(v.sample(N, lc.sp_plus * cheb_nodes(J))))))
    q_chk = lc.q
    phi_minus_q = np.abs(phi1_vals).max()
    q_at_ys = Q.eval(ys)
    phi_minus_q = max(phi_minus_q, float(np.max(np.abs(phi2_vals - q_at_ys))))
    report = {
        "regime": regime, "measured_defect": measured, "M_paper": lc.M_paper,
        "contraction_iters": iters, "contraction_ratios": ratios[:8],
        "contraction_deltas": deltas[:9],
        "w_minus_theta": w_sup_dprime,
        "w_bound_paper": 2.0 / 3.0 * q_chk * lc.s,
        "w_bound_working": 2.0 * M_work / lc.eps,
        "phi_minus_omega_minus_q": phi_minus_q,
        "phi_bound_paper": 5.0 / 48.0 * theta * lc.M_paper,
        "phi_bound_working": 5.0 / 48.0 * theta * M_work,
        "w_scale": w_scale,
    }
    return StepResult(u, v, phi_plus, Q, report)


def bilipschitz_sample(w_u: StripFunction, w_v: StripFunction, lc: LevelContext,
                       rng, n_pairs: int = 64):
    """Measured Lipschitz ratios of W = Theta + w on random pairs in D'_plus."""
    theta = lc.theta
    lo_ratio, hi_ratio = math.inf, 0.0
    for _ in range(n_pairs):
        x1, x2 = rng.uniform(0, 2 * math.pi, 2)
        y1, y2 = rng.uniform(-lc.sp_plus, lc.sp_plus, 2)
        ims = rng.uniform(-lc.rp_plus, lc.rp_plus, 2)
        z1 = (x1 + 1j * ims[0], y1)
        z2 = (x2 + 1j * ims[1], y2)
        if abs(z1[0] - z2[0]) + abs(z1[1] - z2[1]) < 1e-9:
            continue
        w1 = _w_point(w_u, w_v, theta, z1)
        w2 = _w_point(w_u, w_v, theta, z2)
        num = max(abs(w1[0] - w2[0]), abs(w1[1] - w2[1]))
        den = max(abs(z1[0] - z2[0]), abs(z1[1] - z2[1]))
        ratio = num / den
        lo_ratio, hi_ratio = min(lo_ratio, ratio), max(hi_ratio, ratio)
    return lo_ratio, hi_ratio


def _w_point(w_u, w_v, theta, zpt):
    x, y = zpt
    uu = w_u.eval_xy(np.array([x]), np.array([y]))[0]
    vv = w_v.eval_xy(np.array([x]), np.array([y]))[0]
    return x + uu, theta * y + vv


# ---------------------------------------------------------------------------
# solve-back
# ---------------------------------------------------------------------------

def _pullback_grid(Z: ConjugacyMap, thf: np.ndarray,
                   targets_theta_disp: np.ndarray, targets_y: np.ndarray,
                   seeds_disp: np.ndarray, seeds_y: np.ndarray,
                   freq: Frequency, tol: float, max_iter: int = 40):
    """Solve Z(w) = target per grid point by damped Newton, seeded.

    Unknowns are the x-displacement a (w_x = x + a) and w_y; targets are the
    x-displacement of the target and its y value.
    """
    a = seeds_disp.copy()
    yv = seeds_y.copy()
    for it in range(max_iter):
        th_args = thf + np.multiply.outer(freq.vec, a.ravel())
        P, Zy = Z.values_at(th_args, yv.ravel())
        r1 = (a.ravel() + P) - targets_theta_disp.ravel()
        r2 = Zy - targets_y.ravel()
        res = max(float(np.max(np.abs(r1))), float(np.max(np.abs(r2))))
        if res < tol:
            break
        j11, j12, j21, j22 = Z.jacobian_at(th_args, yv.ravel())
        det = j11 * j22 - j12 * j21
        det = np.where(np.abs(det) < 1e-14, 1e-14, det)
        da = (j22 * r1 - j12 * r2) / det
        dy = (-j21 * r1 + j11 * r2) / det
        a = a - da.reshape(a.shape)
        yv = yv - dy.reshape(yv.shape)
    else:
        i = int(np.argmax(np.abs(r1) + np.abs(r2)))
        raise RootFindFailed((float(a.ravel()[i]), float(yv.ravel()[i])), res)
    return a, yv


def solve_back(Z: ConjugacyMap, A_next: NormalizedMap, phi_plus: NormalizedMap,
               lc_next: dict, A_prev: NormalizedMap | None = None,
               tol: float = 1e-12) -> tuple[NormalizedMap, dict]:
    """H with Z o H = A_next o Z on D_{k+1}, seeded at Phi_plus.

    Reports the (3.19)-type smallness |A_next - A_prev|_E <= b*(s_k/7) and the
    contraction of H around the seed.
    """
    freq = A_next.fx.freq
    n = freq.n
    K = phi_plus.fx.K
    J = phi_plus.fx.J
    r_pl, s_pl = lc_next["r"], lc_next["s"]
    twist_next = phi_plus.twist
    N = default_grid(K)
    th = theta_grid(N, n)
    thf = th.reshape(n, -1)
    ys = s_pl * cheb_nodes(J)
    shape = (N,) * n

    a_out = np.empty(shape + (J + 1,))
    y_out = np.empty(shape + (J + 1,))
    scale = 1.0 + abs(A_next.alpha)
    for j, y in enumerate(ys):
        # target: A_next(Z(x, y))
        P, Zy = Z.values_at(thf, np.full(thf.shape[1], y))
        zt = thf + np.multiply.outer(freq.vec, P)
        fx = eval_strip_pair(A_next.fx, A_next.fy, zt, Zy)
        dx = A_next.alpha + A_next.twist * Zy + fx[..., 0]
        t_disp = P + dx                       # x-displacement of A(Z) vs x
        t_y = Zy + fx[..., 1]
        # seed: Phi_plus(x, y)
        sx = eval_strip_pair(phi_plus.fx, phi_plus.fy, thf, np.full(thf.shape[1], y))
        seed_disp = A_next.alpha + twist_next * y + sx[..., 0]
        seed_y = y + sx[..., 1]
        a, yv = _pullback_grid(Z, thf, t_disp, t_y, seed_disp, seed_y,
                               freq, tol * scale)
        a_out[..., j] = (a - A_next.alpha - twist_next * y).reshape(shape)
        y_out[..., j] = (yv - y).reshape(shape)

    dom = StripDomain(r_pl, s_pl)
    hx = StripFunction.from_grid(a_out, freq, dom, K, J)
    hy = StripFunction.from_grid(y_out, freq, dom, K, J)
    H_next = NormalizedMap(A_next.alpha, twist_next, hx, hy, dom)

    report = {}
    if A_prev is not None:
        diff = max(_member_diff(A_prev, A_next))
        bound = lc_next["b"] * (2.0 * lc_next["s"]) / 7.0   # b_{k+1} * s_k / 7
        report["family_gap"] = diff
        report["family_gap_bound"] = bound
        report["family_gap_ok"] = bool(diff <= bound)
        shift = max(float(np.max(np.abs(hx.coeffs - phi_plus.fx.coeffs))),
                    float(np.max(np.abs(hy.coeffs - phi_plus.fy.coeffs))))
        report["H_minus_phi"] = shift
        report["H_minus_phi_bound"] = diff / max(lc_next["b"], 1e-300)
    return H_next, report


def _member_diff(A: NormalizedMap, B: NormalizedMap):
    N = default_grid(max(A.fx.K, B.fx.K))
    ys = min(A.domain.s, B.domain.s) * cheb_nodes(A.fx.J)
    dx = float(np.max(np.abs(A.fx.sample(N, ys) - B.fx.sample(N, ys))))
    dy = float(np.max(np.abs(A.fy.sample(N, ys) - B.fy.sample(N, ys))))
    return dx, dy


# ---------------------------------------------------------------------------
# intersection bound
# ---------------------------------------------------------------------------

def intersection_bound(Z: ConjugacyMap, exact: ExactNormalizedMap, Q: TruncationPolynomial,
                       s_plus: float, alpha: float, eps_plus: float,
                       n_eta: int = 7, n_xi: int = 128, span: float = 150.0,
                       atol: float = 1e-12) -> dict:
    """Witness xi0(eta) of Psi^(2)(xi0, eta) = eta on curves xi -> Z(xi, eta)
    and the |Q| <= 3N bound extracted from the measured N.

    Psi is the pullback of the exact map A through Z on the reals.
    """
    freq = Z.P.freq
    etas = np.linspace(-0.9 * s_plus, 0.9 * s_plus, n_eta)
    xis = np.linspace(0.0, span, n_xi, endpoint=False)
    witnesses = []
    N_glob = 0.0
    for eta in etas:
        th = np.multiply.outer(freq.vec, xis)
        P, Zy = Z.values_at(th, np.full(n_xi, eta))
        zt = th + np.multiply.outer(freq.vec, P)
        dx, dy = exact.displacement(zt, Zy)
        t_disp = P + dx
        t_y = Zy + dy
        seed_disp = np.full(n_xi, alpha + eps_plus * eta)
        seed_y = np.full(n_xi, eta)
        a, yv = _pullback_grid(Z, th, t_disp, t_y,
                               seed_disp, seed_y, freq, 1e-12 * (1 + abs(alpha)))
        d = yv - eta                          # Psi^(2) - eta along the curve
        psi1_dev = a - alpha - eps_plus * eta  # Psi^(1) - (xi + alpha + eps+ eta)
        N_glob = max(N_glob, float(np.max(np.abs(d - Q.eval(eta)))),
                     float(np.max(np.abs(psi1_dev))))
        scale = 1.0 + abs(eta)
        if float(np.min(np.abs(d))) <= atol * scale:
            witnesses.append((float(eta), float(xis[int(np.argmin(np.abs(d)))])))
        else:
            sgn = np.sign(d)
            flips = np.nonzero(sgn[:-1] * sgn[1:] < 0)[0]
            if flips.size == 0:
                raise NoIntersectionWitness(
                    f"no radial sign change at eta = {eta:.3e} "
                    f"(min d = {float(np.min(d)):.3e}, max d = {float(np.max(d)):.3e})")
            i = int(flips[0])
            witnesses.append((float(eta), float(0.5 * (xis[i] + xis[i + 1]))))
    q_sup = Q.sup_disc(s_plus)
    slack = 1e-12 + 4.0 * atol
    passed = bool(abs(Q.a0) <= N_glob + slack
                  and abs(Q.a1) * s_plus + abs(Q.a2) * s_plus**2 <= 2 * N_glob + slack
                  and q_sup <= 3 * N_glob + slack)
    return {"witnesses": witnesses, "N_measured": N_glob, "Q_sup": q_sup,
            "pass": passed}


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------

@dataclass
class InvariantCurve:
    """theta = xi + phi(xi), r = psi(xi); conjugates the map to xi -> xi+alpha."""

    phi: ShellFunction
    psi: ShellFunction
    rotation: RotationNumber
    defect: float

    def points(self, xi):
        xi = np.asarray(xi, dtype=float)
        return xi + self.phi.eval(xi).real, self.psi.eval(xi).real

    def conjugacy_residual(self, mp: QpPlanarMap, xis) -> float:
        th, r = self.points(xis)
        th1, r1 = mp.apply((th, r), check_strip=False)
        th_t, r_t = self.points(np.asarray(xis) + self.rotation.alpha)
        return float(max(np.max(np.abs(th1 - th_t)), np.max(np.abs(r1 - r_t))))


@dataclass
class RunResult:
    curve: InvariantCurve
    trace: list
    converged: bool
    levels_used: int
    Z: ConjugacyMap
    y_scale: float


def _curve_from_Z(Z: ConjugacyMap, exact: ExactNormalizedMap,
                  rotation: RotationNumber) -> InvariantCurve:
    freq = Z.P.freq
    phi = ShellFunction(freq, Z.P.modes_at_y(0.0), 0.0)
    psi_shell = ShellFunction(freq, Z.S.modes_at_y(0.0) * exact.y_scale, 0.0)
    psi = psi_shell + rotation.alpha
    return InvariantCurve(phi, psi, rotation, math.nan)


def _real_defect(Z: ConjugacyMap, exact: ExactNormalizedMap, alpha: float,
                 N: int = 192, span: float = 240.0) -> float:
    """sup over real xi of |A o Z(xi,0) - Z(xi+alpha,0)| in original units."""
    freq = Z.P.freq
    xis = np.linspace(0.0, span, N, endpoint=False)
    th = np.multiply.outer(freq.vec, xis)
    P, Zy = Z.values_at(th, np.zeros(N))
    zt = th + np.multiply.outer(freq.vec, P)
    dx, dy = exact.displacement(zt, Zy)
    img_x = xis + P + dx
    img_y = Zy + dy
    Ps = Z.P.shift_x(alpha)
    Ss = Z.S.shift_x(alpha)
    vals = eval_strip_pair(Ps, Ss, th, np.zeros(N))
    tgt_x = xis + alpha + vals[..., 0]
    tgt_y = vals[..., 1]
    return float(max(np.max(np.abs(img_x - tgt_x)),
                     exact.y_scale * np.max(np.abs(img_y - tgt_y))))


def run(mp: QpPlanarMap, alpha: RotationNumber, schedule: KamSchedule,
        tol: float = 1e-8, k_max: int | None = None, K_trunc: int = 8, J: int = 6,
        y_scale: float = 1.0, start_level: int | str = "auto",
        check_intersection: bool = True, raise_on_fail: bool = True) -> RunResult:
    """Construct the invariant curve with rotation number alpha.

    Iterates inductive_step + solve_back (+ intersection_bound) from the first
    level whose mollified family member differs from the twist; the trace
    records the defect in original (theta, r) units per level.
    """
    k_max = schedule.k_max if k_max is None else min(k_max, schedule.k_max)
    norm = normalize(mp, alpha, schedule, K_trunc, J, y_scale=y_scale)
    exact, member = norm.exact, norm.family
    sigma = norm.y_scale
    freq = mp.freq

    if start_level == "auto":
        k0 = 0
        base_scale = mp.sup_norm_fg / sigma + 1e-300
        for k in range(k_max + 1):
            if member(k).defect_sup() > 1e-13 * base_scale:
                k0 = k
                break
        else:
            k0 = 0
    else:
        k0 = int(start_level)

    dom_prime = StripDomain(float(schedule.r_prime[k0]), float(schedule.s_prime[k0]))
    Z = ConjugacyMap.identity(freq, dom_prime, K_trunc, J)
    A_cur = member(k0)
    H = A_cur.restricted(StripDomain(float(schedule.r[k0]), float(schedule.s[k0])))
    H = NormalizedMap(alpha.alpha, sigma, H.fx, H.fy, H.domain)

    trace = []
    k = k0
    cycle = 0
    converged = False
    while True:
        defect = _real_defect(Z, exact, alpha.alpha)
        rec = {"k": k, "defect": defect, "M_k": float(schedule.M[k]),
               "BM_k": float(schedule.B[k] * schedule.M[k]),
               "regime": "proof" if H.defect_sup() <= schedule.M[k] else "numerical"}
        trace.append(rec)
        if defect <= tol:
            converged = True
            break
        if k >= k_max:
            break

        lc = LevelContext(k=k, r=float(schedule.r[k]), s=float(schedule.s[k]),
                          theta=schedule.theta, q=schedule.q,
                          eps=sigma * schedule.theta**cycle,
                          M_paper=float(schedule.M[k]), alpha=alpha)
        try:
            step = inductive_step(H, lc)
            rec["contraction_iters"] = step.report["contraction_iters"]
            rec["w_minus_theta"] = step.report["w_minus_theta"]
            rec["Q"] = [step.Q.a0, step.Q.a1, step.Q.a2]

            # Z_{k+1} = Z_k o W_k on D'_{k+1}
            Z = compose_conjugacy(Z, step.w_u, step.w_v, lc, schedule)

            # replace A_k by A_{k+1} through the new conjugacy
            A_next = member(k + 1)
            lc_next = {"r": float(schedule.r[k + 1]), "s": float(schedule.s[k + 1]),
                       "b": float(Z.b)}
            H, sb_report = solve_back(Z, A_next, step.phi_plus, lc_next, A_prev=A_cur)
            rec["solve_back"] = sb_report
            A_cur = A_next
        except (ContractionDiverged, RootFindFailed) as exc:
            rec["failure"] = f"{type(exc).__name__}: {exc}"
            break

        if check_intersection:
            try:
                rec["intersection"] = intersection_bound(
                    Z, exact, step.Q, float(schedule.s[k + 1]), alpha.alpha,
                    lc.eps_plus)
            except NoIntersectionWitness as exc:
                rec["intersection"] = {"pass": False, "error": str(exc)}
        k += 1
        cycle += 1

    curve = _curve_from_Z(Z, exact, alpha)
    curve.defect = trace[-1]["defect"]
    result = RunResult(curve, trace, converged, k - k0, Z, sigma)
    if not converged and raise_on_fail:
        raise NotConverged(f"defect {trace[-1]['defect']:.3e} > tol {tol:.3e} "
                           f"after level {k}", trace=trace)
    return result


def compose_conjugacy(Z: ConjugacyMap, w_u: StripFunction, w_v: StripFunction,
                      lc: LevelContext, schedule: KamSchedule) -> ConjugacyMap:
    """Z_new = Z o (Theta + w), represented on D'_{k+1}."""
    freq = Z.P.freq
    n = freq.n
    K, J = Z.P.K, Z.P.J
    dom_new = StripDomain(lc.rp_plus, lc.sp_plus)
    N = default_grid(K)
    th = theta_grid(N, n)
    thf = th.reshape(n, -1)
    ys = lc.sp_plus * cheb_nodes(J)
    shape = (N,) * n
    P_new = np.empty(shape + (J + 1,))
    S_new = np.empty(shape + (J + 1,))
    theta_c = lc.theta
    for j, y in enumerate(ys):
        wv = eval_strip_pair(w_u, w_v, thf, np.full(thf.shape[1], y))
        u_val, v_val = wv[..., 0], wv[..., 1]
        wy = theta_c * y + v_val
        th_args = thf + np.multiply.outer(freq.vec, u_val)
        vals = eval_strip_pair(Z.P, Z.S, th_args, wy)
        P_new[..., j] = (u_val + vals[..., 0]).reshape(shape)
        S_new[..., j] = (Z.L * v_val + vals[..., 1]).reshape(shape)
    P = StripFunction.from_grid(P_new, freq, dom_new, K, J)
    S = StripFunction.from_grid(S_new, freq, dom_new, K, J)
    return ConjugacyMap(P, S, Z.L * theta_c,
                        Z.b * theta_c * (1 - schedule.q), Z.B * (1 + schedule.q),
                        dom_new)
