"""Algebra of quasi-periodic shell functions and strip functions.

A quasi-periodic function f(t) = F(omega_1 t, ..., omega_n t) is represented by
the truncated Fourier coefficients of its shell function F on the n-torus,
stored on the centered lattice box {k : |k|_inf <= K}.  Functions of (x, y)
holomorphic on a strip D(r, s) = {|Im x| < r, |y| < s} carry an extra Chebyshev
index for the y dependence (basis T_j(y/s)).

Lattice magnitudes |k| inside analytic estimates (norm weights, Diophantine
bounds, divisor sums) are l1 norms; the storage/enumeration boxes are max-norm.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial import chebyshev as npcheb

from .errors import (
    CertifiedStripExceeded,
    NoConvergence,
    NotMonotone,
    RealityDefect,
)

TWO_PI = 2.0 * np.pi

# Conjugate-symmetry defect above this (times scale) fails fast.
REALITY_TOL = 1e-10


# ---------------------------------------------------------------------------
# frequency vector
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Frequency:
    """Rationally independent frequency vector with optional Diophantine data.

    c and sigma0 certify |<k,omega>| >= c/|k|_1^sigma0 for all 0 < |k|_inf <= cutoff;
    they are filled in by diophantine.certify_frequency.
    """

    omega: tuple
    c: float | None = None
    sigma0: float | None = None
    cutoff: int = 0

    def __post_init__(self):
        om = tuple(float(w) for w in self.omega)
        if len(om) < 1:
            raise ValueError("empty frequency vector")
        if not all(math.isfinite(w) and w != 0.0 for w in om):
            raise ValueError("frequencies must be finite and nonzero")
        object.__setattr__(self, "omega", om)

    @property
    def n(self) -> int:
        return len(self.omega)

    @property
    def vec(self) -> np.ndarray:
        return np.array(self.omega)

    def same_omega(self, other: "Frequency") -> bool:
        return self.omega == other.omega


# ---------------------------------------------------------------------------
# lattice helpers (cached per (K, n))
# ---------------------------------------------------------------------------

@lru_cache(maxsize=64)
def _lattice(K: int, n: int):
    axes = [np.arange(-K, K + 1)] * n
    mesh = np.meshgrid(*axes, indexing="ij") if n > 1 else [axes[0]]
    kstack = np.stack(mesh)                       # (n,) + box shape
    k1 = np.abs(kstack).sum(axis=0)               # l1 norm, box shape
    return kstack, k1


def mode_vectors(K: int, n: int) -> np.ndarray:
    """All lattice vectors of the box |k|_inf <= K, shape (n, (2K+1)^n)."""
    kstack, _ = _lattice(K, n)
    return kstack.reshape(n, -1)


def k1_norms(K: int, n: int) -> np.ndarray:
    return _lattice(K, n)[1]


def k_dot_omega(K: int, omega: np.ndarray) -> np.ndarray:
    kstack, _ = _lattice(K, len(omega))
    return np.tensordot(np.asarray(omega), kstack, axes=1)


def _fft_indices(K: int, N: int) -> np.ndarray:
    return np.arange(-K, K + 1) % N


def embed_fft(coeffs: np.ndarray, n: int, N: int) -> np.ndarray:
    """Place a centered mode box into an (N,)*n FFT-layout array."""
    K = (coeffs.shape[0] - 1) // 2
    if N < 2 * K + 1:
        raise ValueError(f"grid N={N} cannot hold modes up to K={K}")
    out = np.zeros((N,) * n + coeffs.shape[n:], dtype=complex)
    idx = [_fft_indices(K, N)] * n
    out[np.ix_(*idx)] = coeffs
    return out


def extract_fft(grid_fft: np.ndarray, n: int, K: int) -> np.ndarray:
    N = grid_fft.shape[0]
    idx = [_fft_indices(K, N)] * n
    return grid_fft[np.ix_(*idx)] / N**n


def synthesize(coeffs: np.ndarray, n: int, N: int) -> np.ndarray:
    """Values of sum_k c_k e^{i<k,theta>} on the uniform (N,)*n torus grid."""
    spread = embed_fft(coeffs, n, N)
    return np.fft.ifftn(spread, axes=tuple(range(n))) * N**n


def analyze(values: np.ndarray, n: int, K: int) -> np.ndarray:
    """Centered mode box from values on a uniform torus grid (extra axes kept)."""
    N = values.shape[0]
    grid_fft = np.fft.fftn(values, axes=tuple(range(n)))
    return extract_fft(grid_fft, n, K)


def theta_grid(N: int, n: int) -> np.ndarray:
    """Uniform torus grid, shape (n,) + (N,)*n."""
    t = TWO_PI * np.arange(N) / N
    mesh = np.meshgrid(*([t] * n), indexing="ij") if n > 1 else [t]
    return np.stack(mesh)


def default_grid(K: int) -> int:
    """Oversampled grid size: twice the alias-free minimum."""
    return max(2 * (2 * K + 1), 8)


def eval_modes(coeffs: np.ndarray, theta_pts: np.ndarray) -> np.ndarray:
    """Evaluate a centered mode box at scattered torus points.

    theta_pts has shape (n, P); returns shape (P,) + trailing axes of coeffs.
    Contracts one torus axis at a time to keep memory O(P * (2K+1)).
    """
    n = theta_pts.shape[0]
    K = (coeffs.shape[0] - 1) // 2
    ks = np.arange(-K, K + 1)
    res = coeffs
    for d in range(n):
        phase = np.exp(1j * np.multiply.outer(theta_pts[d], ks))  # (P, 2K+1)
        if d == 0:
            res = np.einsum("pk,k...->p...", phase, res)
        else:
            res = np.einsum("pk,pk...->p...", phase, res)
    return res


def symmetrize(coeffs: np.ndarray, n: int, tol: float = REALITY_TOL, check: bool = True):
    """Average with the conjugate-reflected box; returns (sym, defect).

    Enforces f_{-k} = conj(f_k) along the torus axes (reality class).  With
    check=True a defect above tol*(1 + scale) fails fast; grid-recovery paths
    use that mode, explicit symmetrization of user data passes check=False.
    """
    flipped = np.flip(coeffs, axis=tuple(range(n))).conj()
    sym = 0.5 * (coeffs + flipped)
    defect = float(np.max(np.abs(coeffs - flipped))) * 0.5 if coeffs.size else 0.0
    scale = 1.0 + float(np.max(np.abs(coeffs))) if coeffs.size else 1.0
    if check and defect > tol * scale:
        raise RealityDefect(f"symmetrization defect {defect:.3e} (scale {scale:.3e})")
    return sym, defect


def _pairwise_upper(amps: np.ndarray, n: int, weight_plus: np.ndarray,
                    weight_minus: np.ndarray) -> float:
    """Sum over conjugate pairs of max*e^{+} + min*e^{-} (each pair once)."""
    flipped = np.flip(amps, axis=tuple(range(n)))
    big = np.maximum(amps, flipped)
    small = np.minimum(amps, flipped)
    return float(0.5 * np.sum(big * weight_plus + small * weight_minus))


# ---------------------------------------------------------------------------
# Chebyshev helpers
# ---------------------------------------------------------------------------

@lru_cache(maxsize=64)
def cheb_nodes(J: int) -> np.ndarray:
    """Roots of T_{J+1} on (-1, 1)."""
    m = np.arange(J + 1)
    return np.cos(np.pi * (2 * m + 1) / (2 * (J + 1)))


@lru_cache(maxsize=64)
def cheb_analysis_matrix(J: int) -> np.ndarray:
    """Matrix C with coeffs = values @ C.T for values at cheb_nodes(J)."""
    m = np.arange(J + 1)
    j = np.arange(J + 1)[:, None]
    C = np.cos(j * np.pi * (2 * m + 1) / (2 * (J + 1))) * (2.0 / (J + 1))
    C[0] *= 0.5
    return C


def cheb_fit_last_axis(values: np.ndarray, J: int) -> np.ndarray:
    """Chebyshev coefficients along the last axis (values at cheb_nodes(J))."""
    return values @ cheb_analysis_matrix(J).T


def cheb_eval_rows(coeffs: np.ndarray, t) -> np.ndarray:
    """Clenshaw evaluation of per-row Chebyshev series at per-row points t.

    coeffs has shape (..., J+1); t broadcasts against the leading shape.
    """
    t = np.asarray(t)
    J = coeffs.shape[-1] - 1
    b1 = np.zeros(np.broadcast_shapes(coeffs.shape[:-1], t.shape), dtype=coeffs.dtype)
    b2 = np.zeros_like(b1)
    for j in range(J, 0, -1):
        b1, b2 = 2 * t * b1 - b2 + coeffs[..., j], b1
    return t * b1 - b2 + coeffs[..., 0]


def cheb_disc_bounds(J: int, t: float) -> np.ndarray:
    """M_j(t) = max_{|z|<=t} |T_j(z)| for j = 0..J (attained at z = i t)."""
    out = np.empty(J + 1)
    out[0] = 1.0
    if J >= 1:
        out[1] = t
    for j in range(1, J):
        out[j + 1] = 2 * t * out[j] + out[j - 1]
    return out


# ---------------------------------------------------------------------------
# shell functions (quasi-periodic functions of one variable)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ShellFunction:
    """Truncated Fourier series on the n-torus shell of a quasi-periodic f(t)."""

    freq: Frequency
    coeffs: np.ndarray    # complex, shape (2K+1,)*n
    width: float = 0.0

    @property
    def n(self) -> int:
        return self.freq.n

    @property
    def K(self) -> int:
        return (self.coeffs.shape[0] - 1) // 2

    # -- constructors -------------------------------------------------------

    @staticmethod
    def zeros(freq: Frequency, K: int, width: float = 0.0) -> "ShellFunction":
        return ShellFunction(freq, np.zeros((2 * K + 1,) * freq.n, dtype=complex), width)

    @staticmethod
    def constant(freq: Frequency, value: float, K: int = 0, width: float = np.inf) -> "ShellFunction":
        f = ShellFunction.zeros(freq, K, width)
        f.coeffs[(K,) * freq.n] = value
        return f

    @staticmethod
    def from_modes(freq: Frequency, modes: dict, K: int, width: float = 0.0,
                   real: bool = True) -> "ShellFunction":
        """Build from {k_tuple: amplitude}; real=True also stores conjugates."""
        coeffs = np.zeros((2 * K + 1,) * freq.n, dtype=complex)
        for k, a in modes.items():
            idx = tuple(int(ki) + K for ki in k)
            coeffs[idx] += a
            if real and any(ki != 0 for ki in k):
                ridx = tuple(-int(ki) + K for ki in k)
                coeffs[ridx] += np.conj(a)
        return ShellFunction(freq, coeffs, width)

    @staticmethod
    def from_grid(values: np.ndarray, freq: Frequency, K: int, width: float = 0.0,
                  enforce_reality: bool = True) -> "ShellFunction":
        coeffs = analyze(np.asarray(values, dtype=complex), freq.n, K)
        if enforce_reality:
            coeffs, _ = symmetrize(coeffs, freq.n)
        return ShellFunction(freq, coeffs, width)

    # -- evaluation ----------------------------------------------------------

    def eval_theta(self, theta_pts: np.ndarray) -> np.ndarray:
        """Evaluate the shell at scattered torus points, shape (n, P)."""
        return eval_modes(self.coeffs, np.atleast_2d(theta_pts))

    def eval(self, x) -> np.ndarray | complex:
        """Evaluate f(x) = sum_k f_k e^{i<k,omega>x}; x scalar or array."""
        x_arr = np.asarray(x, dtype=complex)
        theta = np.multiply.outer(self.freq.vec, x_arr.ravel())
        vals = eval_modes(self.coeffs, theta)
        vals = vals.reshape(x_arr.shape)
        return complex(vals) if vals.ndim == 0 else vals

    def eval_real(self, x) -> np.ndarray | float:
        v = self.eval(x)
        return np.real(v) if isinstance(v, np.ndarray) else v.real

    def in_strip(self, x) -> bool:
        """Whether Im(x)*max|omega_j| stays within the certified width."""
        imax = float(np.max(np.abs(np.imag(np.asarray(x, dtype=complex)))))
        return imax * float(np.max(np.abs(self.freq.vec))) <= self.width + 1e-15

    def sample(self, N: int | None = None) -> np.ndarray:
        N = N or default_grid(self.K)
        return synthesize(self.coeffs, self.n, N).real

    # -- algebra -------------------------------------------------------------

    def _aligned(self, other: "ShellFunction"):
        if not self.freq.same_omega(other.freq):
            raise ValueError("frequency mismatch")
        K = max(self.K, other.K)
        return self.pad_to(K), other.pad_to(K), K

    def pad_to(self, K: int) -> "ShellFunction":
        if K == self.K:
            return self
        if K < self.K:
            raise ValueError("cannot shrink mode box")
        pad = K - self.K
        coeffs = np.pad(self.coeffs, [(pad, pad)] * self.n)
        return ShellFunction(self.freq, coeffs, self.width)

    def __add__(self, other):
        if isinstance(other, ShellFunction):
            a, b, K = self._aligned(other)
            return ShellFunction(self.freq, a.coeffs + b.coeffs,
                                 min(self.width, other.width))
        f = ShellFunction(self.freq, self.coeffs.copy(), self.width)
        f.coeffs[(self.K,) * self.n] += other
        return f

    def __sub__(self, other):
        return self + (other * -1.0 if isinstance(other, ShellFunction) else -other)

    def __mul__(self, scalar):
        return ShellFunction(self.freq, self.coeffs * scalar, self.width)

    __rmul__ = __mul__

    def derivative(self) -> "ShellFunction":
        """d/dt of f(t): multiply mode k by i<k,omega>."""
        kw = k_dot_omega(self.K, self.freq.vec)
        return ShellFunction(self.freq, self.coeffs * (1j * kw), self.width)

    def shift(self, a: float) -> "ShellFunction":
        """t -> t + a: multiply mode k by e^{i<k,omega>a}."""
        kw = k_dot_omega(self.K, self.freq.vec)
        return ShellFunction(self.freq, self.coeffs * np.exp(1j * kw * a), self.width)

    def mean(self) -> float:
        return float(self.coeffs[(self.K,) * self.n].real)

    def symmetrized(self, check: bool = False):
        coeffs, defect = symmetrize(self.coeffs, self.n, check=check)
        return ShellFunction(self.freq, coeffs, self.width), defect

    # -- norms ---------------------------------------------------------------

    def norm_upper(self, rho: float = 0.0) -> float:
        """Conjugate-pair coefficient bound for sup over the strip |Im theta_j| <= rho."""
        k1 = k1_norms(self.K, self.n)
        return _pairwise_upper(np.abs(self.coeffs), self.n,
                               np.exp(rho * k1), np.exp(-rho * k1))

    def norm_lower(self, rho: float = 0.0, N: int | None = None) -> float:
        """Grid max over the real torus and the 2^n imaginary corner sheets."""
        N = N or default_grid(self.K)
        best = float(np.max(np.abs(synthesize(self.coeffs, self.n, N))))
        if rho > 0:
            kstack, _ = _lattice(self.K, self.n)
            for signs in np.ndindex(*([2] * self.n)):
                v = rho * (2 * np.array(signs) - 1)
                damped = self.coeffs * np.exp(-np.tensordot(v, kstack, axes=1))
                best = max(best, float(np.max(np.abs(synthesize(damped, self.n, N)))))
        return best

    def sup_norm(self, rho: float = 0.0):
        """Bracketing interval [grid max, weighted coefficient sum] for |f|_rho."""
        return self.norm_lower(rho), self.norm_upper(rho)


def eval_shell(f: ShellFunction, x):
    """Operation-level evaluation returning (value, extrapolated_flag)."""
    return f.eval(x), not f.in_strip(x)


def shell_product(f: ShellFunction, g: ShellFunction, K_out: int | None = None) -> ShellFunction:
    """Pointwise product computed on an alias-safe grid."""
    if not f.freq.same_omega(g.freq):
        raise ValueError("frequency mismatch")
    K_out = K_out if K_out is not None else f.K + g.K
    N = default_grid(max(K_out, f.K + g.K))
    vals = synthesize(f.coeffs, f.n, N) * synthesize(g.coeffs, g.n, N)
    return ShellFunction.from_grid(vals, f.freq, K_out, min(f.width, g.width))


def compose_angle(g: ShellFunction, f: ShellFunction, K_out: int | None = None,
                  grid_factor: int = 1, require_width: float | None = None) -> ShellFunction:
    """Quasi-periodic composition t -> g(t + f(t)) by shell collocation.

    The result's certified width w solves w + max|omega_j|*|f|_w <= g.width.
    Raises CertifiedStripExceeded when that bookkeeping cannot certify the
    requested require_width (the displaced strip leaves g's strip).
    """
    if not f.freq.same_omega(g.freq):
        raise ValueError("frequency mismatch")
    n = f.n
    K_out = K_out if K_out is not None else max(f.K, g.K)
    N = grid_factor * default_grid(K_out)
    fvals = synthesize(f.coeffs, n, N).real
    omax = float(np.max(np.abs(f.freq.vec)))
    theta = theta_grid(N, n).reshape(n, -1)
    shifted = theta + np.multiply.outer(f.freq.vec, fvals.ravel())
    gvals = eval_modes(g.coeffs, shifted).reshape((N,) * n)
    # remaining strip width of the composition: w + |omega|*|f|_w <= g.width
    width = 0.0
    if g.width > 0 and np.isfinite(g.width):
        lo, hi = 0.0, min(f.width, g.width) if f.width > 0 else g.width
        if omax * f.norm_upper(0.0) <= g.width:
            for _ in range(40):
                mid = 0.5 * (lo + hi)
                if mid + omax * f.norm_upper(mid) <= g.width:
                    lo = mid
                else:
                    hi = mid
            width = lo
    elif np.isinf(g.width):
        width = f.width
    if require_width is not None and width < require_width:
        raise CertifiedStripExceeded(
            f"certified width {width:.3e} below required {require_width:.3e} "
            f"(|f|_0*max|omega| = {f.norm_upper(0.0) * omax:.3e}, g width {g.width:.3e})")
    return ShellFunction.from_grid(gvals, f.freq, K_out, width)


def invert_angle_map(h: ShellFunction, K_out: int | None = None, tol: float = 1e-13,
                     max_iter: int = 60, grid_factor: int = 1) -> ShellFunction:
    """Inverse displacement h1 with (t + h(t)) o (tau + h1(tau)) = id.

    Damped-Newton iteration on a collocation grid for the residual
    v + h(tau + v); the beta = 1 case of the quasi-periodic inverse lemma.
    """
    n = h.n
    K_out = K_out if K_out is not None else h.K
    N = grid_factor * default_grid(max(K_out, h.K))
    dcoeffs = h.derivative().coeffs
    dvals = synthesize(dcoeffs, n, N).real
    if float(np.min(1.0 + dvals)) <= 0.0:
        raise NotMonotone(f"min(1 + h') = {float(np.min(1.0 + dvals)):.3e}")
    theta = theta_grid(N, n).reshape(n, -1)
    stacked = np.stack([h.coeffs, dcoeffs], axis=-1)
    omega = h.freq.vec
    # per point the residual v + h(tau + v) is strictly increasing in v
    # (1 + h' > 0), so the root is unique and bracketed by +-sup|h|
    bound = h.norm_upper(0.0) + 1e-12
    lo = np.full(theta.shape[1], -bound)
    hi = np.full(theta.shape[1], bound)
    v = np.zeros(theta.shape[1])
    for _ in range(max_iter):
        shifted = theta + np.multiply.outer(omega, v)
        both = eval_modes(stacked, shifted).real
        res = v + both[:, 0]
        hi = np.where(res > 0, np.minimum(hi, v), hi)
        lo = np.where(res <= 0, np.maximum(lo, v), lo)
        if float(np.max(np.abs(res))) < tol:
            break
        slope = np.maximum(1.0 + both[:, 1], 1e-3)
        cand = v - res / slope
        inside = (cand > lo) & (cand < hi)
        v = np.where(inside, cand, 0.5 * (lo + hi))
    else:
        raise NoConvergence(
            f"angle inversion stalled at residual = {float(np.max(np.abs(res))):.3e}")
    return ShellFunction.from_grid(v.reshape((N,) * n), h.freq, K_out, 0.0)


# ---------------------------------------------------------------------------
# strip functions (quasi-periodic in x, polynomial in y)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StripDomain:
    r: float
    s: float

    def __post_init__(self):
        if not (self.r > 0 and self.s > 0):
            raise ValueError("strip domain needs r > 0 and s > 0")

    def shrink_x(self, rho: float) -> "StripDomain":
        return StripDomain(self.r - rho, self.s)


@dataclass(frozen=True)
class StripFunction:
    """Fourier (torus shell) x Chebyshev (y on [-s, s]) representation.

    coeffs has shape (2K+1,)*n + (J+1,); the last axis multiplies T_j(y/s).
    """

    freq: Frequency
    domain: StripDomain
    coeffs: np.ndarray

    @property
    def n(self) -> int:
        return self.freq.n

    @property
    def K(self) -> int:
        return (self.coeffs.shape[0] - 1) // 2

    @property
    def J(self) -> int:
        return self.coeffs.shape[-1] - 1

    # -- constructors --------------------------------------------------------

    @staticmethod
    def zeros(freq: Frequency, domain: StripDomain, K: int, J: int) -> "StripFunction":
        return StripFunction(freq, domain,
                             np.zeros((2 * K + 1,) * freq.n + (J + 1,), dtype=complex))

    @staticmethod
    def constant(freq: Frequency, domain: StripDomain, value: float,
                 K: int = 0, J: int = 0) -> "StripFunction":
        f = StripFunction.zeros(freq, domain, K, J)
        f.coeffs[(K,) * freq.n + (0,)] = value
        return f

    @staticmethod
    def from_shell(shell: ShellFunction, domain: StripDomain, J: int = 0) -> "StripFunction":
        coeffs = np.zeros(shell.coeffs.shape + (J + 1,), dtype=complex)
        coeffs[..., 0] = shell.coeffs
        return StripFunction(shell.freq, domain, coeffs)

    @staticmethod
    def from_grid(values: np.ndarray, freq: Frequency, domain: StripDomain,
                  K: int, J: int, enforce_reality: bool = True) -> "StripFunction":
        """Values on (theta grid)^n x cheb_nodes(J)*s, last axis the y nodes."""
        cheb = cheb_fit_last_axis(np.asarray(values, dtype=complex), J)
        coeffs = analyze(cheb, freq.n, K)
        if enforce_reality:
            coeffs, _ = symmetrize(coeffs, freq.n)
        return StripFunction(freq, domain, coeffs)

    @staticmethod
    def from_sampler(sampler, freq: Frequency, domain: StripDomain, K: int, J: int,
                     N: int | None = None, enforce_reality: bool = True) -> "StripFunction":
        """Sample sampler(theta_stack, y) on the collocation grid and project."""
        n = freq.n
        N = N or default_grid(K)
        th = theta_grid(N, n)
        ys = domain.s * cheb_nodes(J)
        vals = np.empty((N,) * n + (J + 1,))
        for m, y in enumerate(ys):
            vals[..., m] = sampler(th, y)
        return StripFunction.from_grid(vals, freq, domain, K, J, enforce_reality)

    # -- evaluation ----------------------------------------------------------

    def y_nodes(self) -> np.ndarray:
        return self.domain.s * cheb_nodes(self.J)

    def modes_at_y(self, y) -> np.ndarray:
        """Fourier mode box evaluated at fixed y (scalar), shape (2K+1,)*n."""
        return cheb_eval_rows(self.coeffs, np.asarray(y) / self.domain.s)

    def sample(self, N: int | None = None, ys: np.ndarray | None = None) -> np.ndarray:
        """Real values on the torus grid x given y points (default cheb nodes)."""
        N = N or default_grid(self.K)
        ys = self.y_nodes() if ys is None else np.asarray(ys)
        out = np.empty((N,) * self.n + (len(ys),))
        for m, y in enumerate(ys):
            out[..., m] = synthesize(self.modes_at_y(y), self.n, N).real
        return out

    def eval_theta_y(self, theta_pts: np.ndarray, y_pts) -> np.ndarray:
        """Scattered evaluation; theta_pts (n, P), y_pts scalar or (P,)."""
        rows = eval_modes(self.coeffs, np.atleast_2d(theta_pts))   # (P, J+1)
        t = np.asarray(y_pts) / self.domain.s
        return cheb_eval_rows(rows, t)

    def eval_xy(self, x, y) -> np.ndarray:
        x_arr = np.asarray(x, dtype=complex)
        theta = np.multiply.outer(self.freq.vec, x_arr.ravel())
        y_arr = np.broadcast_to(np.asarray(y, dtype=complex), x_arr.shape).ravel()
        vals = self.eval_theta_y(theta, y_arr)
        return vals.reshape(x_arr.shape)

    # -- algebra -------------------------------------------------------------

    def _check_compatible(self, other: "StripFunction"):
        if not self.freq.same_omega(other.freq):
            raise ValueError("frequency mismatch")
        if self.coeffs.shape != other.coeffs.shape:
            raise ValueError("shape mismatch")
        if not math.isclose(self.domain.s, other.domain.s, rel_tol=1e-12):
            raise ValueError("Chebyshev scale mismatch")

    def __add__(self, other):
        if isinstance(other, StripFunction):
            self._check_compatible(other)
            dom = StripDomain(min(self.domain.r, other.domain.r), self.domain.s)
            return StripFunction(self.freq, dom, self.coeffs + other.coeffs)
        f = StripFunction(self.freq, self.domain, self.coeffs.copy())
        f.coeffs[(self.K,) * self.n + (0,)] += other
        return f

    def __sub__(self, other):
        return self + (other * -1.0 if isinstance(other, StripFunction) else -other)

    def __mul__(self, scalar):
        return StripFunction(self.freq, self.domain, self.coeffs * scalar)

    __rmul__ = __mul__

    def dx(self) -> "StripFunction":
        kw = k_dot_omega(self.K, self.freq.vec)
        return StripFunction(self.freq, self.domain, self.coeffs * (1j * kw[..., None]))

    def dy(self) -> "StripFunction":
        der = npcheb.chebder(np.moveaxis(self.coeffs, -1, 0), axis=0) / self.domain.s
        out = np.zeros_like(self.coeffs)
        out[..., : der.shape[0]] = np.moveaxis(der, 0, -1)
        return StripFunction(self.freq, self.domain, out)

    def shift_x(self, a: float) -> "StripFunction":
        kw = k_dot_omega(self.K, self.freq.vec)
        return StripFunction(self.freq, self.domain,
                             self.coeffs * np.exp(1j * kw * a)[..., None])

    def scale_y(self, factor: float) -> "StripFunction":
        """Reinterpret f(x, factor*y): same coefficients on s -> s/factor."""
        return StripFunction(self.freq, StripDomain(self.domain.r, self.domain.s / factor),
                             self.coeffs)

    def with_width(self, r_new: float) -> "StripFunction":
        return StripFunction(self.freq, StripDomain(r_new, self.domain.s), self.coeffs)

    def with_domain(self, domain: StripDomain, J_new: int | None = None) -> "StripFunction":
        """Re-expand on a new Chebyshev scale (exact for J_new >= J)."""
        J_new = self.J if J_new is None else J_new
        t_new = domain.s * cheb_nodes(J_new) / self.domain.s
        rows = cheb_eval_rows(self.coeffs[..., None, :],
                              np.broadcast_to(t_new, self.coeffs.shape[:-1] + (J_new + 1,)))
        return StripFunction(self.freq, domain, cheb_fit_last_axis(rows, J_new))

    def mean_value(self) -> np.ndarray:
        """Chebyshev coefficients (real) of [f](y), the k = 0 slice."""
        return self.coeffs[(self.K,) * self.n].real.copy()

    def mean_poly(self) -> np.ndarray:
        """Monomial coefficients b_m of [f](y) = sum_m b_m y^m."""
        cheb_c = self.mean_value()
        poly_t = npcheb.cheb2poly(cheb_c)            # in t = y/s
        return poly_t / self.domain.s ** np.arange(len(poly_t))

    def symmetrized(self, check: bool = False):
        coeffs, defect = symmetrize(self.coeffs, self.n, check=check)
        return StripFunction(self.freq, self.domain, coeffs), defect

    # -- norms ---------------------------------------------------------------

    def norm_upper(self, rho: float | None = None, sigma: float | None = None) -> float:
        """Coefficient bound for sup over D(rho, sigma) (y on the complex disc)."""
        rho = self.domain.r if rho is None else rho
        sigma = self.domain.s if sigma is None else sigma
        Mj = cheb_disc_bounds(self.J, sigma / self.domain.s)
        amps = np.abs(self.coeffs) @ Mj
        k1 = k1_norms(self.K, self.n)
        return _pairwise_upper(amps, self.n, np.exp(rho * k1), np.exp(-rho * k1))

    def norm_lower(self, rho: float | None = None, sigma: float | None = None,
                   N: int | None = None, n_ring: int = 8) -> float:
        """Max over sampled points of D(rho, sigma): real grid, corner sheets,
        and the complex y-ring |y| = sigma."""
        rho = self.domain.r if rho is None else rho
        sigma = self.domain.s if sigma is None else sigma
        N = N or default_grid(self.K)
        ys = list(sigma * cheb_nodes(max(self.J, 4)))
        ys += list(sigma * np.exp(1j * np.pi * np.arange(n_ring) / n_ring))
        best = 0.0
        kstack, _ = _lattice(self.K, self.n)
        shifts = [np.zeros(self.n)]
        if rho > 0:
            shifts += [rho * (2 * np.array(sg) - 1) for sg in np.ndindex(*([2] * self.n))]
        for y in ys:
            box = self.modes_at_y(y)
            for v in shifts:
                damped = box * np.exp(-np.tensordot(v, kstack, axes=1))
                best = max(best, float(np.max(np.abs(synthesize(damped, self.n, N)))))
        return best

    def sup_norm(self, rho: float | None = None, sigma: float | None = None):
        return self.norm_lower(rho, sigma), self.norm_upper(rho, sigma)


def strip_product(f: StripFunction, g: StripFunction, K_out: int | None = None,
                  J_out: int | None = None) -> StripFunction:
    if not f.freq.same_omega(g.freq):
        raise ValueError("frequency mismatch")
    if not math.isclose(f.domain.s, g.domain.s, rel_tol=1e-12):
        raise ValueError("Chebyshev scale mismatch")
    K_out = K_out if K_out is not None else max(f.K, g.K)
    J_out = J_out if J_out is not None else min(f.J + g.J, max(f.J, g.J) + 4)
    N = default_grid(f.K + g.K)
    ys = f.domain.s * cheb_nodes(J_out)
    vals = f.sample(N, ys) * g.sample(N, ys)
    dom = StripDomain(min(f.domain.r, g.domain.r), f.domain.s)
    return StripFunction.from_grid(vals, f.freq, dom, K_out, J_out)


def mean_value(f: StripFunction) -> np.ndarray:
    """[f](y) as Chebyshev coefficients; equals the k = 0 coefficient slice."""
    return f.mean_value()
