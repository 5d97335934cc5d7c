"""Diophantine certification of frequencies and rotation numbers.

Certification is finite: conditions are verified for all lattice vectors in
the max-norm box 0 < |k|_inf <= K and the cutoff K is recorded, which covers
every divisor a truncated solver can touch.  Magnitudes |k| inside the bounds
are l1 norms.  Lattice scans run vectorized over the whole box; enumeration by
max-norm shells is available for partial certificates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NoneAdmissible, ResonantFrequency
from .qpfourier import Frequency, mode_vectors

RESONANCE_TOL = 1e-14
TIE_TOL = 1e-15      # equality slack: closed inequalities in exact arithmetic


def _box_k1_and_kw(omega: np.ndarray, K: int):
    """l1 norms and <k,omega> for the box 0 < |k|_inf <= K (dedup k ~ -k)."""
    n = len(omega)
    kvecs = mode_vectors(K, n)                    # (n, (2K+1)^n)
    k1 = np.abs(kvecs).sum(axis=0)
    keep = k1 > 0
    # keep one of each +-k pair: first nonzero component positive
    lead = np.zeros(kvecs.shape[1], dtype=bool)
    undecided = np.ones(kvecs.shape[1], dtype=bool)
    for d in range(n):
        lead |= undecided & (kvecs[d] > 0)
        undecided &= kvecs[d] == 0
    keep &= lead
    kvecs = kvecs[:, keep]
    return kvecs, k1[keep], kvecs.T @ omega


def certify_frequency(omega, K: int, sigma0: float | None = None) -> Frequency:
    """Largest c with |<k,omega>| >= c/|k|_1^sigma0 on the box 0 < |k|_inf <= K."""
    if K < 1:
        raise ValueError("K >= 1 required")
    om = np.asarray([float(w) for w in omega])
    if not np.all(np.isfinite(om)) or np.any(om == 0):
        raise ValueError("frequencies must be finite and nonzero")
    if sigma0 is None:
        sigma0 = float(len(om))
    kvecs, k1, kw = _box_k1_and_kw(om, K)
    akw = np.abs(kw)
    worst = int(np.argmin(akw))
    if akw[worst] <= RESONANCE_TOL:
        raise ResonantFrequency(kvecs[:, worst], akw[worst])
    c = float(np.min(akw * k1**sigma0))
    return Frequency(tuple(om), c=c, sigma0=float(sigma0), cutoff=int(K))


@dataclass(frozen=True)
class RotationNumber:
    """alpha with |<k,omega>alpha/(2pi) - j| >= gamma/|k|_1^tau up to cutoff K."""

    alpha: float
    freq: Frequency
    gamma: float
    tau: float
    interval: tuple
    cutoff: int
    margin: float = math.inf   # min over the box of dist*|k|^tau/gamma (>= 1)


@dataclass(frozen=True)
class RejectionReport:
    alpha: float
    reason: str
    k: tuple | None = None
    j: int | None = None
    margin: float = math.nan

    def __bool__(self):
        return False


def _check_gamma_tau(gamma: float, tau: float, interval, n: int):
    a, b = interval
    if not tau > n:
        raise ValueError(f"tau = {tau} must exceed n = {n}")
    if not (0.0 < gamma < 0.5 * min(1.0, 12.0**3 * (b - a))):
        raise ValueError("gamma outside (0, min(1, 12^3(b-a))/2)")


def certify_rotation(alpha: float, freq: Frequency, gamma: float, tau: float,
                     interval, K: int):
    """Accept alpha into the admissible class or return a RejectionReport."""
    if K < 1:
        raise ValueError("K >= 1 required")
    _check_gamma_tau(gamma, tau, interval, freq.n)
    a, b = interval
    pad = gamma / 12.0**3
    if not (a + pad <= alpha <= b - pad):
        return RejectionReport(alpha, "interval", margin=math.nan)
    kvecs, k1, kw = _box_k1_and_kw(freq.vec, K)
    x = kw * alpha / (2.0 * math.pi)
    # gamma < 1/2 and |k| >= 1: only the nearest integer can violate the bound
    j = np.round(x)
    dist = np.abs(x - j)
    bound = gamma / k1**tau
    margins = dist * k1**tau / gamma
    bad = dist < bound - TIE_TOL
    if np.any(bad):
        worst = int(np.argmin(np.where(bad, margins, np.inf)))
        return RejectionReport(alpha, "divisor", k=tuple(int(v) for v in kvecs[:, worst]),
                               j=int(j[worst]), margin=float(margins[worst]))
    return RotationNumber(float(alpha), freq, float(gamma), float(tau),
                          (float(a), float(b)), int(K), float(np.min(margins)))


@dataclass
class AdmissibleSample:
    accepted: list
    fraction: float
    gamma: float
    tau: float
    count: int
    seed: int
    alphas: np.ndarray = field(repr=False, default=None)
    mask: np.ndarray = field(repr=False, default=None)


def admissible_mask(alphas: np.ndarray, freq: Frequency, gamma: float, tau: float,
                    interval, K: int) -> np.ndarray:
    """Vectorized certification of a batch of alphas (divisor + interval lines)."""
    a, b = interval
    pad = gamma / 12.0**3
    _, k1, kw = _box_k1_and_kw(freq.vec, K)
    x = np.multiply.outer(kw, alphas) / (2.0 * math.pi)
    dist = np.abs(x - np.round(x))
    ok = np.all(dist >= (gamma / k1**tau)[:, None] - TIE_TOL, axis=0)
    ok &= (alphas >= a + pad) & (alphas <= b - pad)
    return ok


def sample_admissible(freq: Frequency, gamma: float, tau: float, interval,
                      K: int, count: int, seed: int = 0) -> AdmissibleSample:
    """Uniform draws from the padded interval, certified in a batch."""
    if count < 1:
        raise ValueError("count >= 1 required")
    _check_gamma_tau(gamma, tau, interval, freq.n)
    a, b = interval
    pad = gamma / 12.0**3
    rng = np.random.default_rng(seed)
    alphas = rng.uniform(a + pad, b - pad, count)
    mask = admissible_mask(alphas, freq, gamma, tau, interval, K)
    accepted = [certify_rotation(al, freq, gamma, tau, interval, K)
                for al in alphas[mask]]
    frac = float(mask.mean())
    if not accepted:
        raise NoneAdmissible(
            f"0/{count} admissible at gamma = {gamma:.3e}; decrease gamma")
    return AdmissibleSample(accepted, frac, gamma, tau, count, seed, alphas, mask)


# ---------------------------------------------------------------------------
# small divisors
# ---------------------------------------------------------------------------

def _l1_ball(omega: np.ndarray, m: int):
    """Vectors with 0 < |k|_1 <= m (full, both signs) and their <k,omega>."""
    n = len(omega)
    kvecs = mode_vectors(m, n)
    k1 = np.abs(kvecs).sum(axis=0)
    keep = (k1 > 0) & (k1 <= m)
    return kvecs[:, keep], k1[keep], kvecs[:, keep].T @ omega


@dataclass(frozen=True)
class DivisorTable:
    """Small divisors |e^{i<k,omega>alpha} - 1| over the l1 ball of radius m."""

    freq: Frequency
    alpha: RotationNumber
    m: int
    kvecs: np.ndarray
    k1: np.ndarray
    divisors: np.ndarray

    @staticmethod
    def build(alpha: RotationNumber, m: int) -> "DivisorTable":
        if m > alpha.cutoff:
            raise ValueError(f"m = {m} exceeds certified cutoff {alpha.cutoff}")
        freq = alpha.freq
        kvecs, k1, kw = _l1_ball(freq.vec, m)
        div = np.abs(np.exp(1j * kw * alpha.alpha) - 1.0)
        return DivisorTable(freq, alpha, int(m), kvecs, k1, div)

    def min_divisor(self) -> float:
        return float(np.min(self.divisors))


@dataclass(frozen=True)
class DivisorSumReport:
    m: int
    lhs: float
    rhs: float
    passed: bool


def divisor_sum_bound_check(freq: Frequency, alpha: RotationNumber, m: int) -> DivisorSumReport:
    """Direct sum of |e^{i<k,omega>alpha}-1|^{-2} over 0 < |k|_1 <= m against
    the bound (3^{n+3}/8) gamma^{-2} m^{2 tau}."""
    table = DivisorTable.build(alpha, m)
    lhs = float(np.sum(table.divisors**-2.0))
    n = freq.n
    rhs = 3.0 ** (n + 3) / 8.0 * alpha.gamma**-2.0 * float(m) ** (2.0 * alpha.tau)
    return DivisorSumReport(int(m), lhs, rhs, bool(lhs <= rhs))


def shells_up_to(K: int, n: int):
    """Max-norm shells {|k|_inf = m}, m = 1..K, as (n, count_m) arrays.

    Scanning shell by shell gives valid partial certificates.
    """
    kvecs = mode_vectors(K, n)
    kinf = np.abs(kvecs).max(axis=0)
    return [kvecs[:, kinf == m] for m in range(1, K + 1)]


def running_certificates(omega, K: int, sigma0: float | None = None):
    """Per-shell partial certificates: (m, c_m) with c_m the constant verified
    on the box |k|_inf <= m.  The sequence is nonincreasing and ends at the
    full certificate."""
    om = np.asarray([float(w) for w in omega])
    if sigma0 is None:
        sigma0 = float(len(om))
    out = []
    c = math.inf
    for m, shell in enumerate(shells_up_to(K, len(om)), start=1):
        k1 = np.abs(shell).sum(axis=0)
        vals = np.abs(shell.T @ om)
        worst = int(np.argmin(vals))
        if vals[worst] <= RESONANCE_TOL:
            raise ResonantFrequency(shell[:, worst], vals[worst])
        c = min(c, float(np.min(vals * k1**sigma0)))
        out.append((m, c))
    return out
