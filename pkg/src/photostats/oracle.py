"""Exact ground truth in a truncated number basis.

Everything here is computed from photon-number distributions or state
vectors cut off at ``n_trunc``, with explicit checks that the probability
left near the cutoff is negligible. These results are the reference values
for the Monte Carlo and reconstruction code.
"""
from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass
from functools import lru_cache
from math import comb, factorial

import mpmath
import numpy as np
from scipy.linalg import expm
from scipy.special import gammainc, gammaln, j0, roots_legendre
from scipy.stats import poisson

from .errors import (ConvergenceError, DomainError, OracleMismatch,
                     TruncationError, ValidationError)
from .qstates import StateConfig, intensity_waveform
from .reconstruct import photon_moments
from .statacc import CentralMoments, cumulants

N_TRUNC = 256
TAIL_TOL = 1e-12
NORM_TOL = 1e-9
ROUNDTRIP_TOL = 1e-9
DISPLACE_TOL = 1e-8
BESSEL_J0_FIRST_ZERO = 2.404825557695773


class TruncationWarning(UserWarning):
    pass


@dataclass(frozen=True)
class PhotonDistribution:
    p: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        if p.ndim != 1 or p.size < 1:
            raise ValidationError("photon distribution must be a non-empty vector")
        if np.any(p < -1e-15):
            raise ValidationError("photon probabilities must be nonnegative")
        object.__setattr__(self, "p", np.clip(p, 0.0, None))

    @property
    def n_trunc(self):
        return self.p.size - 1

    def check_tail(self):
        total = float(self.p.sum())
        if self.p[-1] >= TAIL_TOL or abs(total - 1) > NORM_TOL:
            raise TruncationError(
                f"truncation at N={self.n_trunc} leaves p(N)={self.p[-1]:.3g}, "
                f"sum={total:.12g}", suggested_n_trunc=2 * self.n_trunc)
        return self


@dataclass(frozen=True)
class FockVector:
    psi: np.ndarray

    def __post_init__(self):
        psi = np.asarray(self.psi, dtype=complex)
        norm = float(np.vdot(psi, psi).real)
        if abs(norm - 1) > NORM_TOL:
            raise ValidationError(f"state vector norm {norm:.12g} is not 1")
        object.__setattr__(self, "psi", psi)

    @property
    def n_trunc(self):
        return self.psi.size - 1

    def probabilities(self):
        return PhotonDistribution(np.abs(self.psi) ** 2)


@lru_cache(maxsize=8)
def lowering(n_trunc: int) -> np.ndarray:
    """Truncated annihilation operator, ``a|n> = sqrt(n)|n-1>``."""
    return np.diag(np.sqrt(np.arange(1, n_trunc + 1, dtype=float)), k=1)


def _suggest(mean, var):
    return int(2 * (mean + 40 * math.sqrt(var + 1) + 40))


def _squeezer(r, n_trunc):
    a = lowering(n_trunc)
    return expm(0.5 * r * (a @ a - a.T @ a.T))


def squeezed_vacuum_closed_form(r, n_trunc):
    """Even-n photon distribution of the squeezed vacuum."""
    n = np.arange(n_trunc + 1)
    p = np.zeros(n_trunc + 1)
    m = n[::2] // 2
    t2 = math.tanh(r) ** 2
    if t2 == 0:
        p[0] = 1.0
        return p
    p[::2] = np.exp(gammaln(2 * m + 1) - 2 * gammaln(m + 1) - 2 * m * math.log(2)
                    + m * math.log(t2) - math.log(math.cosh(r)))
    return p


def number_distribution(cfg: StateConfig, n_trunc: int = N_TRUNC) -> PhotonDistribution:
    """Photon-number distribution of the source (background not included)."""
    n = np.arange(n_trunc + 1)
    k = cfg.kind
    if k == "coherent":
        p = poisson.pmf(n, cfg.alpha2) if cfg.alpha2 > 0 else (n == 0).astype(float)
        mean, var = cfg.alpha2, cfg.alpha2
    elif k == "thermal":
        nb = cfg.nbar
        p = np.exp(n * math.log(nb / (1 + nb)) - math.log1p(nb)) if nb > 0 else (n == 0).astype(float)
        mean, var = nb, nb * (nb + 1)
    elif k == "fock":
        if cfg.n > n_trunc:
            raise TruncationError(f"Fock({cfg.n}) does not fit below N={n_trunc}",
                                  suggested_n_trunc=2 * cfg.n)
        p = (n == cfg.n).astype(float)
        mean, var = cfg.n, 0.0
    elif k == "squeezed":
        vac = np.zeros(n_trunc + 1)
        vac[0] = 1.0
        p = np.abs(_squeezer(cfg.r, n_trunc) @ vac) ** 2
        closed = squeezed_vacuum_closed_form(cfg.r, n_trunc)
        mean = math.sinh(cfg.r) ** 2
        var = 2 * mean * (mean + 1)
        if np.max(np.abs(p - closed)) > 1e-9:
            raise TruncationError(
                f"truncated squeeze operator disagrees with the closed form at N={n_trunc}",
                suggested_n_trunc=_suggest(mean, var))
    elif k == "modulated":
        p = _modulated_distribution(cfg, n)
        mean, var = cfg.ibar, cfg.ibar + {"triangular": 1 / 3, "sinusoidal": 1 / 2,
                                           "square": 1.0}[cfg.scheme] * cfg.ibar**2
    else:
        p = (n == 0).astype(float)
        mean, var = 0.0, 0.0
    dist = PhotonDistribution(p)
    try:
        return dist.check_tail()
    except TruncationError as exc:
        raise TruncationError(str(exc), suggested_n_trunc=_suggest(mean, var)) from None


def _modulated_distribution(cfg, n):
    ibar = cfg.ibar
    if ibar == 0:
        return (n == 0).astype(float)
    if cfg.scheme == "square":
        return 0.5 * (n == 0) + 0.5 * poisson.pmf(n, 2 * ibar)
    if cfg.scheme == "triangular":
        # intensity uniform on [0, 2 ibar]
        top = 2 * ibar
        return gammainc(n + 1, top) / top
    t, w = roots_legendre(256)
    u = (t + 1) / 4  # half a period covers every intensity value
    i = intensity_waveform("sinusoidal", u, ibar)
    return (w[:, None] * poisson.pmf(n[None, :], i[:, None])).sum(axis=0) / 2


def number_moments(p: PhotonDistribution, lmax: int) -> np.ndarray:
    """Raw moments ``<n^l>`` for ``l = 0..lmax``."""
    n = np.arange(p.p.size, dtype=float)
    return np.array([float(np.sum(n**l * p.p)) for l in range(lmax + 1)])


def falling_factorial_moment(p: PhotonDistribution, i: int) -> float:
    """``<n (n-1) ... (n-i+1)>``."""
    n = np.arange(p.p.size, dtype=float)
    ff = np.ones_like(n)
    for j in range(i):
        ff *= n - j
    return float(np.sum(ff * p.p))


def symmetric_sum_coefficients(k: int):
    """Coefficients of ``a^dag^i a^i`` in the fully symmetrized ``a^k a^dag^k``."""
    return [0.5 ** (k - i) * factorial(2 * k) / (factorial(i) ** 2 * factorial(k - i))
            for i in range(k + 1)]


def central_photon_moments(p: PhotonDistribution):
    """Direct (<n>, <dn^2>, <dn^3>) of a photon distribution."""
    n = np.arange(p.p.size, dtype=float)
    mean = float(np.sum(n * p.p))
    d = n - mean
    return mean, float(np.sum(d**2 * p.p)), float(np.sum(d**3 * p.p))


def quadrature_even_moment(p: PhotonDistribution, k: int) -> float:
    """Phase-averaged ``<X^{2k}>`` in closed form from factorial moments."""
    if k not in (1, 2, 3):
        raise ValidationError(f"k must be 1, 2 or 3, got {k}")
    coef = symmetric_sum_coefficients(k)
    return 0.5**k * sum(c * falling_factorial_moment(p, i) for i, c in enumerate(coef))


@lru_cache(maxsize=16)
def _symmetric_sum_diagonal(n_trunc: int, k: int) -> np.ndarray:
    a = lowering(n_trunc)
    ad = a.T.copy()
    total = np.zeros((n_trunc + 1, n_trunc + 1))
    for raised in itertools.combinations(range(2 * k), k):
        op = np.eye(n_trunc + 1)
        for pos in range(2 * k):
            op = op @ (ad if pos in raised else a)
        total += op
    return np.diag(total).copy()


def bruteforce_symmetric_sum(p: PhotonDistribution, k: int) -> float:
    """``(1/2)^k`` times the expectation of all distinct orderings of k ``a`` and k ``a^dag``.

    Built from explicit truncated matrices; number states within ``k`` of
    the cutoff see a clipped ladder, so their weight is checked.
    """
    if k not in (1, 2, 3):
        raise ValidationError(f"k must be 1, 2 or 3, got {k}")
    diag = _symmetric_sum_diagonal(p.n_trunc, k)
    boundary = float(np.sum(np.abs(diag[-k:]) * p.p[-k:]))
    if boundary > 1e-10:
        warnings.warn(f"states near the cutoff contribute {boundary:.3g} to the "
                      f"order-{k} symmetric sum", TruncationWarning, stacklevel=2)
    return 0.5**k * float(np.dot(diag, p.p))


def _alpha_abs(cfg):
    if cfg.kind == "coherent":
        return math.sqrt(cfg.alpha2)
    if cfg.kind == "thermal":
        return 0.0
    raise ValidationError(f"cumulant-generating function available for thermal and coherent, not {cfg.kind!r}")


def cgf_domain(cfg: StateConfig) -> float:
    """Largest |lambda| for which the coherent CGF stays real."""
    amp = _alpha_abs(cfg)
    return math.inf if amp == 0 else BESSEL_J0_FIRST_ZERO / (math.sqrt(2) * amp)


def cgf(cfg: StateConfig, lam: float) -> float:
    """Log characteristic function of the phase-averaged quadrature."""
    amp = _alpha_abs(cfg)
    if cfg.kind == "thermal":
        return -(cfg.nbar + 0.5) * lam**2 / 2
    if abs(lam) >= cgf_domain(cfg):
        raise DomainError(f"|lambda|={abs(lam)} beyond the first zero of J0 at {cgf_domain(cfg)}")
    return -lam**2 / 4 + math.log(j0(math.sqrt(2) * amp * lam))


def _cgf_mp(cfg, amp, lam):
    if cfg.kind == "thermal":
        return -(mpmath.mpf(cfg.nbar) + mpmath.mpf(1) / 2) * lam**2 / 2
    return -lam**2 / 4 + mpmath.log(mpmath.besselj(0, mpmath.sqrt(2) * amp * lam))


def cumulant_via_cgf(cfg: StateConfig, k: int, rtol: float = 1e-6) -> float:
    """k-th cumulant by differentiating the CGF at zero numerically.

    Central finite differences of minimal width, two Richardson levels,
    evaluated in 40-digit arithmetic so that step-size roundoff is irrelevant.
    """
    if not 1 <= k <= 6:
        raise ValidationError(f"cumulant order must be 1..6, got {k}")
    amp = _alpha_abs(cfg)
    h0 = 0.05 / (1 + amp)
    if k * h0 / 2 >= cgf_domain(cfg):
        raise DomainError("finite-difference stencil leaves the CGF domain")
    with mpmath.workdps(40):
        amp_mp = mpmath.sqrt(mpmath.mpf(cfg.alpha2)) if cfg.kind == "coherent" else mpmath.mpf(0)

        def diff(h):
            h = mpmath.mpf(h)
            s = sum((-1) ** j * comb(k, j) * _cgf_mp(cfg, amp_mp, (mpmath.mpf(k) / 2 - j) * h)
                    for j in range(k + 1))
            return s / h**k

        d = [diff(h0 / 2**j) for j in range(4)]
        r1 = [(4 * d[j + 1] - d[j]) / 3 for j in range(3)]
        r2 = [(16 * r1[j + 1] - r1[j]) / 15 for j in range(2)]
        best, err = r2[1], abs(r2[1] - r2[0])
        best, err = float(best), float(err)
    if err > rtol * abs(best) + 1e-15:
        raise ConvergenceError(f"derivative of order {k} did not converge: "
                               f"estimate {best}, change {err}")
    if k % 2:
        # phase averaging makes the CGF even; odd derivatives vanish
        return 0.0 * best
    return best if k % 4 == 0 else -best


def ladder_state(cfg: StateConfig, n_trunc: int = N_TRUNC) -> FockVector:
    """Pure-state vector for coherent (real amplitude), squeezed vacuum or Fock configs.

    The squeezed vacuum is ``exp(r (a^2 - a^dag^2) / 2)|0>``, squeezed along the
    ``theta = 0`` quadrature.
    """
    n = np.arange(n_trunc + 1)
    if cfg.kind == "coherent":
        if cfg.alpha2 > 0:
            psi = np.exp(n * math.log(math.sqrt(cfg.alpha2)) - 0.5 * gammaln(n + 1) - cfg.alpha2 / 2)
        else:
            psi = (n == 0).astype(float)
    elif cfg.kind == "squeezed":
        vac = np.zeros(n_trunc + 1)
        vac[0] = 1.0
        psi = _squeezer(cfg.r, n_trunc) @ vac
    elif cfg.kind == "fock":
        psi = (n == cfg.n).astype(float)
    else:
        raise ValidationError(f"{cfg.kind!r} is not a pure state")
    _check_vector_tail(psi)
    return FockVector(psi)


def _check_vector_tail(psi, width=8):
    tail = float(np.sum(np.abs(psi[-width:]) ** 2))
    if tail >= TAIL_TOL:
        raise TruncationError(f"state weight {tail:.3g} within {width} levels of the cutoff",
                              suggested_n_trunc=2 * (psi.size - 1))


def displace(psi: FockVector, r: float, theta: float, n_trunc: int = N_TRUNC) -> FockVector:
    """Apply the displacement ``exp(alpha a^dag - alpha* a)``, ``alpha = r e^{i theta}``."""
    v = np.zeros(n_trunc + 1, dtype=complex)
    if psi.psi.size > n_trunc + 1:
        raise ValidationError("state vector longer than the requested truncation")
    v[:psi.psi.size] = psi.psi
    a = lowering(n_trunc)
    alpha = r * np.exp(1j * theta)
    out = expm(alpha * a.T - np.conj(alpha) * a) @ v
    _check_vector_tail(out)
    return FockVector(out)


def _expect(psi, op):
    return np.vdot(psi, op @ psi)


@dataclass(frozen=True)
class DisplacedStats:
    direct: tuple
    transformed: tuple
    max_abs_diff: float

    @property
    def ok(self):
        return self.max_abs_diff <= DISPLACE_TOL

    def to_json(self):
        return {"direct": list(self.direct), "transformed": list(self.transformed),
                "max_abs_diff": self.max_abs_diff, "ok": self.ok}


def displaced_stats(cfg: StateConfig, r: float, theta: float,
                    n_trunc: int = N_TRUNC) -> DisplacedStats:
    """(<n>, <dn^2>) after displacement, by direct expectation and by the transform rules."""
    psi = ladder_state(cfg, n_trunc)
    num = np.diag(np.arange(n_trunc + 1, dtype=float))
    a = lowering(n_trunc)
    x = (np.exp(1j * theta) * a.T + np.exp(-1j * theta) * a) / math.sqrt(2)

    phi = displace(psi, r, theta, n_trunc).psi
    n1 = _expect(phi, num).real
    direct = (float(n1), float(_expect(phi, num @ num).real - n1**2))

    v = psi.psi
    n0 = _expect(v, num).real
    dn2 = _expect(v, num @ num).real - n0**2
    xm = _expect(v, x).real
    dx2 = _expect(v, x @ x).real - xm**2
    cov = _expect(v, num @ x).real - n0 * xm  # symmetrized: <nX> + <Xn> = 2 Re<nX>
    transformed = (
        float(n0 + math.sqrt(2) * r * xm + r**2),
        float(dn2 + 2 * r**2 * dx2 + 2 * math.sqrt(2) * r * cov),
    )
    diff = max(abs(p - q) for p, q in zip(direct, transformed))
    return DisplacedStats(direct, transformed, float(diff))


@dataclass(frozen=True)
class RoundtripReport:
    direct: tuple
    reconstructed: tuple
    quadrature_moments: tuple
    max_abs_diff: float

    @property
    def ok(self):
        return self.max_abs_diff <= ROUNDTRIP_TOL

    def to_json(self):
        return {"direct": list(self.direct), "reconstructed": list(self.reconstructed),
                "quadrature_moments": list(self.quadrature_moments),
                "max_abs_diff": self.max_abs_diff, "ok": self.ok}


def roundtrip(cfg: StateConfig, n_trunc: int = N_TRUNC) -> RoundtripReport:
    """p(n) -> exact <X^2k> -> cumulants -> photon moments, against direct moments of p(n)."""
    p = number_distribution(cfg, n_trunc)
    x2, x4, x6 = (quadrature_even_moment(p, k) for k in (1, 2, 3))
    cs = cumulants(CentralMoments(0, 0.0, x2, 0.0, x4, 0.0, x6))
    rec = photon_moments(cs).as_tuple()
    direct = central_photon_moments(p)
    diff = max(abs(a - b) for a, b in zip(direct, rec))
    report = RoundtripReport(direct, tuple(float(v) for v in rec), (x2, x4, x6), float(diff))
    if not report.ok:
        raise OracleMismatch(
            f"roundtrip for {cfg.kind} differs by {diff:.3g} (tolerance {ROUNDTRIP_TOL})",
            report)
    return report
