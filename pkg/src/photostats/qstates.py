"""Seeded Monte Carlo samplers of phase-averaged quadrature streams.

Every sampler draws i.i.d. values of ``X = (e^{i theta} a^dag + e^{-i theta} a)/sqrt(2)``
with the local-oscillator phase ``theta`` uniform on ``[0, 2 pi)``. The
detection background is an independent Gaussian of variance
``noise_photons`` added to each sample.

Streams are generated in fixed chunks of ``CHUNK`` samples. Chunk ``j`` uses
its own generator seeded from ``(seed, j)``, so any index range can be
produced independently and the result never depends on how the work was
split.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from functools import lru_cache
from typing import Iterator, Optional

import numpy as np
from scipy.special import roots_hermite, roots_legendre

from .errors import ConvergenceError, ValidationError

CHUNK = 1 << 20
FOCK_MAX = 20
FOCK_RETRY_BUDGET = 1000
SCHEMES = ("triangular", "sinusoidal", "square")
KINDS = ("coherent", "thermal", "squeezed", "fock", "modulated", "background")

# parameter carried by each kind
_PARAM = {
    "coherent": "alpha2",
    "thermal": "nbar",
    "squeezed": "r",
    "fock": "n",
    "modulated": "ibar",
    "background": None,
}


@dataclass(frozen=True)
class StateConfig:
    """Source state plus detection background and RNG seed.

    ``kind="background"`` is a noise-only reference run: it produces only the
    Gaussian background, without the vacuum half-photon that the signal
    models include.
    """

    kind: str
    alpha2: float = 0.0
    nbar: float = 0.0
    r: float = 0.0
    n: int = 0
    ibar: float = 0.0
    scheme: Optional[str] = None
    noise_photons: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown state kind {self.kind!r}; expected one of {KINDS}")
        for name in ("alpha2", "nbar", "ibar", "noise_photons"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValidationError(f"{name} must be finite and >= 0, got {v!r}")
        if not math.isfinite(self.r):
            raise ValidationError("squeeze parameter r must be finite")
        if int(self.n) != self.n or self.n < 0:
            raise ValidationError(f"Fock number must be a nonnegative integer, got {self.n!r}")
        if self.kind == "fock" and self.n > FOCK_MAX:
            raise ValidationError(f"Fock n={self.n} beyond supported order {FOCK_MAX}")
        if self.kind == "modulated" and self.scheme not in SCHEMES:
            raise ValidationError(f"modulation scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if not (0 <= int(self.seed) < 2**64):
            raise ValidationError("seed must fit in an unsigned 64-bit integer")

    @classmethod
    def coherent(cls, alpha2, **kw):
        return cls("coherent", alpha2=alpha2, **kw)

    @classmethod
    def thermal(cls, nbar, **kw):
        return cls("thermal", nbar=nbar, **kw)

    @classmethod
    def squeezed(cls, r, **kw):
        return cls("squeezed", r=r, **kw)

    @classmethod
    def fock(cls, n, **kw):
        return cls("fock", n=n, **kw)

    @classmethod
    def modulated(cls, ibar, scheme, **kw):
        return cls("modulated", ibar=ibar, scheme=scheme, **kw)

    @classmethod
    def background(cls, noise_photons, **kw):
        return cls("background", noise_photons=noise_photons, **kw)

    def with_seed(self, seed):
        return StateConfig(**{**asdict(self), "seed": int(seed)})

    @property
    def mean_photons(self) -> float:
        """Mean photon number of the source (excluding the background)."""
        if self.kind == "coherent":
            return self.alpha2
        if self.kind == "thermal":
            return self.nbar
        if self.kind == "squeezed":
            return math.sinh(self.r) ** 2
        if self.kind == "fock":
            return float(self.n)
        if self.kind == "modulated":
            return self.ibar
        return 0.0

    @property
    def c2(self) -> float:
        """Second cumulant of the quadrature stream this config samples."""
        vac = 0.0 if self.kind == "background" else 0.5
        return self.mean_photons + vac + self.noise_photons

    def to_json(self):
        doc = {"kind": self.kind}
        param = _PARAM[self.kind]
        if param is not None:
            doc[param] = getattr(self, param)
        if self.kind == "modulated":
            doc["scheme"] = self.scheme
        doc["noise_photons"] = self.noise_photons
        doc["seed"] = int(self.seed)
        return doc

    @classmethod
    def from_json(cls, doc):
        if isinstance(doc, (str, bytes)):
            try:
                doc = json.loads(doc)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"state config is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict) or "kind" not in doc:
            raise ValidationError("state config must be a JSON object with a 'kind'")
        kind = doc["kind"]
        allowed = {"kind", "noise_photons", "seed"}
        if kind in _PARAM and _PARAM[kind]:
            allowed.add(_PARAM[kind])
        if kind == "modulated":
            allowed.add("scheme")
        extra = set(doc) - allowed
        if extra:
            raise ValidationError(f"unexpected fields for {kind!r}: {sorted(extra)}")
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ValidationError(str(exc)) from exc


def intensity_waveform(scheme: str, u, ibar: float):
    """Instantaneous intensity at modulation phase fraction ``u`` in [0, 1).

    All three schemes have time-average ``ibar``; their intensity variances are
    ``ibar**2`` times 1/3 (triangular), 1/2 (sinusoidal) and 1 (square).
    """
    if ibar < 0:
        raise ValidationError("ibar must be >= 0")
    u = np.asarray(u, dtype=float)
    if scheme == "triangular":
        return 2 * ibar * (1 - np.abs(2 * u - 1))
    if scheme == "sinusoidal":
        return ibar * (1 + np.cos(2 * np.pi * u))
    if scheme == "square":
        return np.where(u < 0.5, 0.0, 2 * ibar)
    raise ValidationError(f"unknown modulation scheme {scheme!r}")


def hermite_functions(nmax: int, x):
    """Normalized oscillator eigenfunctions psi_0..psi_nmax at ``x``, shape (nmax+1, len(x))."""
    x = np.asarray(x, dtype=float)
    out = np.empty((nmax + 1,) + x.shape)
    out[0] = np.pi ** -0.25 * np.exp(-x * x / 2)
    if nmax >= 1:
        out[1] = np.sqrt(2.0) * x * out[0]
    for k in range(1, nmax):
        out[k + 1] = np.sqrt(2.0 / (k + 1)) * x * out[k] - np.sqrt(k / (k + 1)) * out[k - 1]
    return out


def _fock_density(n, x):
    return hermite_functions(n, x)[n] ** 2


@lru_cache(maxsize=None)
def _fock_envelope(n):
    """Envelope variance and bound M with psi_n(x)^2 <= M * N(x; 0, var)."""
    var = n + 1.0
    half = math.sqrt(2 * n + 1) + 12.0
    x = np.linspace(-half, half, 40001)
    g = np.exp(-x * x / (2 * var)) / math.sqrt(2 * math.pi * var)
    ratio = _fock_density(n, x) / g
    return var, 1.02 * float(ratio.max())


def _chunk_rng(seed, j):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(int(j),))))


def _draw_fock(n, rng, m):
    var, bound = _fock_envelope(n)
    sd = math.sqrt(var)
    out = np.empty(m)
    filled = 0
    for _ in range(FOCK_RETRY_BUDGET):
        pending = m - filled
        if pending == 0:
            return out
        size = int(pending * bound * 1.1) + 16
        prop = rng.normal(0.0, sd, size)
        g = np.exp(-prop * prop / (2 * var)) / math.sqrt(2 * math.pi * var)
        keep = prop[rng.uniform(0.0, 1.0, size) * bound * g < _fock_density(n, prop)]
        take = min(pending, keep.size)
        out[filled:filled + take] = keep[:take]
        filled += take
    if filled < m:
        raise ConvergenceError(
            f"Fock({n}) rejection sampler left {m - filled} samples unfilled after "
            f"{FOCK_RETRY_BUDGET} rounds")
    return out


def _draw(cfg: StateConfig, rng, m):
    k = cfg.kind
    if k == "coherent":
        theta = rng.uniform(0.0, 2 * np.pi, m)
        x = math.sqrt(2 * cfg.alpha2) * np.cos(theta) + rng.normal(0.0, math.sqrt(0.5), m)
    elif k == "thermal":
        x = rng.normal(0.0, math.sqrt(cfg.nbar + 0.5), m)
    elif k == "squeezed":
        theta = rng.uniform(0.0, 2 * np.pi, m)
        var = (math.exp(2 * cfg.r) * np.cos(theta) ** 2
               + math.exp(-2 * cfg.r) * np.sin(theta) ** 2) / 2
        x = np.sqrt(var) * rng.standard_normal(m)
    elif k == "fock":
        x = _draw_fock(int(cfg.n), rng, m)
    elif k == "modulated":
        i = intensity_waveform(cfg.scheme, rng.uniform(0.0, 1.0, m), cfg.ibar)
        theta = rng.uniform(0.0, 2 * np.pi, m)
        x = np.sqrt(2 * i) * np.cos(theta) + rng.normal(0.0, math.sqrt(0.5), m)
    else:
        x = np.zeros(m)
    if cfg.noise_photons > 0:
        x += rng.normal(0.0, math.sqrt(cfg.noise_photons), m)
    return x


def _chunk(cfg: StateConfig, j: int, count: int) -> np.ndarray:
    return _draw(cfg, _chunk_rng(cfg.seed, j), min(CHUNK, count - j * CHUNK))


def sample_range(cfg: StateConfig, start: int, stop: int, count: Optional[int] = None) -> np.ndarray:
    """Samples ``start..stop-1`` of the ``count``-sample stream defined by ``cfg``.

    ``count`` defaults to ``stop``. Any partition of ``[0, count)`` into ranges
    reproduces :func:`sample` exactly.
    """
    count = stop if count is None else count
    if not 0 <= start <= stop <= count:
        raise ValidationError("need 0 <= start <= stop <= count")
    out = np.empty(stop - start)
    pos = start
    while pos < stop:
        j = pos // CHUNK
        base = j * CHUNK
        hi = min(stop, base + CHUNK)
        out[pos - start:hi - start] = _chunk(cfg, j, count)[pos - base:hi - base]
        pos = hi
    return out


def iter_chunks(cfg: StateConfig, count: int) -> Iterator[np.ndarray]:
    """Yield the stream chunk by chunk (constant memory)."""
    if count < 1:
        raise ValidationError("sample count must be >= 1")
    for j in range(-(-count // CHUNK)):
        yield _chunk(cfg, j, count)


def sample(cfg: StateConfig, count: int) -> np.ndarray:
    """Draw ``count`` i.i.d. phase-averaged quadrature samples."""
    if count < 1:
        raise ValidationError("sample count must be >= 1")
    return np.concatenate(list(iter_chunks(cfg, count)))


# -- densities -------------------------------------------------------------

def _gauss(x, mean, var):
    return np.exp(-(x - mean) ** 2 / (2 * var)) / np.sqrt(2 * np.pi * var)


def _periodic_mean(f, m0=64, tol=1e-14, mmax=1 << 14):
    """Mean of a smooth 2*pi-periodic integrand by trapezoid, doubling nodes."""
    m = m0
    prev = f(2 * np.pi * np.arange(m) / m).mean(axis=0)
    while m < mmax:
        m *= 2
        cur = f(2 * np.pi * np.arange(m) / m).mean(axis=0)
        if np.max(np.abs(cur - prev)) <= tol * max(1.0, np.max(np.abs(cur))):
            return cur
        prev = cur
    return prev


def _coherent_pdf(x, alpha2, var):
    amp = math.sqrt(2 * alpha2)
    if amp == 0:
        return _gauss(x, 0.0, var)
    return _periodic_mean(lambda th: _gauss(x[None, :], amp * np.cos(th)[:, None], var))


def _interval_mean(f, lo, hi, m0=32, tol=1e-14, mmax=1024):
    """Mean of ``f`` over ``[lo, hi]`` by Gauss-Legendre, doubling nodes."""
    def rule(m):
        t, w = roots_legendre(m)
        u = lo + (hi - lo) * (t + 1) / 2
        return sum(wk * f(uk) for wk, uk in zip(w, u)) / 2
    m = m0
    prev = rule(m)
    while m < mmax:
        m *= 2
        cur = rule(m)
        if np.max(np.abs(cur - prev)) <= tol * max(1.0, np.max(np.abs(cur))):
            return cur
        prev = cur
    return prev


def pdf(cfg: StateConfig, x):
    """Normalized density of the phase-averaged quadrature, background included."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    var0 = 0.5 + cfg.noise_photons
    k = cfg.kind
    if k == "thermal":
        return _gauss(x, 0.0, var0 + cfg.nbar)
    if k == "coherent":
        return _coherent_pdf(x, cfg.alpha2, var0)
    if k == "squeezed":
        e2r = math.exp(2 * cfg.r)
        return _periodic_mean(lambda th: _gauss(
            x[None, :], 0.0,
            ((e2r * np.cos(th) ** 2 + np.sin(th) ** 2 / e2r) / 2 + cfg.noise_photons)[:, None]))
    if k == "fock":
        n = int(cfg.n)
        if cfg.noise_photons == 0:
            return _fock_density(n, x)
        # Gauss-Hermite convolution with the background
        t, w = roots_hermite(80 + 4 * n)
        s = math.sqrt(2 * cfg.noise_photons)
        return sum(wk * _fock_density(n, x - s * tk) for tk, wk in zip(t, w)) / math.sqrt(np.pi)
    if k == "modulated":
        ibar = cfg.ibar
        if cfg.scheme == "square":
            return 0.5 * _gauss(x, 0.0, var0) + 0.5 * _coherent_pdf(x, 2 * ibar, var0)
        if ibar == 0:
            return _gauss(x, 0.0, var0)
        if cfg.scheme == "triangular":
            return _interval_mean(lambda i: _coherent_pdf(x, i, var0), 0.0, 2 * ibar)
        # sinusoidal: i = ibar (1 + cos phi) with phi uniform
        return _periodic_mean(
            lambda ph: np.stack([_coherent_pdf(x, ibar * (1 + math.cos(p)), var0) for p in ph]),
            m0=32, tol=1e-13, mmax=1024)
    if cfg.noise_photons == 0:
        raise ValidationError("background with zero noise has no density")
    return _gauss(x, 0.0, cfg.noise_photons)


def support_halfwidth(cfg: StateConfig) -> float:
    """Half-width beyond which the density is negligible (< ~1e-20)."""
    peak = 2 * (cfg.alpha2 + 2 * cfg.ibar) + 2 * cfg.nbar
    spread = max(math.exp(2 * abs(cfg.r)), 1.0) / 2 + cfg.noise_photons + cfg.n + cfg.nbar + 0.5
    return math.sqrt(peak) + 10 * math.sqrt(spread)


def sample_inverse_cdf(cfg: StateConfig, count: int, seed: int = 0, grid: int = 40001) -> np.ndarray:
    """Reference sampler: inverts the tabulated CDF of :func:`pdf`.

    Independent of the Monte Carlo samplers; used to cross-check them.
    """
    half = support_halfwidth(cfg)
    x = np.linspace(-half, half, grid)
    dens = pdf(cfg, x)
    cdf = np.concatenate([[0.0], np.cumsum((dens[1:] + dens[:-1]) / 2 * np.diff(x))])
    cdf /= cdf[-1]
    u = np.random.default_rng(seed).uniform(0.0, 1.0, count)
    return np.interp(u, cdf, x)
