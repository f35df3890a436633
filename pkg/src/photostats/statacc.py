"""One-pass, mergeable accumulation of power sums up to order six.

A :class:`PowerSums` holds ``count`` and the raw sums of ``(x - shift)**k``
for ``k = 1..6``. Accumulators over disjoint chunks of a stream merge by
addition, so a stream can be split across threads, files or batches and
recombined. From the sums we get centered sample moments, plug-in cumulants,
and batch-means standard errors.
"""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from math import comb
from typing import Iterable, Optional, Sequence

import numpy as np

from ._kernels import BLOCK, power_sums_kernel, power_sums_kernel_compensated
from .errors import StreamCorruptionError, ValidationError

ORDER = 6
MAX_COUNT = 2**63 - 1
DEFAULT_BATCHES = 100
SCHEMA_VERSION = 1


class CalibrationWarning(UserWarning):
    """Noise subtraction or reconstruction produced an unphysical value."""


@dataclass(frozen=True)
class PowerSums:
    """Raw power sums of a quadrature stream relative to ``shift``.

    ``shift=None`` on an empty accumulator means "use the first sample seen";
    it is resolved on the first accumulation.
    """

    count: int = 0
    sums: tuple = (0.0,) * ORDER
    shift: Optional[float] = 0.0

    def __post_init__(self):
        if len(self.sums) != ORDER:
            raise ValidationError(f"expected {ORDER} power sums, got {len(self.sums)}")
        if self.count < 0:
            raise ValidationError("count must be nonnegative")
        if self.count == 0 and any(s != 0.0 for s in self.sums):
            raise ValidationError("an empty accumulator must have zero sums")

    def s(self, k):
        """Sum of ``(x - shift)**k``; ``k = 0`` gives the count."""
        return float(self.count) if k == 0 else self.sums[k - 1]

    def rebased(self, new_shift):
        """Express the same data relative to ``new_shift``."""
        old = 0.0 if self.shift is None else self.shift
        if self.count == 0 or new_shift == old:
            return replace(self, shift=new_shift)
        d = old - new_shift
        raw = [self.s(j) for j in range(ORDER + 1)]
        sums = tuple(
            sum(comb(k, j) * d ** (k - j) * raw[j] for j in range(k + 1))
            for k in range(1, ORDER + 1)
        )
        return PowerSums(self.count, sums, new_shift)


def _check_count(n):
    if n > MAX_COUNT:
        raise OverflowError(f"sample count {n} exceeds the 64-bit limit")
    return n


def accumulate(acc: PowerSums, x: float) -> PowerSums:
    """Add a single sample."""
    x = float(x)
    if not math.isfinite(x):
        raise StreamCorruptionError(f"non-finite sample {x!r}")
    shift = x if acc.shift is None else acc.shift
    v = x - shift
    sums = tuple(s + v ** (k + 1) for k, s in enumerate(acc.sums))
    return PowerSums(_check_count(acc.count + 1), sums, shift)


def accumulate_array(acc: PowerSums, xs, compensated: bool = False) -> PowerSums:
    """Add every sample of a 1-D array in one compiled pass."""
    xs = np.ascontiguousarray(xs, dtype=np.float64).ravel()
    if xs.size == 0:
        return acc
    shift = float(xs[0]) if acc.shift is None else float(acc.shift)
    out = np.zeros(ORDER)
    if compensated:
        comp = np.zeros(ORDER)
        bad = power_sums_kernel_compensated(xs, shift, out, comp)
        out += comp
    else:
        bad = power_sums_kernel(xs, shift, out)
    if bad >= 0:
        raise StreamCorruptionError(f"non-finite sample {xs[bad]!r} at index {bad}")
    chunk = PowerSums(int(xs.size), tuple(float(v) for v in out), shift)
    return merge(acc, chunk)


def from_samples(xs, shift: Optional[float] = 0.0, compensated: bool = False) -> PowerSums:
    return accumulate_array(PowerSums(shift=shift), xs, compensated=compensated)


def merge(a: PowerSums, b: PowerSums) -> PowerSums:
    """Combine accumulators of two disjoint sample sets.

    If the shifts differ, ``b`` is re-expressed relative to ``a.shift``.
    """
    if b.count == 0:
        return a
    if a.count == 0:
        return b
    if b.shift != a.shift:
        b = b.rebased(a.shift)
    count = _check_count(a.count + b.count)
    return PowerSums(count, tuple(x + y for x, y in zip(a.sums, b.sums)), a.shift)


def merge_all(parts: Iterable[PowerSums]) -> PowerSums:
    total = PowerSums()
    for p in parts:
        total = merge(total, p)
    return total


def accumulate_parallel(xs, threads: int = 4, shift: float = 0.0,
                        compensated: bool = False) -> PowerSums:
    """Chunked accumulation across a thread pool, merged in chunk order.

    Chunk boundaries fall on kernel block boundaries so the result differs
    from a serial pass only by the reassociation of block partial sums.
    """
    xs = np.ascontiguousarray(xs, dtype=np.float64).ravel()
    if threads < 1:
        raise ValidationError("threads must be >= 1")
    nblocks = -(-xs.size // BLOCK)
    per = max(1, -(-nblocks // threads)) * BLOCK
    chunks = [xs[i:i + per] for i in range(0, xs.size, per)]
    if shift is None:
        shift = float(xs[0]) if xs.size else 0.0
    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(
            lambda c: from_samples(c, shift=shift, compensated=compensated), chunks))
    return merge_all(parts)


@dataclass(frozen=True)
class CentralMoments:
    count: int
    mean: float
    m2: float
    m3: float
    m4: float
    m5: float
    m6: float

    def m(self, k):
        return {1: 0.0, 2: self.m2, 3: self.m3, 4: self.m4, 5: self.m5, 6: self.m6}[k]


def central_moments(acc: PowerSums) -> CentralMoments:
    """Centered sample moments (divisor ``count``) by binomial recentering."""
    n = acc.count
    if n < 2:
        raise ValidationError(f"central moments need at least 2 samples, got {n}")
    raw = [acc.s(j) / n for j in range(ORDER + 1)]
    mu = raw[1]
    m = [sum(comb(k, j) * raw[j] * (-mu) ** (k - j) for j in range(k + 1))
         for k in range(ORDER + 1)]
    # even central moments are nonnegative; negatives here are rounding only
    for k in (2, 4, 6):
        m[k] = max(m[k], 0.0)
    shift = 0.0 if acc.shift is None else acc.shift
    return CentralMoments(n, shift + mu, m[2], m[3], m[4], m[5], m[6])


@dataclass(frozen=True)
class CumulantSet:
    """Cumulants C1..C6 of a quadrature stream.

    ``se`` and ``cov`` (covariance of the estimates, 6x6) are only present
    when the set comes from batch statistics.
    """

    count: int
    c: tuple
    se: Optional[tuple] = None
    cov: Optional[np.ndarray] = field(default=None, compare=False, repr=False)
    shift: float = 0.0

    def __getitem__(self, k):
        return self.c[k - 1]

    @property
    def c2(self):
        return self.c[1]

    @property
    def c4(self):
        return self.c[3]

    @property
    def c6(self):
        return self.c[5]

    def to_json(self):
        return {
            "schema_version": SCHEMA_VERSION,
            "count": int(self.count),
            "c": [float(v) for v in self.c],
            "se": None if self.se is None else [float(v) for v in self.se],
            "cov": None if self.cov is None else np.asarray(self.cov).tolist(),
            "shift": float(self.shift),
        }

    @classmethod
    def from_json(cls, doc):
        try:
            c = tuple(float(v) for v in doc["c"])
            se = doc.get("se")
            cov = doc.get("cov")
            out = cls(
                count=int(doc["count"]),
                c=c,
                se=None if se is None else tuple(float(v) for v in se),
                cov=None if cov is None else np.asarray(cov, dtype=float),
                shift=float(doc.get("shift", 0.0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"malformed cumulant document: {exc}") from exc
        if len(out.c) != ORDER or (out.se is not None and len(out.se) != ORDER):
            raise ValidationError("cumulant document must carry 6 cumulants")
        if out.cov is not None and out.cov.shape != (ORDER, ORDER):
            raise ValidationError("cumulant covariance must be 6x6")
        return out


def cumulants(cm: CentralMoments, shift: float = 0.0) -> CumulantSet:
    """Plug-in cumulants from centered moments."""
    m2, m3, m4, m5, m6 = cm.m2, cm.m3, cm.m4, cm.m5, cm.m6
    c = (
        cm.mean,
        m2,
        m3,
        m4 - 3 * m2**2,
        m5 - 10 * m3 * m2,
        m6 - 15 * m4 * m2 - 10 * m3**2 + 30 * m2**3,
    )
    return CumulantSet(cm.count, c, shift=shift)


def cumulants_of(acc: PowerSums) -> CumulantSet:
    return cumulants(central_moments(acc), shift=acc.shift or 0.0)


def subtract_noise(signal_run: CumulantSet, noise_run: CumulantSet) -> CumulantSet:
    """Remove an independently measured background by cumulant additivity."""
    c = tuple(s - n for s, n in zip(signal_run.c, noise_run.c))
    se = None
    if signal_run.se is not None and noise_run.se is not None:
        se = tuple(math.hypot(a, b) for a, b in zip(signal_run.se, noise_run.se))
    cov = None
    if signal_run.cov is not None and noise_run.cov is not None:
        cov = np.asarray(signal_run.cov) + np.asarray(noise_run.cov)
    if c[1] < 0:
        warnings.warn(
            f"noise-subtracted C2 = {c[1]:.3g} is negative; calibration run is "
            "inconsistent with the signal run", CalibrationWarning, stacklevel=2)
    return CumulantSet(min(signal_run.count, noise_run.count), c, se, cov,
                       signal_run.shift)


def batch_edges(n: int, batches: int) -> np.ndarray:
    """Boundaries of ``batches`` contiguous batches whose sizes differ by at most 1."""
    base, extra = divmod(n, batches)
    sizes = np.full(batches, base, dtype=np.int64)
    sizes[:extra] += 1
    return np.concatenate([[0], np.cumsum(sizes)])


def combine_batches(parts: Sequence[PowerSums]) -> CumulantSet:
    """Batch-means cumulants with standard errors and covariance of the mean."""
    if len(parts) < 2:
        raise ValidationError("need at least 2 batches")
    per = np.array([cumulants_of(p).c for p in parts])
    nb = len(parts)
    mean = per.mean(axis=0)
    cov = np.cov(per, rowvar=False, ddof=1) / nb
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    shift = parts[0].shift or 0.0
    return CumulantSet(
        sum(p.count for p in parts),
        tuple(float(v) for v in mean),
        tuple(float(v) for v in se),
        cov,
        shift,
    )


def batch_statistics(stream, batch_count: int = DEFAULT_BATCHES,
                     shift: Optional[float] = 0.0,
                     compensated: bool = False) -> CumulantSet:
    """Split an in-memory stream into contiguous batches and combine them.

    The returned cumulants are batch means; ``se`` is the standard error of
    that mean over batches.
    """
    xs = np.ascontiguousarray(stream, dtype=np.float64).ravel()
    if batch_count < 2:
        raise ValidationError("batch_count must be >= 2")
    if xs.size < 2 * batch_count:
        raise ValidationError(
            f"stream of {xs.size} samples is too short for {batch_count} batches")
    if shift is None:
        shift = float(xs[0])
    edges = batch_edges(xs.size, batch_count)
    parts = [from_samples(xs[lo:hi], shift=shift, compensated=compensated)
             for lo, hi in zip(edges[:-1], edges[1:])]
    return combine_batches(parts)
