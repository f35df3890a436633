"""End-to-end measurement: stream -> cumulants -> photon moments -> verdict."""
from __future__ import annotations

import csv
import hashlib
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from . import qstates
from .classify import classical_bounds, fano
from .errors import ValidationError
from .qstates import StateConfig
from .reconstruct import propagate_errors
from .statacc import (DEFAULT_BATCHES, CumulantSet, PowerSums, accumulate_array,
                      batch_edges, combine_batches, subtract_noise)

THREADS_ENV = "PHOTOSTATS_THREADS"
SWEEP_CSV_VERSION = 1
SWEEP_COLUMNS = ("n_target", "n_est", "dn2_est", "dn3_est",
                 "se_n", "se_dn2", "se_dn3", "fano", "verdict")
SWEEP_KINDS = ("coherent", "thermal", "squeezed", "modulated")


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def batch_sums(chunks: Iterable[np.ndarray], total: int, batches: int,
               shift: float = 0.0) -> list:
    """Accumulate a chunked stream of known length into per-batch power sums.

    Memory use is one chunk plus ``batches`` accumulators.
    """
    if batches < 2:
        raise ValidationError("batch count must be >= 2")
    if total < 2 * batches:
        raise ValidationError(f"stream of {total} samples is too short for {batches} batches")
    edges = batch_edges(total, batches)
    parts = [PowerSums(shift=shift) for _ in range(batches)]
    b = pos = 0
    for chunk in chunks:
        off = 0
        while off < chunk.size:
            while pos >= edges[b + 1]:
                b += 1
            take = min(chunk.size - off, int(edges[b + 1]) - pos)
            parts[b] = accumulate_array(parts[b], chunk[off:off + take])
            off += take
            pos += take
    if pos != total:
        raise ValidationError(f"stream delivered {pos} samples, expected {total}")
    return parts


def cumulants_from_array(x, batches: int = DEFAULT_BATCHES, threads: int = 1,
                         shift: float = 0.0) -> CumulantSet:
    """Batch cumulants of an in-memory stream, batches spread over ``threads``."""
    x = np.ascontiguousarray(x, dtype=np.float64).ravel()
    if batches < 2 or x.size < 2 * batches:
        raise ValidationError(f"stream of {x.size} samples is too short for {batches} batches")
    edges = batch_edges(x.size, batches)

    def one(b):
        return accumulate_array(PowerSums(shift=shift), x[edges[b]:edges[b + 1]])

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(one, range(batches)))
    else:
        parts = [one(b) for b in range(batches)]
    return combine_batches(parts)


def measure(cfg: StateConfig, samples: int, batches: int = DEFAULT_BATCHES) -> CumulantSet:
    """Simulate a run and reduce it to batch cumulants without storing the stream."""
    return combine_batches(batch_sums(qstates.iter_chunks(cfg, samples), samples, batches))


def sub_seed(seed: int, index: int, role: str) -> int:
    digest = hashlib.blake2b(f"{index}:{role}".encode(), digest_size=8).digest()
    return (int(seed) ^ int.from_bytes(digest, "little")) & (2**64 - 1)


def state_for_target(kind: str, n_target: float, noise_photons: float,
                     scheme: Optional[str] = None, seed: int = 0) -> StateConfig:
    """Source config whose mean photon number is ``n_target``."""
    if kind == "coherent":
        return StateConfig.coherent(n_target, noise_photons=noise_photons, seed=seed)
    if kind == "thermal":
        return StateConfig.thermal(n_target, noise_photons=noise_photons, seed=seed)
    if kind == "squeezed":
        return StateConfig.squeezed(math.asinh(math.sqrt(n_target)),
                                    noise_photons=noise_photons, seed=seed)
    if kind == "modulated":
        return StateConfig.modulated(n_target, scheme, noise_photons=noise_photons, seed=seed)
    raise ValidationError(f"sweep supports {SWEEP_KINDS}, not {kind!r}")


@dataclass(frozen=True)
class SweepRow:
    n_target: float
    n_est: float
    dn2_est: float
    dn3_est: float
    se_n: float
    se_dn2: float
    se_dn3: float
    fano: float
    verdict: str

    def as_csv(self):
        return [repr(float(getattr(self, c))) for c in SWEEP_COLUMNS[:-1]] + [self.verdict]


def measure_point(kind, n_target, index, samples, noise_photons, seed,
                  scheme=None, batches=DEFAULT_BATCHES):
    """Signal+background run minus background-only run, reconstructed and classified."""
    sig = state_for_target(kind, n_target, noise_photons, scheme,
                           seed=sub_seed(seed, index, "signal"))
    cs = measure(sig, samples, batches)
    if noise_photons > 0:
        bg = StateConfig.background(noise_photons, seed=sub_seed(seed, index, "noise"))
        cs = subtract_noise(cs, measure(bg, samples, batches))
    pm = propagate_errors(cs)
    report = classical_bounds(pm)
    return SweepRow(float(n_target), pm.n_mean, pm.dn2, pm.dn3, *pm.se,
                    fano(pm), report.verdict.value), cs, pm, report


def log_grid(n_from: float, n_to: float, points: int) -> np.ndarray:
    if not (n_from > 0 and n_to >= n_from):
        raise ValidationError("need 0 < n_from <= n_to")
    if points < 1:
        raise ValidationError("points must be >= 1")
    if points == 1:
        return np.array([n_from])
    return np.geomspace(n_from, n_to, points)


def sweep(kind, grid, samples, noise_photons=1.0, seed=0, scheme=None,
          batches=DEFAULT_BATCHES, threads=1) -> list:
    """One :class:`SweepRow` per grid point, in grid order."""
    if kind not in SWEEP_KINDS:
        raise ValidationError(f"sweep supports {SWEEP_KINDS}, not {kind!r}")
    if samples < 2 * batches:
        raise ValidationError(f"{samples} samples per point is too few for {batches} batches")
    if noise_photons < 0:
        raise ValidationError("noise_photons must be >= 0")

    def point(item):
        k, n = item
        return measure_point(kind, n, k, samples, noise_photons, seed, scheme, batches)[0]

    items = list(enumerate(grid))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(point, items))
    return [point(it) for it in items]


def write_sweep_csv(rows, fh):
    fh.write(f"# photostats sweep v{SWEEP_CSV_VERSION}\n")
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(SWEEP_COLUMNS)
    for row in rows:
        writer.writerow(row.as_csv())
