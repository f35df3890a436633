"""Classicality diagnostics for reconstructed photocount moments."""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ValidationError
from .reconstruct import PhotonMoments
from .statacc import SCHEMA_VERSION

SIGMA_THRESHOLD = 5.0
# Fano factor approached by every classical narrow-band field as <n> -> 0.
# A limit marker only: classical states have no hard upper bound at finite <n>.
CLASSICAL_FANO_LIMIT = 1.0
REGION_COLUMNS = ("n", "dn2_coherent", "dn2_squeezed")


class Verdict(str, enum.Enum):
    CLASSICAL_COMPATIBLE = "ClassicalCompatible"
    SUBPOISSON_NONCLASSICAL = "SubPoissonNonclassical"
    SUPERPOISSON_BEYOND_CLASSICAL_LIMIT = "SuperPoissonBeyondClassicalLimit"
    INDETERMINATE = "Indeterminate"


@dataclass(frozen=True)
class ClassicalityReport:
    fano: float
    fano_se: Optional[float]
    mandel_q: float
    g2: float
    subpoisson_violation: bool
    subpoisson_margin: float
    subpoisson_margin_sigma: Optional[float]
    stieltjes_violation: bool
    stieltjes_margin: float
    stieltjes_margin_sigma: Optional[float]
    verdict: Verdict

    def to_json(self):
        doc = asdict(self)
        doc["verdict"] = self.verdict.value
        for k, v in doc.items():
            if isinstance(v, float) and not math.isfinite(v):
                doc[k] = None
        doc["schema_version"] = SCHEMA_VERSION
        return doc


def _pm_cov(pm: PhotonMoments):
    if pm.cov is not None:
        return np.asarray(pm.cov, dtype=float)
    if pm.se is not None:
        return np.diag(np.square(pm.se))
    return None


def _linear_se(cov, grad):
    g = np.asarray(grad, dtype=float)
    return float(math.sqrt(max(g @ cov @ g, 0.0)))


def fano(pm: PhotonMoments) -> float:
    """Variance over mean; NaN (indeterminate) unless the mean is positive."""
    if not pm.n_mean > 0:
        return math.nan
    return pm.dn2 / pm.n_mean


def fano_se(pm: PhotonMoments) -> Optional[float]:
    cov = _pm_cov(pm)
    if cov is None or not pm.n_mean > 0:
        return None
    n = pm.n_mean
    return _linear_se(cov, (-pm.dn2 / n**2, 1 / n, 0.0))


def stieltjes_bound(n_mean, dn2):
    """Smallest third centered moment a classical field can have."""
    return n_mean + 3 * (dn2 - n_mean) * (1 - n_mean)


def _sigma(margin, se):
    if se is None:
        return None
    if se > 0:
        return margin / se
    return 0.0 if margin == 0 else math.copysign(math.inf, margin)


def classical_bounds(pm: PhotonMoments, exact: bool = False,
                     threshold: float = SIGMA_THRESHOLD) -> ClassicalityReport:
    """Test the sub-Poisson and Stieltjes bounds that all classical fields obey.

    With standard errors on ``pm`` a bound counts as violated only beyond
    ``threshold`` standard errors. ``exact=True`` treats SE-less inputs as
    exact values (any negative margin violates). SE-less, non-exact inputs get
    margins but an ``Indeterminate`` verdict.
    """
    n, d2, d3 = pm.n_mean, pm.dn2, pm.dn3
    f = fano(pm)
    q = f - 1
    g2 = 1 + q / n if n > 0 else math.nan

    sub_margin = d2 - n
    st_margin = d3 - stieltjes_bound(n, d2)
    cov = _pm_cov(pm)
    if cov is not None:
        sub_z = _sigma(sub_margin, _linear_se(cov, (-1.0, 1.0, 0.0)))
        st_grad = (-1 + 3 * (1 - n) + 3 * (d2 - n), -3 * (1 - n), 1.0)
        st_z = _sigma(st_margin, _linear_se(cov, st_grad))
        sub_v = sub_z < -threshold
        st_v = st_z < -threshold
        determinate = True
    else:
        sub_z = st_z = None
        tol = 1e-12
        sub_v = sub_margin < -tol * max(1.0, abs(n))
        st_v = st_margin < -tol * max(1.0, abs(d3))
        determinate = exact

    if not determinate:
        verdict = Verdict.INDETERMINATE
    elif sub_v:
        verdict = Verdict.SUBPOISSON_NONCLASSICAL
    elif st_v:
        verdict = Verdict.SUPERPOISSON_BEYOND_CLASSICAL_LIMIT
    else:
        verdict = Verdict.CLASSICAL_COMPATIBLE

    return ClassicalityReport(
        fano=f, fano_se=fano_se(pm), mandel_q=q, g2=g2,
        subpoisson_violation=bool(sub_v), subpoisson_margin=sub_margin,
        subpoisson_margin_sigma=sub_z,
        stieltjes_violation=bool(st_v), stieltjes_margin=st_margin,
        stieltjes_margin_sigma=st_z,
        verdict=verdict,
    )


def region_curves(n_grid: Sequence[float]):
    """Boundary curves of the (<n>, <dn^2>) plane.

    For each ``n``: the Poisson line traced by coherent states (lower edge of
    the classical region) and the squeezed-vacuum curve ``2 n (n + 1)``.
    """
    rows = []
    for n in n_grid:
        n = float(n)
        if not n >= 0:
            raise ValidationError(f"photon numbers must be >= 0, got {n}")
        rows.append({"n": n, "dn2_coherent": n, "dn2_squeezed": 2 * n * (n + 1)})
    return rows


def write_region_csv(rows, fh):
    writer = csv.DictWriter(fh, fieldnames=REGION_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: repr(float(row[k])) for k in REGION_COLUMNS})
