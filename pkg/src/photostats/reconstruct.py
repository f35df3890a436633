"""Photocount moments from quadrature cumulants, and the semi-classical intensity model."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ValidationError
from .statacc import SCHEMA_VERSION, CalibrationWarning, CumulantSet


@dataclass(frozen=True)
class PhotonMoments:
    """Mean, variance and third centered moment of the photocount distribution."""

    n_mean: float
    dn2: float
    dn3: float
    se: Optional[tuple] = None
    cov: Optional[np.ndarray] = field(default=None, compare=False, repr=False)

    def as_tuple(self):
        return (self.n_mean, self.dn2, self.dn3)

    def to_json(self):
        return {
            "schema_version": SCHEMA_VERSION,
            "n": float(self.n_mean),
            "dn2": float(self.dn2),
            "dn3": float(self.dn3),
            "se": None if self.se is None else [float(v) for v in self.se],
            "cov": None if self.cov is None else np.asarray(self.cov).tolist(),
        }

    @classmethod
    def from_json(cls, doc):
        try:
            se = doc.get("se")
            cov = doc.get("cov")
            return cls(float(doc["n"]), float(doc["dn2"]), float(doc["dn3"]),
                       None if se is None else tuple(float(v) for v in se),
                       None if cov is None else np.asarray(cov, dtype=float))
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"malformed photon-moment document: {exc}") from exc


@dataclass(frozen=True)
class IntensityMoments:
    """Mean and centered moments of a classical intensity distribution."""

    i_mean: float
    di2: float
    di3: float

    def __post_init__(self):
        if self.i_mean < 0:
            raise ValidationError(f"mean intensity must be >= 0, got {self.i_mean}")
        if self.di2 < 0:
            raise ValidationError(f"intensity variance must be >= 0, got {self.di2}")
        floor = -3 * self.i_mean * self.di2
        if self.di3 < floor - 1e-12 * max(1.0, abs(floor)):
            raise ValidationError(
                f"third intensity moment {self.di3} below the nonnegative-support "
                f"limit {floor}")


def photon_moments_from(c2: float, c4: float, c6: float) -> PhotonMoments:
    return PhotonMoments(
        c2 - 0.5,
        2 * c4 / 3 + c2**2 - 0.25,
        2 * c6 / 5 + 4 * c4 * c2 + 2 * c2**3 - c2 / 2,
    )


def photon_moments(c: CumulantSet) -> PhotonMoments:
    """Photocount mean, variance and skewness from the even cumulants C2, C4, C6."""
    pm = photon_moments_from(c.c2, c.c4, c.c6)
    if pm.n_mean < 0:
        warnings.warn(f"reconstructed mean photon number {pm.n_mean:.3g} is negative",
                      CalibrationWarning, stacklevel=2)
    return pm


def _jacobian(c2, c4):
    # rows: n, dn2, dn3; columns: C1..C6
    return np.array([
        [0.0, 1.0, 0.0, 0.0, 0.0, 0.0],
        [0.0, 2 * c2, 0.0, 2 / 3, 0.0, 0.0],
        [0.0, 4 * c4 + 6 * c2**2 - 0.5, 0.0, 4 * c2, 0.0, 2 / 5],
    ])


def propagate_errors(c: CumulantSet) -> PhotonMoments:
    """Photon moments with first-order propagated standard errors.

    Uses the full cumulant covariance when the set carries one; otherwise the
    cumulants are treated as independent.
    """
    if c.se is None:
        raise ValidationError("cumulant set carries no standard errors")
    jac = _jacobian(c.c2, c.c4)
    if c.cov is not None:
        cov_c = np.asarray(c.cov, dtype=float)
    else:
        cov_c = np.diag(np.square(c.se))
    cov = jac @ cov_c @ jac.T
    se = tuple(float(math.sqrt(max(v, 0.0))) for v in np.diag(cov))
    pm = photon_moments(c)
    return PhotonMoments(pm.n_mean, pm.dn2, pm.dn3, se, cov)


def semiclassical_moments(im: IntensityMoments) -> PhotonMoments:
    """Photocount moments of a classical narrow-band field with vacuum ersatz."""
    return PhotonMoments(
        im.i_mean,
        im.i_mean + im.di2,
        im.i_mean + 3 * im.di2 + im.di3,
    )


def attenuate(im: IntensityMoments, eta: float) -> IntensityMoments:
    if not 0.0 <= eta <= 1.0:
        raise ValidationError(f"attenuation must lie in [0, 1], got {eta}")
    return IntensityMoments(im.i_mean * eta, im.di2 * eta**2, im.di3 * eta**3)
