"""Discrete photocount statistics from continuous quadrature measurements.

The pipeline: quadrature samples -> power sums (:mod:`photostats.statacc`) ->
cumulants C1..C6 -> photocount mean, variance and third moment
(:mod:`photostats.reconstruct`) -> classicality tests
(:mod:`photostats.classify`). :mod:`photostats.qstates` simulates streams and
:mod:`photostats.oracle` provides exact truncated-Fock-space references.
"""
from .classify import ClassicalityReport, Verdict, classical_bounds, fano, region_curves
from .qstates import StateConfig, intensity_waveform, pdf, sample
from .reconstruct import (IntensityMoments, PhotonMoments, attenuate, photon_moments,
                          propagate_errors, semiclassical_moments)
from .statacc import (CentralMoments, CumulantSet, PowerSums, accumulate, accumulate_array,
                      batch_statistics, central_moments, cumulants, merge, subtract_noise)

__version__ = "0.1.0"
