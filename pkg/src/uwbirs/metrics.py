"""Figures of merit for comparing phase-configuration techniques.

Average received power spectral density, a spectrum-weighted distortion
standard deviation, their ratio (coefficient of variation), and the
envelope-normalized variants used for cross-technique comparison.  All
integrals share the spectrum module's quadrature so ratios are internally
consistent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .spectrum import SignalSpectrum, band_integral
from .wavefield import TransferFunction


@dataclass(frozen=True)
class MetricReport:
    """Scalar metrics plus the per-frequency received power spectrum.

    ``p_norm`` / ``cv_norm`` / ``z_norm`` are filled by :func:`normalize`
    against an envelope reference from the same scene and spectrum.
    """

    p_rx: float
    psd_avg: float                  # p_rx / bandwidth
    sigma: float                    # distortion standard deviation
    cv: float                       # sigma / psd_avg (nan when psd_avg is 0)
    z_power: np.ndarray             # (n_freq,) |Z(f)|^2
    freqs: np.ndarray
    scenario_key: str
    technique: str = ""
    p_norm: float | None = None
    cv_norm: float | None = None
    z_norm: np.ndarray | None = None

    def scalars(self) -> dict:
        out = {"p_rx": self.p_rx, "psd_avg": self.psd_avg,
               "sigma": self.sigma, "cv": self.cv}
        if self.p_norm is not None:
            out["p_norm"] = self.p_norm
        if self.cv_norm is not None:
            out["cv_norm"] = self.cv_norm
        return out


def avg_psd(tf: TransferFunction, bandwidth: float) -> float:
    """Received power averaged over the nominal bandwidth."""
    if not bandwidth > 0.0:
        raise ValueError("bandwidth must be positive")
    return tf.p_rx / bandwidth


def spectral_std(tf: TransferFunction, spec: SignalSpectrum,
                 bandwidth: float) -> float:
    """Spectrum-weighted deviation of |H|^2 from its power-preserving constant.

    Zero exactly when |H|^2 is constant over the band support: the received
    spectrum is then an undistorted copy of the transmitted one.
    """
    if not spec.p_tx > 0.0:
        raise ValueError("transmitted power must be positive")
    deviation = np.abs(tf.h) ** 2 - tf.p_rx / spec.p_tx
    integrand = spec.psd**2 * deviation**2
    return math.sqrt(band_integral(spec, integrand) / bandwidth)


def coefficient_of_variation(sigma: float, psd_avg: float) -> float:
    """Distortion normalized by mean received density; nan when the mean is zero."""
    if psd_avg == 0.0:
        return math.nan
    return sigma / psd_avg


def metric_report(tf: TransferFunction, spec: SignalSpectrum,
                  technique: str = "") -> MetricReport:
    """Evaluate all scalar metrics for one transfer function."""
    bandwidth = spec.bandwidth
    psd = avg_psd(tf, bandwidth)
    sigma = spectral_std(tf, spec, bandwidth)
    return MetricReport(
        p_rx=tf.p_rx, psd_avg=psd, sigma=sigma,
        cv=coefficient_of_variation(sigma, psd),
        z_power=np.abs(tf.z) ** 2, freqs=tf.freqs,
        scenario_key=tf.context_key, technique=technique,
    )


def normalize(report: MetricReport, ub_report: MetricReport) -> MetricReport:
    """Fill the envelope-normalized fields of a report.

    The per-frequency spectrum is normalized by the peak of the reference's
    received spectrum; the scalar metrics by the reference's values.  Both
    reports must come from the same scene and spectrum.
    """
    if report.scenario_key != ub_report.scenario_key:
        raise ValueError("reports come from different scenes or spectra")
    peak = float(ub_report.z_power.max())
    z_norm = report.z_power / peak if peak > 0.0 else np.zeros_like(report.z_power)
    p_norm = report.psd_avg / ub_report.psd_avg if ub_report.psd_avg > 0.0 else math.nan
    cv_norm = report.cv / ub_report.cv if ub_report.cv not in (0.0,) \
        and not math.isnan(ub_report.cv) else math.nan
    return replace(report, p_norm=p_norm, cv_norm=cv_norm, z_norm=z_norm)
