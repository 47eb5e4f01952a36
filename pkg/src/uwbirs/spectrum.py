"""Transmitted-signal power spectrum on a uniform frequency grid with band gaps.

A spectrum is |S(f)|^2 sampled on ``n_freq`` uniform points spanning the
enclosing interval [f0 - B/2, f0 + B/2], endpoints included, together with a
boolean in-band mask and trapezoidal quadrature weights restricted to the
masked runs.  Total transmitted power is normalized to one under that
quadrature.  Only |S|^2 and |S|^4 enter any figure of merit, so the spectral
phase is fixed to zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._hashing import digest

SHAPES = ("flat", "triangular", "tabulated")


@dataclass(frozen=True)
class BandSet:
    """Disjoint in-band intervals inside the enclosing interval."""

    intervals: tuple[tuple[float, float], ...]
    f_center: float
    bandwidth: float

    def __post_init__(self) -> None:
        lo_b, hi_b = self.span
        tol = 1e-9 * self.bandwidth
        prev_hi = None
        for lo, hi in self.intervals:
            if not hi > lo:
                raise ValueError(f"empty band interval [{lo}, {hi}]")
            if lo < lo_b - tol or hi > hi_b + tol:
                raise ValueError("band interval outside the enclosing interval")
            if prev_hi is not None and lo < prev_hi - tol:
                raise ValueError("band intervals must be ordered and disjoint")
            prev_hi = hi

    @property
    def span(self) -> tuple[float, float]:
        half = self.bandwidth / 2.0
        return self.f_center - half, self.f_center + half

    def total_width(self) -> float:
        return float(sum(hi - lo for lo, hi in self.intervals))

    def mask_for(self, freqs: np.ndarray) -> np.ndarray:
        """In-band membership of each sample; edges resolved with a tiny tolerance."""
        tol = 1e-9 * self.bandwidth
        mask = np.zeros(freqs.shape, dtype=bool)
        for lo, hi in self.intervals:
            mask |= (freqs >= lo - tol) & (freqs <= hi + tol)
        return mask

    def contains(self, f) -> np.ndarray:
        return self.mask_for(np.asarray(f, dtype=float))

    def clamp(self, f) -> np.ndarray:
        """Nearest in-band frequency; points inside a band are returned unchanged."""
        f = np.asarray(f, dtype=float)
        best = None
        best_dist = None
        for lo, hi in self.intervals:
            cand = np.clip(f, lo, hi)
            dist = np.abs(f - cand)
            if best is None:
                best, best_dist = cand, dist
            else:
                take = dist < best_dist
                best = np.where(take, cand, best)
                best_dist = np.where(take, dist, best_dist)
        return best


@dataclass(frozen=True)
class SignalSpectrum:
    """|S(f)|^2 samples, in-band mask, and the shared quadrature weights."""

    bands: BandSet
    freqs: np.ndarray    # (n_freq,)
    psd: np.ndarray      # (n_freq,) linear power density, zero off-band
    mask: np.ndarray     # (n_freq,) bool
    weights: np.ndarray  # (n_freq,) quadrature weights, zero off-band
    key: str
    p_tx: float = 1.0

    @property
    def f_center(self) -> float:
        return self.bands.f_center

    @property
    def bandwidth(self) -> float:
        return self.bands.bandwidth

    @property
    def n_freq(self) -> int:
        return self.freqs.size

    @property
    def df(self) -> float:
        return float(self.freqs[1] - self.freqs[0])

    @property
    def amplitude(self) -> np.ndarray:
        """|S(f)| samples (spectral phase is zero by convention)."""
        return np.sqrt(self.psd)


def _trapezoid_weights(mask: np.ndarray, df: float) -> np.ndarray:
    """Per-sample trapezoid weights over each contiguous masked run.

    An isolated masked sample gets a rectangle weight ``df`` so single-line
    spectra keep nonzero power.
    """
    w = np.zeros(mask.size)
    i = 0
    n = mask.size
    while i < n:
        if not mask[i]:
            i += 1
            continue
        j = i
        while j + 1 < n and mask[j + 1]:
            j += 1
        if i == j:
            w[i] = df
        else:
            w[i] = 0.5 * df
            w[j] = 0.5 * df
            if j > i + 1:
                w[i + 1:j] = df
        i = j + 1
    return w


def _band_layout(f0: float, bandwidth: float, sub_bands: int,
                 gap_fraction: float) -> tuple[tuple[float, float], ...]:
    """Equal-width sub-bands spanning the enclosing interval.

    ``gap_fraction`` is the width of each of the ``sub_bands - 1`` gaps as a
    fraction of the total bandwidth.
    """
    width = bandwidth * (1.0 - gap_fraction * (sub_bands - 1)) / sub_bands
    if width <= 0.0:
        raise ValueError("gap layout leaves no room for the sub-bands")
    lo0 = f0 - bandwidth / 2.0
    intervals = []
    for k in range(sub_bands):
        lo = lo0 + k * (width + gap_fraction * bandwidth)
        hi = lo + width
        intervals.append((lo, hi))
    # pin the outer edges exactly to the enclosing interval
    intervals[0] = (f0 - bandwidth / 2.0, intervals[0][1])
    intervals[-1] = (intervals[-1][0], f0 + bandwidth / 2.0)
    return tuple(intervals)


def _notch_shape(freqs: np.ndarray, f0: float, bandwidth: float) -> np.ndarray:
    """Triangular-notch density 4|f - f0| / B^2, zero at the center frequency."""
    return 4.0 * np.abs(freqs - f0) / bandwidth**2


def _assemble(bands: BandSet, freqs: np.ndarray, raw: np.ndarray) -> SignalSpectrum:
    mask = bands.mask_for(freqs)
    if not mask.any():
        raise ValueError("no frequency sample falls inside the band support")
    for lo, hi in bands.intervals:
        tol = 1e-9 * bands.bandwidth
        if not ((freqs >= lo - tol) & (freqs <= hi + tol)).any():
            raise ValueError(f"band [{lo}, {hi}] contains no frequency sample")
    df = float(freqs[1] - freqs[0])
    weights = _trapezoid_weights(mask, df)
    psd = np.where(mask, np.maximum(raw, 0.0), 0.0)
    total = float(weights @ psd)
    if total <= 0.0:
        raise ValueError("spectrum has zero power on the sampled grid")
    psd = psd / total
    key = digest("spectrum", bands.f_center, bands.bandwidth, bands.intervals,
                 freqs.size, psd)
    _set_readonly(freqs, psd, mask, weights)
    return SignalSpectrum(bands=bands, freqs=freqs, psd=psd, mask=mask,
                          weights=weights, key=key)


def _set_readonly(*arrays: np.ndarray) -> None:
    for a in arrays:
        a.setflags(write=False)


def make_spectrum(f0: float, bandwidth: float, shape: str = "flat",
                  sub_bands: int = 1, gap_fraction: float = 0.05,
                  n_freq: int = 100, samples=None) -> SignalSpectrum:
    """Build a unit-power spectrum with equal-width sub-bands.

    Args:
        f0: center frequency in Hz.
        bandwidth: enclosing bandwidth B in Hz.
        shape: "flat", "triangular" (notch 4|f-f0|/B^2), or "tabulated".
        sub_bands: number of equal-width bands (1-3).
        gap_fraction: width of each inter-band gap as a fraction of B.
        n_freq: number of uniform samples over [f0 - B/2, f0 + B/2].
        samples: |S|^2 samples for shape "tabulated" (length n_freq).
    """
    if not bandwidth > 0.0:
        raise ValueError("bandwidth must be positive")
    if n_freq < 2:
        raise ValueError("need at least two frequency samples")
    if sub_bands not in (1, 2, 3):
        raise ValueError("sub_bands must be 1, 2 or 3")
    if not 0.0 <= gap_fraction < 1.0 / sub_bands:
        raise ValueError("gap_fraction must lie in [0, 1/sub_bands)")
    shape = "triangular" if shape == "triangular-notch" else shape
    if shape not in SHAPES:
        raise ValueError(f"unknown spectrum shape {shape!r}")

    bands = BandSet(_band_layout(f0, bandwidth, sub_bands, gap_fraction),
                    f_center=f0, bandwidth=bandwidth)
    freqs = np.linspace(f0 - bandwidth / 2.0, f0 + bandwidth / 2.0, n_freq)
    if shape == "flat":
        raw = np.ones(n_freq)
    elif shape == "triangular":
        raw = _notch_shape(freqs, f0, bandwidth)
    else:
        if samples is None:
            raise ValueError("tabulated shape requires samples")
        raw = np.asarray(samples, dtype=float)
        if raw.shape != freqs.shape:
            raise ValueError("tabulated samples must match the frequency grid")
    return _assemble(bands, freqs, raw)


def custom_spectrum(f0: float, bandwidth: float, intervals, n_freq: int = 100,
                    samples=None) -> SignalSpectrum:
    """Spectrum with explicit band intervals; flat unless samples are given."""
    bands = BandSet(tuple((float(lo), float(hi)) for lo, hi in intervals),
                    f_center=f0, bandwidth=bandwidth)
    freqs = np.linspace(f0 - bandwidth / 2.0, f0 + bandwidth / 2.0, n_freq)
    raw = np.ones(n_freq) if samples is None else np.asarray(samples, dtype=float)
    return _assemble(bands, freqs, raw)


def band_integral(spec: SignalSpectrum, values: np.ndarray) -> float:
    """Integral of per-frequency values over the band support (gaps contribute zero)."""
    values = np.asarray(values)
    if values.shape != spec.freqs.shape:
        raise ValueError("values are not sampled on the spectrum's frequency grid")
    return float(spec.weights @ values)


def barycenter(spec: SignalSpectrum) -> float:
    """Power-weighted mean frequency of the spectrum."""
    power = float(spec.weights @ spec.psd)
    if power <= 0.0:
        raise ValueError("spectrum carries no power")
    return float(spec.weights @ (spec.freqs * spec.psd)) / power
