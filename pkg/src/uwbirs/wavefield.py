"""Beamformed incident field on the surface and the end-to-end transfer function.

Free-space scalar model: each array element contributes a spherical wave
``exp(j 2 pi rho f / c) / (sqrt(4 pi) rho)``; the beamformer steers by
conjugating the phase at a tuned frequency toward a target point on the
surface.  The per-point field W, the surface response (uncontrollable
per-frequency factor times a controllable phase map), and a second spherical
spreading leg to the terminal compose the transfer function H(f) as an
area-weighted sum over the grid.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ._hashing import digest
from .geometry import SceneGeometry, ap_distances
from .spectrum import SignalSpectrum, band_integral

SPEED_OF_LIGHT = 299792458.0

_INV_SQRT_4PI = 1.0 / np.sqrt(4.0 * np.pi)
_TWO_PI_OVER_C = 2.0 * np.pi / SPEED_OF_LIGHT


def _unit_phasor(theta: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
    """exp(j theta) built from cos/sin into a preallocated complex array."""
    if out is None or out.shape != theta.shape:
        out = np.empty(theta.shape, dtype=np.complex128)
    np.cos(theta, out=out.real)
    np.sin(theta, out=out.imag)
    return out


@dataclass(frozen=True)
class PhaseMap:
    """Controllable per-grid-point phase shift, defined modulo a global constant.

    By convention the phase at the grid cell nearest the surface center is
    zero.  ``info`` carries optional solver diagnostics.
    """

    values: np.ndarray                # (P,) radians
    technique: str = ""
    info: dict | None = None

    def shifted(self, constant: float) -> "PhaseMap":
        return replace(self, values=self.values + constant)


@dataclass(frozen=True)
class BeamformerSpec:
    """Array steering strategy.

    mode "ideal" retunes at every frequency, "central" is tuned once at the
    spectrum center, "hybrid" retunes per sub-band (``sub_bands`` intervals
    with one tuned frequency each, jointly covering the band support).  The
    beam targets the fixed surface point ``target`` in every mode.
    """

    mode: str = "central"
    sub_bands: tuple[tuple[float, float], ...] = ()
    tuned: tuple[float, ...] = ()
    target: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self) -> None:
        if self.mode not in ("ideal", "central", "hybrid"):
            raise ValueError(f"unknown beamformer mode {self.mode!r}")
        if self.mode == "hybrid":
            if not self.sub_bands or len(self.sub_bands) != len(self.tuned):
                raise ValueError("hybrid mode needs one tuned frequency per sub-band")
            for (lo, hi), fk in zip(self.sub_bands, self.tuned):
                if not lo <= fk <= hi:
                    raise ValueError("tuned frequency outside its sub-band")

    def tuned_frequency(self, f: float, f_center: float) -> float:
        if self.mode == "ideal":
            return f
        if self.mode == "central":
            return f_center
        for (lo, hi), fk in zip(self.sub_bands, self.tuned):
            if lo <= f <= hi:
                return fk
        raise ValueError(f"frequency {f} not covered by any hybrid sub-band")

    def validate_for(self, spec: SignalSpectrum) -> None:
        if self.mode != "hybrid":
            return
        for lo, hi in self.sub_bands:
            for lo2, hi2 in self.sub_bands:
                if (lo, hi) != (lo2, hi2) and lo < hi2 and lo2 < hi:
                    raise ValueError("hybrid sub-bands overlap")
        in_band = spec.freqs[spec.mask]
        covered = np.zeros(in_band.shape, dtype=bool)
        for lo, hi in self.sub_bands:
            covered |= (in_band >= lo) & (in_band <= hi)
        if not covered.all():
            raise ValueError("hybrid sub-bands do not cover the band support")

    def key(self) -> str:
        return digest("bf", self.mode, self.sub_bands, self.tuned, self.target)


@dataclass(frozen=True)
class IrsResponse:
    """Surface response: uncontrollable per-frequency factor times exp(j phase).

    The uncontrollable factor defaults to one at all frequencies; a tabulated
    complex response (``zeta_samples`` on ``zeta_freqs``) is interpolated
    linearly when given.  It is position-independent.
    """

    phase: PhaseMap
    zeta_samples: np.ndarray | None = None
    zeta_freqs: np.ndarray | None = None

    def zeta_on(self, freqs: np.ndarray) -> np.ndarray:
        if self.zeta_samples is None:
            return np.ones(np.shape(freqs), dtype=np.complex128)
        if self.zeta_freqs is None:
            raise ValueError("tabulated response needs its frequency grid")
        re = np.interp(freqs, self.zeta_freqs, self.zeta_samples.real)
        im = np.interp(freqs, self.zeta_freqs, self.zeta_samples.imag)
        return re + 1j * im

    def with_phase(self, phase: PhaseMap) -> "IrsResponse":
        return replace(self, phase=phase)


def zero_response(scene: SceneGeometry, zeta_samples=None, zeta_freqs=None) -> IrsResponse:
    """Response with an all-zero phase map on the scene grid."""
    pm = PhaseMap(values=np.zeros(scene.n_points), technique="zero")
    return IrsResponse(phase=pm, zeta_samples=zeta_samples, zeta_freqs=zeta_freqs)


@dataclass(frozen=True)
class IncidentField:
    """Sampled beamformed field on the grid, one column per grid frequency."""

    w: np.ndarray                 # (P, n_freq) complex
    freqs: np.ndarray             # (n_freq,)
    spectrum: SignalSpectrum
    beamformer: BeamformerSpec
    scene_key: str

    @property
    def key(self) -> str:
        return digest("field", self.scene_key, self.beamformer.key(),
                      self.spectrum.key, str(self.w.dtype))

    @property
    def context_key(self) -> str:
        return digest("ctx", self.scene_key, self.spectrum.key)


@dataclass(frozen=True)
class TransferFunction:
    """End-to-end H(f), the received spectrum Z = S * H, and total received power."""

    freqs: np.ndarray     # (n_freq,)
    h: np.ndarray         # (n_freq,) complex
    z: np.ndarray         # (n_freq,) complex
    p_rx: float
    context_key: str = ""


def _field_column(scene: SceneGeometry, rho_target: np.ndarray, f: float,
                  u: float, amp: np.ndarray) -> np.ndarray:
    """One frequency column of W: steered sum of spherical element waves."""
    steer = np.exp(-1j * (_TWO_PI_OVER_C * u) * rho_target)
    kf = _TWO_PI_OVER_C * f
    out = np.empty(scene.n_points, dtype=np.complex128)
    phasor = None
    for lo in range(0, scene.n_points, 32768):
        hi = min(lo + 32768, scene.n_points)
        theta = kf * scene.rho_ap[lo:hi]
        phasor = _unit_phasor(theta, out=phasor)
        np.multiply(phasor, amp[lo:hi], out=phasor)
        out[lo:hi] = phasor @ steer
    return out


def incident_field(scene: SceneGeometry, bf: BeamformerSpec, spec: SignalSpectrum,
                   dtype=np.complex128) -> IncidentField:
    """Sample the beamformed field at every grid point and grid frequency."""
    bf.validate_for(spec)
    tx, ty = bf.target
    rho_target = ap_distances(scene.ap, np.array([tx, ty, 0.0]))
    amp = _INV_SQRT_4PI / scene.rho_ap
    w = np.empty((scene.n_points, spec.n_freq), dtype=dtype)
    for i, f in enumerate(spec.freqs):
        u = bf.tuned_frequency(float(f), spec.f_center)
        w[:, i] = _field_column(scene, rho_target, float(f), u, amp)
    w.setflags(write=False)
    return IncidentField(w=w, freqs=spec.freqs, spectrum=spec,
                         beamformer=bf, scene_key=scene.key)


def incident_field_at(scene: SceneGeometry, bf: BeamformerSpec,
                      spec: SignalSpectrum, f: float) -> np.ndarray:
    """Field column at an arbitrary frequency (need not be a grid sample)."""
    tx, ty = bf.target
    rho_target = ap_distances(scene.ap, np.array([tx, ty, 0.0]))
    amp = _INV_SQRT_4PI / scene.rho_ap
    u = bf.tuned_frequency(float(f), spec.f_center)
    return _field_column(scene, rho_target, float(f), u, amp)


def _point_terms(phase: np.ndarray, rho_ue: np.ndarray, zeta: complex, f: float,
                 wcol: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Magnitude and total angle of every grid point's contribution to H(f).

    Keeping magnitudes separate from angles makes the triangle inequality hold
    elementwise in floating point, so any phase map's |H| stays at or below
    the envelope built from the same magnitudes.
    """
    zw = zeta * wcol
    magnitude = (_INV_SQRT_4PI / rho_ue) * np.abs(zw)
    angle = phase + (_TWO_PI_OVER_C * f) * rho_ue + np.angle(zw)
    return magnitude, angle


def transfer_function(field: IncidentField, resp: IrsResponse,
                      scene: SceneGeometry) -> TransferFunction:
    """Aggregate the scattered contributions of all grid points into H(f).

    H(f) = cell^2 * sum_p zeta(f) exp(j phi_p) exp(j 2 pi rho_ue_p f / c)
           W(p, f) / (sqrt(4 pi) rho_ue_p); Z = S * H; received power is the
    band integral of |Z|^2.
    """
    if resp.phase.values.shape != (scene.n_points,):
        raise ValueError("phase map is not defined on the scene grid")
    spec = field.spectrum
    zeta = resp.zeta_on(field.freqs)
    cell2 = scene.cell_size**2
    h = np.empty(spec.n_freq, dtype=np.complex128)
    phasor = None
    for i, f in enumerate(field.freqs):
        mag, ang = _point_terms(resp.phase.values, scene.rho_ue,
                                complex(zeta[i]), float(f), field.w[:, i])
        phasor = _unit_phasor(ang, out=phasor)
        np.multiply(phasor, mag, out=phasor)
        h[i] = cell2 * np.sum(phasor)
    z = spec.amplitude * h
    p_rx = band_integral(spec, np.abs(z) ** 2)
    return TransferFunction(freqs=field.freqs, h=h, z=z, p_rx=p_rx,
                            context_key=field.context_key)


def transfer_at(field: IncidentField, resp: IrsResponse, scene: SceneGeometry,
                f: float) -> complex:
    """H evaluated at an arbitrary frequency for the response's phase map."""
    wcol = incident_field_at(scene, field.beamformer, field.spectrum, f)
    zeta = complex(resp.zeta_on(np.array([f]))[0])
    mag, ang = _point_terms(resp.phase.values, scene.rho_ue, zeta, float(f), wcol)
    term = _unit_phasor(ang)
    np.multiply(term, mag, out=term)
    return scene.cell_size**2 * complex(np.sum(term))


def transfer_magnitude_at(field: IncidentField, resp: IrsResponse,
                          scene: SceneGeometry, f: float) -> float:
    """|H| at an arbitrary frequency, never above the same-magnitude envelope.

    The point angles are referenced to the central point's before summing (a
    global rotation that |H| is blind to), so a perfectly aligning phase map
    reproduces the sum of magnitudes bit for bit instead of overshooting it by
    rounding noise.
    """
    wcol = incident_field_at(scene, field.beamformer, field.spectrum, f)
    zeta = complex(resp.zeta_on(np.array([f]))[0])
    mag, ang = _point_terms(resp.phase.values, scene.rho_ue, zeta, float(f), wcol)
    term = _unit_phasor(ang - ang[scene.center_index])
    np.multiply(term, mag, out=term)
    return scene.cell_size**2 * float(np.abs(np.sum(term)))


def scattered_matrix(field: IncidentField, resp: IrsResponse,
                     scene: SceneGeometry) -> np.ndarray:
    """Per-point integrand of H, shape (P, n_freq); H is cell^2 times its column sums."""
    zeta = resp.zeta_on(field.freqs)
    gain = _unit_phasor(resp.phase.values) * (_INV_SQRT_4PI / scene.rho_ue)
    out = np.empty((scene.n_points, field.freqs.size), dtype=np.complex128)
    for i, f in enumerate(field.freqs):
        leg = _unit_phasor(_TWO_PI_OVER_C * float(f) * scene.rho_ue)
        out[:, i] = zeta[i] * gain * leg * field.w[:, i]
    return out


def scattered_component(field: IncidentField, resp: IrsResponse,
                        scene: SceneGeometry, point_index: int) -> np.ndarray:
    """Scattered contribution of one grid point across all grid frequencies."""
    if not 0 <= point_index < scene.n_points:
        raise IndexError(f"grid point {point_index} outside 0..{scene.n_points - 1}")
    zeta = resp.zeta_on(field.freqs)
    phase = np.exp(1j * resp.phase.values[point_index])
    rho = scene.rho_ue[point_index]
    leg = np.exp(1j * _TWO_PI_OVER_C * field.freqs * rho)
    return zeta * phase * leg * field.w[point_index, :] * (_INV_SQRT_4PI / rho)
