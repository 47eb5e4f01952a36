"""Phase-configuration techniques for the reflecting surface.

Six ways to choose the controllable phase map:

* UB   -- per-frequency alignment; unattainable with frequency-flat phases,
          used as the envelope every other technique is measured against.
* NB   -- alignment at a single frequency (the spectrum barycenter by default).
* NBF  -- far-field variant of NB: a linear phase plane from the anomalous
          reflection law evaluated at the surface-center angles.
* ED   -- phase of the principal eigenvector of the received-power kernel,
          found by matrix-free power iteration.
* SLO  -- per-point tuning frequency from a sliding-window argmax of the
          locally received power density, then a least-squares phase fit.
* ALO  -- per-point tuning frequency from a closed-form second-order estimate
          of the field's spectral peak, then the same least-squares fit.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import cg

from .geometry import SceneGeometry, ap_distances, element_positions
from .spectrum import SignalSpectrum, barycenter
from .wavefield import (_INV_SQRT_4PI, _TWO_PI_OVER_C, _point_terms,
                        IncidentField, IrsResponse, PhaseMap,
                        incident_field_at, scattered_matrix)

_ALO_CHUNK = 16384


class PhaseFitError(RuntimeError):
    """Least-squares phase fit failed to reach the requested residual."""


@dataclass(frozen=True)
class GradientField:
    """Target phase gradient per grid point, with the grid it lives on."""

    gx: np.ndarray           # (P,) radians / meter
    gy: np.ndarray           # (P,)
    shape: tuple[int, int]   # (n_x, n_y)
    spacing: float           # meters between adjacent grid points


@dataclass(frozen=True)
class FrequencyMap:
    """Per-grid-point tuning frequency and where it came from."""

    values: np.ndarray       # (P,) Hz
    provenance: str = "constant"


def _centered(values: np.ndarray, scene: SceneGeometry) -> np.ndarray:
    return values - values[scene.center_index]


def _aligned_phase_values(field: IncidentField, resp: IrsResponse,
                          scene: SceneGeometry, f: float) -> np.ndarray:
    """Phase that brings every scattered contribution at frequency f in phase."""
    wcol = incident_field_at(scene, field.beamformer, field.spectrum, f)
    zeta = complex(resp.zeta_on(np.array([f]))[0])
    return -_TWO_PI_OVER_C * scene.rho_ue * f - np.angle(zeta * wcol)


def upper_bound_envelope(field: IncidentField, resp: IrsResponse,
                         scene: SceneGeometry) -> np.ndarray:
    """|H| ceiling per grid frequency: the triangle-inequality sum of moduli.

    Built from the same per-point magnitudes the transfer function sums, so
    |H(f)| of any phase map never exceeds it, rounding included.
    """
    zeta = resp.zeta_on(field.freqs)
    zero = np.zeros(scene.n_points)
    cell2 = scene.cell_size**2
    env = np.empty(field.freqs.size)
    for i, f in enumerate(field.freqs):
        mag, _ = _point_terms(zero, scene.rho_ue, complex(zeta[i]), float(f),
                              field.w[:, i])
        env[i] = cell2 * np.sum(mag)
    return env


def envelope_at(field: IncidentField, resp: IrsResponse, scene: SceneGeometry,
                f: float) -> float:
    """|H| ceiling at an arbitrary frequency."""
    wcol = incident_field_at(scene, field.beamformer, field.spectrum, f)
    zeta = complex(resp.zeta_on(np.array([f]))[0])
    mag, _ = _point_terms(np.zeros(scene.n_points), scene.rho_ue, zeta,
                          float(f), wcol)
    return scene.cell_size**2 * float(np.sum(mag))


def upper_bound_phase(field: IncidentField, resp: IrsResponse,
                      scene: SceneGeometry, f: float) -> PhaseMap:
    """The aligning phase map at one frequency (the envelope is met there)."""
    values = _centered(_aligned_phase_values(field, resp, scene, f), scene)
    return PhaseMap(values=values, technique="UB", info={"frequency": float(f)})


def configure_nb(field: IncidentField, resp: IrsResponse, scene: SceneGeometry,
                 f_nb: float | None = None) -> PhaseMap:
    """Narrowband alignment at ``f_nb`` (spectrum barycenter when omitted)."""
    if f_nb is None:
        f_nb = barycenter(field.spectrum)
    lo, hi = field.freqs[0], field.freqs[-1]
    if not lo <= f_nb <= hi:
        raise ValueError(f"alignment frequency {f_nb} outside the sampled band")
    values = _centered(_aligned_phase_values(field, resp, scene, f_nb), scene)
    return PhaseMap(values=values, technique="NB", info={"f_nb": float(f_nb)})


def configure_nbf(scene: SceneGeometry, f_nb: float) -> PhaseMap:
    """Linear phase plane from the reflection law at the surface-center angles.

    Slopes follow the anomalous-reflection rule for a wave arriving from the
    array center and departing toward the terminal, both as seen from the
    surface center.  Signs are fixed so that in the far field the plane
    matches the exact single-frequency alignment map: the phase advance along
    the surface cancels the path-length change toward both endpoints.
    """
    ue = scene.ue
    rho_ue0 = float(np.linalg.norm(ue))
    theta_ue0 = float(np.arccos(ue[2] / rho_ue0))
    psi_ue0 = float(np.arctan2(ue[1], ue[0]))
    apo = np.asarray(scene.ap.origin, dtype=float)
    rho_ap0 = float(np.linalg.norm(apo))
    theta_ap0 = float(np.arccos(apo[2] / rho_ap0))
    psi_ap0 = float(np.arctan2(apo[1], apo[0]))

    k = _TWO_PI_OVER_C * f_nb
    slope_x = k * (np.sin(theta_ue0) * np.cos(psi_ue0)
                   + np.sin(theta_ap0) * np.cos(psi_ap0))
    slope_y = k * (np.sin(theta_ue0) * np.sin(psi_ue0)
                   + np.sin(theta_ap0) * np.sin(psi_ap0))
    values = _centered(slope_x * scene.x + slope_y * scene.y, scene)
    return PhaseMap(values=values, technique="NBF",
                    info={"f_nb": float(f_nb),
                          "slopes": (float(slope_x), float(slope_y))})


def ed_matrix(field: IncidentField, resp: IrsResponse, scene: SceneGeometry,
              spec: SignalSpectrum) -> np.ndarray:
    """Weighted scattering matrix A with P_RX(phi) = cell^4 * ||A exp(j phi)||^2.

    Rows are in-band frequencies weighted by sqrt(quadrature weight times
    transmitted density); columns are grid points with zero controllable phase.
    The received-power kernel is A^H A.
    """
    zero = IrsResponse(phase=PhaseMap(values=np.zeros(scene.n_points)),
                       zeta_samples=resp.zeta_samples, zeta_freqs=resp.zeta_freqs)
    zmat = scattered_matrix(field, zero, scene)
    idx = np.flatnonzero(spec.mask)
    coef = np.sqrt(spec.weights[idx] * spec.psd[idx])
    return coef[:, None] * zmat[:, idx].T


def configure_ed(field: IncidentField, resp: IrsResponse, scene: SceneGeometry,
                 spec: SignalSpectrum, tol: float = 1e-10, max_iter: int = 500,
                 seed: int = 0) -> PhaseMap:
    """Phase of the principal eigenvector of the received-power kernel.

    Matrix-free power iteration v -> A^H (A v) starting from the all-ones
    vector, with a seeded random restart if an iterate lands in the kernel's
    null space.  Stops when the Rayleigh quotient changes by less than ``tol``
    relative, or after ``max_iter`` iterations (then the best iterate is
    returned and ``info["converged"]`` is False).
    """
    a = ed_matrix(field, resp, scene, spec)
    rng = np.random.default_rng(seed)
    v = np.ones(scene.n_points, dtype=np.complex128)
    v /= np.linalg.norm(v)
    history: list[float] = []
    converged = False
    for _ in range(max_iter):
        av = a @ v
        rayleigh = float(np.vdot(av, av).real)
        if rayleigh == 0.0:
            v = rng.standard_normal(scene.n_points) \
                + 1j * rng.standard_normal(scene.n_points)
            v /= np.linalg.norm(v)
            continue
        history.append(rayleigh)
        nxt = a.conj().T @ av
        nrm = np.linalg.norm(nxt)
        if nrm == 0.0:
            break
        v = nxt / nrm
        if len(history) >= 2 and abs(history[-1] - history[-2]) <= tol * history[-1]:
            converged = True
            break
    if not converged:
        warnings.warn("power iteration did not converge; returning best iterate",
                      RuntimeWarning, stacklevel=2)
    values = _centered(np.angle(v), scene)
    return PhaseMap(values=values, technique="ED",
                    info={"iterations": len(history), "converged": converged,
                          "rayleigh": history})


def freq_slo(field: IncidentField, spec: SignalSpectrum, window: float) -> FrequencyMap:
    """Sliding-window argmax of the local received power density.

    For each grid point, integrate |S|^2 |W|^2 over a window of width
    ``window`` centered on every grid frequency (truncated at the band edges)
    and return the window center with the largest mass.  Ties (within 1e-12
    relative) resolve to the center closest to the spectrum center, then to
    the lower frequency.  Results are clamped to the band support.
    """
    if not 0.0 < window <= spec.bandwidth:
        raise ValueError("window width must lie in (0, bandwidth]")
    freqs = spec.freqs
    df = spec.df
    g = spec.psd[None, :] * np.abs(field.w) ** 2         # (P, n_freq)
    lo_idx = np.searchsorted(freqs, freqs - window / 2.0, side="left")
    hi_idx = np.searchsorted(freqs, freqs + window / 2.0, side="right") - 1
    csum = np.concatenate([np.zeros((g.shape[0], 1)), np.cumsum(g, axis=1)], axis=1)
    sums = csum[:, hi_idx + 1] - csum[:, lo_idx]
    ends = g[:, lo_idx] + g[:, hi_idx]
    q = df * sums - 0.5 * df * ends
    single = hi_idx == lo_idx
    if single.any():
        q[:, single] = df * g[:, lo_idx[single]]

    qmax = q.max(axis=1)
    tie = q >= (qmax * (1.0 - 1e-12))[:, None]
    penalty = np.abs(freqs - spec.f_center)
    choice = np.argmin(np.where(tie, penalty[None, :], np.inf), axis=1)
    values = spec.bands.clamp(freqs[choice])
    return FrequencyMap(values=values, provenance="slo")


def _alo_core(rho: np.ndarray, sigma: np.ndarray, f0: float) -> np.ndarray:
    """Closed-form spectral-peak estimate from element-distance statistics.

    All five reductions use the same elementwise-product-then-sum path so that
    at the beam target (rho == sigma) numerator and denominator are bitwise
    equal and the estimate is exactly f0.
    """
    eta = _INV_SQRT_4PI / rho
    er = eta * rho
    s0 = eta.sum(axis=1)
    s1 = er.sum(axis=1)
    s2 = (er * rho).sum(axis=1)
    t1 = (eta * sigma[None, :]).sum(axis=1)
    u1 = (er * sigma[None, :]).sum(axis=1)
    num = s0 * u1 - s1 * t1
    den = s0 * s2 - s1 * s1
    scale = s0 * s2
    degenerate = np.abs(den) <= 1e-12 * scale
    safe_den = np.where(degenerate, 1.0, den)
    return np.where(degenerate, f0, f0 * num / safe_den)


def alo_frequency_at(scene: SceneGeometry, points: np.ndarray, f0: float,
                     spec: SignalSpectrum | None = None) -> np.ndarray:
    """Closed-form tuning-frequency estimate at arbitrary surface points.

    ``points`` has shape (K, 2).  Clamped to the band support when a spectrum
    is given, raw otherwise.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    p3 = np.column_stack([pts[:, 0], pts[:, 1], np.zeros(pts.shape[0])])
    elems = element_positions(scene.ap)
    diff = p3[:, None, :] - elems[None, :, :]
    rho = np.sqrt((diff * diff).sum(axis=2))
    sigma = ap_distances(scene.ap, np.array([0.0, 0.0, 0.0]))
    values = _alo_core(rho, sigma, f0)
    if spec is not None:
        values = spec.bands.clamp(values)
    return values


def freq_alo(scene: SceneGeometry, f0: float, spec: SignalSpectrum) -> FrequencyMap:
    """Closed-form tuning frequency per grid point, clamped to the band support.

    Assumes the array beam is tuned at f0 toward the surface center; the
    estimate maximizes a second-order expansion of the local field power.
    Degenerate points (single-element array) fall back to f0.
    """
    sigma = ap_distances(scene.ap, np.array([0.0, 0.0, 0.0]))
    values = np.empty(scene.n_points)
    for lo in range(0, scene.n_points, _ALO_CHUNK):
        hi = min(lo + _ALO_CHUNK, scene.n_points)
        values[lo:hi] = _alo_core(scene.rho_ap[lo:hi], sigma, f0)
    return FrequencyMap(values=spec.bands.clamp(values), provenance="alo")


def snell_gradient(scene: SceneGeometry, fmap: FrequencyMap) -> GradientField:
    """Ideal phase gradient from the reflection law at per-point frequencies.

    Uses the local zenith/azimuth of the terminal and of the array center as
    seen from each grid point, with the same sign convention as
    :func:`configure_nbf`: for a constant frequency map and far-away endpoints
    the fitted phase reduces to that linear plane.
    """
    if fmap.values.shape != (scene.n_points,):
        raise ValueError("frequency map is not defined on the scene grid")
    k = _TWO_PI_OVER_C * fmap.values
    sin_ue = np.sin(scene.theta_ue)
    sin_ap = np.sin(scene.theta_ap)
    gx = k * (sin_ue * np.cos(scene.psi_ue) + sin_ap * np.cos(scene.psi_ap))
    gy = k * (sin_ue * np.sin(scene.psi_ue) + sin_ap * np.sin(scene.psi_ap))
    return GradientField(gx=gx, gy=gy, shape=scene.shape, spacing=scene.cell_size)


def _difference_operators(nx: int, ny: int, h: float):
    """Forward-difference operators on the flattened (nx, ny) grid."""
    def d1(n: int) -> sparse.csr_matrix:
        return sparse.diags([-np.ones(n - 1), np.ones(n - 1)], [0, 1],
                            shape=(n - 1, n), format="csr") / h
    dx = sparse.kron(d1(nx), sparse.eye(ny), format="csr")
    dy = sparse.kron(sparse.eye(nx), d1(ny), format="csr")
    return dx, dy


def fit_phase_lsq(grad: GradientField, tol: float = 1e-8,
                  max_iter: int | None = None) -> PhaseMap:
    """Grid phase whose forward-difference gradient best matches the target.

    Solves the normal equations of ``min ||D phi - g||^2`` (a discrete Poisson
    problem with natural boundaries) by conjugate gradients to a relative
    residual below ``tol``; the x-differences compare against the target
    gradient at their base points, so the last row/column carries no equation
    of its own.  The phase at the central grid cell is pinned to zero.
    """
    nx, ny = grad.shape
    if nx < 2 or ny < 2:
        raise ValueError("phase fit needs a grid of at least 2x2 points")
    if grad.gx.size != nx * ny or grad.gy.size != nx * ny:
        raise ValueError("gradient samples do not match the grid shape")
    dx, dy = _difference_operators(nx, ny, grad.spacing)
    gx = grad.gx.reshape(nx, ny)[:-1, :].ravel()
    gy = grad.gy.reshape(nx, ny)[:, :-1].ravel()
    rhs = dx.T @ gx + dy.T @ gy
    normal = (dx.T @ dx + dy.T @ dy).tocsr()

    center = (nx // 2) * ny + ny // 2
    rhs_norm = float(np.linalg.norm(rhs))
    if rhs_norm == 0.0:
        return PhaseMap(values=np.zeros(nx * ny), technique="LSQ",
                        info={"residual": 0.0, "iterations": 0})
    if max_iter is None:
        max_iter = 200 + 20 * (nx + ny)
    iterations = 0

    def count(_):
        nonlocal iterations
        iterations += 1

    solution, status = cg(normal, rhs, rtol=tol, atol=0.0, maxiter=max_iter,
                          callback=count)
    residual = float(np.linalg.norm(normal @ solution - rhs)) / rhs_norm
    if status != 0 or residual > tol:
        raise PhaseFitError(
            f"phase fit stalled after {iterations} iterations; "
            f"relative residual {residual:.3e} (target {tol:.1e})")
    values = solution - solution[center]
    return PhaseMap(values=values, technique="LSQ",
                    info={"residual": residual, "iterations": iterations})


def _fit_from_fmap(fmap: FrequencyMap, scene: SceneGeometry, technique: str,
                   extra: dict) -> PhaseMap:
    fitted = fit_phase_lsq(snell_gradient(scene, fmap))
    info = dict(fitted.info or {})
    info.update(extra)
    return PhaseMap(values=_centered(fitted.values, scene),
                    technique=technique, info=info)


def configure_slo(field: IncidentField, resp: IrsResponse, scene: SceneGeometry,
                  spec: SignalSpectrum, window: float | None = None) -> PhaseMap:
    """Window-argmax tuning frequencies fed through the least-squares phase fit.

    The uncontrollable surface response is position-independent, so it does
    not influence the map.  Default window width is a tenth of the bandwidth.
    """
    if window is None:
        window = spec.bandwidth / 10.0
    fmap = freq_slo(field, spec, window)
    return _fit_from_fmap(fmap, scene, "SLO", {"window": float(window)})


def configure_alo(field: IncidentField, resp: IrsResponse, scene: SceneGeometry,
                  spec: SignalSpectrum) -> PhaseMap:
    """Closed-form tuning frequencies fed through the least-squares phase fit."""
    fmap = freq_alo(scene, spec.f_center, spec)
    return _fit_from_fmap(fmap, scene, "ALO", {})
