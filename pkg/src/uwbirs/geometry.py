"""Scene geometry: access-point planar array, reflecting-surface grid, user terminal.

The reflecting surface lies in the z = 0 plane of the global frame with its
center at the origin.  The access point carries a uniform planar array whose
elements live in the x'-z' plane of a local frame; the local frame is placed
by an origin plus bearing/downtilt/slant rotations.  All lengths are meters,
all angles radians.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._hashing import digest

_CHUNK = 32768  # grid points per distance-tensor block, bounds peak memory


def rotation_matrix(bearing: float, downtilt: float, slant: float) -> np.ndarray:
    """Frame rotation composed as Rz(bearing) @ Ry(downtilt) @ Rx(slant)."""
    ca, sa = np.cos(bearing), np.sin(bearing)
    cb, sb = np.cos(downtilt), np.sin(downtilt)
    cg, sg = np.cos(slant), np.sin(slant)
    rz = np.array([[ca, -sa, 0.0], [sa, ca, 0.0], [0.0, 0.0, 1.0]])
    ry = np.array([[cb, 0.0, sb], [0.0, 1.0, 0.0], [-sb, 0.0, cb]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cg, -sg], [0.0, sg, cg]])
    return rz @ ry @ rx


@dataclass(frozen=True)
class ApArraySpec:
    """Uniform planar array at the access point.

    ``rows`` elements run along the local z' axis, ``cols`` along x', both at
    ``spacing`` meters.  ``origin`` is the array center in global coordinates.
    """

    rows: int
    cols: int
    spacing: float
    origin: tuple[float, float, float]
    bearing: float = 0.0
    downtilt: float = 0.0
    slant: float = 0.0

    def __post_init__(self) -> None:
        if self.rows < 1 or self.cols < 1:
            raise ValueError("array needs at least one element per axis")
        if not self.spacing > 0.0:
            raise ValueError("element spacing must be positive")

    @property
    def size(self) -> int:
        return self.rows * self.cols

    def rotation(self) -> np.ndarray:
        return rotation_matrix(self.bearing, self.downtilt, self.slant)

    def key(self) -> str:
        return digest("ap", self.rows, self.cols, self.spacing,
                      tuple(self.origin), self.bearing, self.downtilt, self.slant)


def element_position(ap: ApArraySpec, m: int, n: int) -> np.ndarray:
    """Global coordinates of array element (m, n)."""
    if not (0 <= m < ap.rows and 0 <= n < ap.cols):
        raise IndexError(f"element index ({m}, {n}) outside {ap.rows}x{ap.cols} array")
    local = np.array([
        (n - (ap.cols - 1) / 2.0) * ap.spacing,
        0.0,
        (m - (ap.rows - 1) / 2.0) * ap.spacing,
    ])
    return np.asarray(ap.origin, dtype=float) + ap.rotation() @ local


def element_positions(ap: ApArraySpec) -> np.ndarray:
    """Global coordinates of all elements, shape (rows*cols, 3), row-major in (m, n)."""
    m = np.arange(ap.rows, dtype=float)
    n = np.arange(ap.cols, dtype=float)
    local = np.zeros((ap.rows, ap.cols, 3))
    local[:, :, 0] = ((n - (ap.cols - 1) / 2.0) * ap.spacing)[None, :]
    local[:, :, 2] = ((m - (ap.rows - 1) / 2.0) * ap.spacing)[:, None]
    flat = local.reshape(-1, 3)
    return np.asarray(ap.origin, dtype=float)[None, :] + flat @ ap.rotation().T


def ap_distances(ap: ApArraySpec, point: np.ndarray) -> np.ndarray:
    """Distances from every array element to an arbitrary 3D point, shape (rows*cols,)."""
    p = np.asarray(point, dtype=float)
    diff = element_positions(ap) - p[None, :]
    return np.sqrt((diff * diff).sum(axis=1))


@dataclass(frozen=True)
class IrsGridSpec:
    """Reflecting-surface extent and sampling.

    The surface spans ``[-size_x/2, size_x/2] x [-size_y/2, size_y/2]``; sample
    points are element centers at ``(i + 1/2) * pitch - size/2`` with partial
    cells beyond the extent dropped.  ``decimation`` keeps every d-th center
    per axis, so the decimated grid is an exact stride of the full one.
    """

    size_x: float
    size_y: float
    pitch: float
    decimation: int = 1

    def __post_init__(self) -> None:
        if not (self.size_x > 0.0 and self.size_y > 0.0):
            raise ValueError("surface extent must be positive along both axes")
        if not self.pitch > 0.0:
            raise ValueError("element pitch must be positive")
        if self.decimation < 1:
            raise ValueError("decimation must be >= 1")
        if int(self.size_x / self.pitch + 1e-9) < 1 or int(self.size_y / self.pitch + 1e-9) < 1:
            raise ValueError("surface narrower than one element")

    def axis_centers(self, extent: float) -> np.ndarray:
        n = int(extent / self.pitch + 1e-9)
        centers = (np.arange(n) + 0.5) * self.pitch - extent / 2.0
        return centers[:: self.decimation]

    @property
    def cell_size(self) -> float:
        """Side of one decimated cell; its square is the per-point area weight."""
        return self.pitch * self.decimation

    def key(self) -> str:
        return digest("irs", self.size_x, self.size_y, self.pitch, self.decimation)


@dataclass(frozen=True)
class SceneGeometry:
    """Immutable scene with cached distance/angle tensors over the surface grid.

    Grid points are flattened C-order from shape ``(n_x, n_y)``; point index
    ``p = ix * n_y + iy``.  Per-point angles are zenith/azimuth of the target
    (terminal, or array center) as seen from the grid point with axes parallel
    to the global frame.
    """

    ap: ApArraySpec
    irs: IrsGridSpec
    ue: np.ndarray               # (3,)
    xs: np.ndarray               # (n_x,)
    ys: np.ndarray               # (n_y,)
    x: np.ndarray                # (P,)
    y: np.ndarray                # (P,)
    rho_ap: np.ndarray           # (P, rows*cols)
    rho_ue: np.ndarray           # (P,)
    rho_ap_center: np.ndarray    # (P,) distance to the array center
    theta_ap: np.ndarray         # (P,)
    psi_ap: np.ndarray           # (P,)
    theta_ue: np.ndarray         # (P,)
    psi_ue: np.ndarray           # (P,)
    center_index: int
    key: str

    @property
    def shape(self) -> tuple[int, int]:
        return self.xs.size, self.ys.size

    @property
    def n_points(self) -> int:
        return self.x.size

    @property
    def cell_size(self) -> float:
        return self.irs.cell_size


def _freeze(*arrays: np.ndarray) -> None:
    for a in arrays:
        a.setflags(write=False)


def build_scene(ap: ApArraySpec, irs: IrsGridSpec, ue) -> SceneGeometry:
    """Assemble the scene and populate all cached per-grid-point tensors."""
    ue = np.asarray(ue, dtype=float)
    if ue.shape != (3,):
        raise ValueError("terminal position must be a 3-vector")
    if ue[2] == 0.0:
        raise ValueError("terminal on the surface plane z = 0 has no well-defined "
                         "departure direction")

    xs = irs.axis_centers(irs.size_x)
    ys = irs.axis_centers(irs.size_y)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    x = gx.ravel()
    y = gy.ravel()
    points = np.column_stack([x, y, np.zeros_like(x)])

    elems = element_positions(ap)
    rho_ap = np.empty((points.shape[0], elems.shape[0]))
    for lo in range(0, points.shape[0], _CHUNK):
        hi = min(lo + _CHUNK, points.shape[0])
        diff = points[lo:hi, None, :] - elems[None, :, :]
        rho_ap[lo:hi] = np.sqrt((diff * diff).sum(axis=2))

    to_ue = ue[None, :] - points
    rho_ue = np.sqrt((to_ue * to_ue).sum(axis=1))
    theta_ue = np.arccos(np.clip(to_ue[:, 2] / rho_ue, -1.0, 1.0))
    psi_ue = np.arctan2(to_ue[:, 1], to_ue[:, 0])

    ap_center = np.asarray(ap.origin, dtype=float)
    to_ap = ap_center[None, :] - points
    rho_ap_center = np.sqrt((to_ap * to_ap).sum(axis=1))
    theta_ap = np.arccos(np.clip(to_ap[:, 2] / rho_ap_center, -1.0, 1.0))
    psi_ap = np.arctan2(to_ap[:, 1], to_ap[:, 0])

    if not (rho_ap.min() > 0.0 and rho_ue.min() > 0.0 and rho_ap_center.min() > 0.0):
        raise ValueError("a grid point coincides with the array or the terminal")

    center_index = int(np.argmin(x * x + y * y))
    key = digest("scene", ap.key(), irs.key(), ue)

    _freeze(xs, ys, x, y, rho_ap, rho_ue, rho_ap_center,
            theta_ap, psi_ap, theta_ue, psi_ue, ue)
    return SceneGeometry(
        ap=ap, irs=irs, ue=ue, xs=xs, ys=ys, x=x, y=y,
        rho_ap=rho_ap, rho_ue=rho_ue, rho_ap_center=rho_ap_center,
        theta_ap=theta_ap, psi_ap=psi_ap, theta_ue=theta_ue, psi_ue=psi_ue,
        center_index=center_index, key=key,
    )
