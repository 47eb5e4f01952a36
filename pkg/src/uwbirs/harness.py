"""Scenario runner: declarative configs in, figure-ready CSV/JSON artifacts out.

A scenario file is JSON (versioned schema) stating the scene in meters and
degrees, the spectrum in multiples of the center frequency, the beamformer
mode, the techniques to run, and the sweep type.  Running one produces, per
bandwidth, a received-spectrum CSV (gap rows omitted), one metrics-vs-
bandwidth CSV, and a JSON manifest listing every artifact with a content
hash.  Outputs are written atomically and are byte-identical across runs and
worker counts for a fixed scenario and seed.
"""

from __future__ import annotations

import csv
import json
import os
import struct
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from threading import Lock

import numpy as np

from ._hashing import digest
from .configurators import (PhaseFitError, configure_alo, configure_ed,
                            configure_nb, configure_nbf, configure_slo,
                            upper_bound_envelope)
from .geometry import ApArraySpec, IrsGridSpec, SceneGeometry, build_scene
from .metrics import MetricReport, metric_report, normalize
from .spectrum import SignalSpectrum, band_integral, barycenter, make_spectrum
from .wavefield import (BeamformerSpec, IncidentField, IrsResponse, PhaseMap,
                        SPEED_OF_LIGHT, TransferFunction, incident_field,
                        transfer_function, zero_response)

SCHEMA_VERSION = 1
TECHNIQUES = ("UB", "NB", "NBF", "ED", "SLO", "ALO")
CACHE_ENV_VAR = "UWBIRS_CACHE_DIR"

_FIELD_MAGIC = b"UWF1"
_PHASE_MAGIC = b"UWPM"

EXIT_OK = 0
EXIT_SCHEMA = 2
EXIT_NONCONVERGED = 3
EXIT_IO = 4


class ScenarioError(ValueError):
    """Scenario file failed validation; ``diagnostics`` lists the problems."""

    def __init__(self, diagnostics: list[str]):
        super().__init__("; ".join(diagnostics))
        self.diagnostics = diagnostics


class CacheError(RuntimeError):
    """Field cache file is corrupted or unreadable."""


# ---------------------------------------------------------------------------
# scenario loading and validation

@dataclass(frozen=True)
class Scenario:
    """Validated scenario with SI-unit accessors."""

    raw: dict
    path: Path | None = None

    @property
    def name(self) -> str:
        return self.raw.get("name", self.path.stem if self.path else "scenario")

    @property
    def seed(self) -> int:
        return int(self.raw.get("seed", 0))

    @property
    def f0(self) -> float:
        return float(self.raw["scene"]["f0_ghz"]) * 1e9

    @property
    def pitch(self) -> float:
        irs = self.raw["scene"]["irs"]
        if "pitch_m" in irs:
            return float(irs["pitch_m"])
        return SPEED_OF_LIGHT / self.f0 / 2.0

    @property
    def techniques(self) -> tuple[str, ...]:
        return tuple(self.raw["techniques"])

    @property
    def sweep(self) -> str:
        return self.raw["sweep"]

    @property
    def bandwidths(self) -> tuple[float, ...]:
        rb = self.raw["spectrum"]["relative_bandwidth"]
        if isinstance(rb, (int, float)):
            rb = [rb]
        return tuple(float(b) for b in rb)

    @property
    def slo_window_fraction(self) -> float:
        return float(self.raw.get("slo_window_fraction", 0.1))

    def ap_spec(self) -> ApArraySpec:
        ap = self.raw["scene"]["ap"]
        spacing = float(ap.get("spacing_m", self.pitch))
        return ApArraySpec(
            rows=int(ap["rows"]), cols=int(ap["cols"]), spacing=spacing,
            origin=tuple(float(v) for v in ap["origin_m"]),
            bearing=np.deg2rad(float(ap.get("bearing_deg", 0.0))),
            downtilt=np.deg2rad(float(ap.get("downtilt_deg", 0.0))),
            slant=np.deg2rad(float(ap.get("slant_deg", 0.0))),
        )

    def irs_spec(self, decimation: int | None = None) -> IrsGridSpec:
        irs = self.raw["scene"]["irs"]
        return IrsGridSpec(
            size_x=float(irs["size_x_m"]), size_y=float(irs["size_y_m"]),
            pitch=self.pitch,
            decimation=int(decimation or irs.get("decimation", 1)),
        )

    def scene(self, decimation: int | None = None) -> SceneGeometry:
        ue = np.array([float(v) for v in self.raw["scene"]["ue_m"]])
        return build_scene(self.ap_spec(), self.irs_spec(decimation), ue)

    def spectrum(self, b_rel: float) -> SignalSpectrum:
        sp = self.raw["spectrum"]
        return make_spectrum(
            f0=self.f0, bandwidth=b_rel * self.f0,
            shape=sp.get("shape", "flat"),
            sub_bands=int(sp.get("sub_bands", 1)),
            gap_fraction=float(sp.get("gap_fraction", 0.05)),
            n_freq=int(sp.get("samples", 100)),
        )

    def beamformer(self) -> BeamformerSpec:
        bf = self.raw.get("beamformer", "central")
        if isinstance(bf, str):
            return BeamformerSpec(mode=bf)
        f0 = self.f0
        return BeamformerSpec(
            mode=bf["mode"],
            sub_bands=tuple((float(lo) * f0, float(hi) * f0)
                            for lo, hi in bf.get("sub_bands_rel", ())),
            tuned=tuple(float(fk) * f0 for fk in bf.get("tuned_rel", ())),
        )

    def zeta_table(self) -> tuple[np.ndarray, np.ndarray] | None:
        rel = self.raw.get("irs_response_file")
        if not rel:
            return None
        base = self.path.parent if self.path else Path.cwd()
        table = np.loadtxt(base / rel, delimiter=",", skiprows=1, ndmin=2)
        freqs = table[:, 0] * self.f0
        return table[:, 1] + 1j * table[:, 2], freqs

    def config_hash(self) -> str:
        return digest("scenario", json.dumps(self.raw, sort_keys=True))


def _validate_dict(raw: dict) -> list[str]:
    diags: list[str] = []

    def need(container, key, where) -> bool:
        if key not in container:
            diags.append(f"missing required field {where}.{key}")
            return False
        return True

    if raw.get("schema_version") != SCHEMA_VERSION:
        diags.append(f"schema_version must be {SCHEMA_VERSION}")
    if not need(raw, "scene", "$") or not isinstance(raw["scene"], dict):
        return diags
    scene = raw["scene"]
    if need(scene, "f0_ghz", "scene") and not float(scene["f0_ghz"]) > 0:
        diags.append("scene.f0_ghz must be positive")
    if need(scene, "ap", "scene"):
        ap = scene["ap"]
        for key in ("rows", "cols", "origin_m"):
            need(ap, key, "scene.ap")
        if int(ap.get("rows", 1)) < 1 or int(ap.get("cols", 1)) < 1:
            diags.append("scene.ap must have at least one element per axis")
    if need(scene, "irs", "scene"):
        irs = scene["irs"]
        for key in ("size_x_m", "size_y_m"):
            if need(irs, key, "scene.irs") and not float(irs[key]) > 0:
                diags.append(f"scene.irs.{key} must be positive")
        if int(irs.get("decimation", 1)) < 1:
            diags.append("scene.irs.decimation must be >= 1")
    if need(scene, "ue_m", "scene"):
        ue = scene["ue_m"]
        if len(ue) != 3:
            diags.append("scene.ue_m must be a 3-vector")
        elif float(ue[2]) == 0.0:
            diags.append("scene.ue_m must not lie on the surface plane z = 0")

    if need(raw, "spectrum", "$"):
        sp = raw["spectrum"]
        shape = sp.get("shape", "flat")
        if shape not in ("flat", "triangular", "triangular-notch", "tabulated"):
            diags.append(f"unknown spectrum.shape {shape!r}")
        sub = int(sp.get("sub_bands", 1))
        if sub not in (1, 2, 3):
            diags.append("spectrum.sub_bands must be 1, 2 or 3")
        gap = float(sp.get("gap_fraction", 0.05))
        if not 0.0 <= gap < 1.0 / max(sub, 1):
            diags.append("spectrum.gap_fraction must lie in [0, 1/sub_bands)")
        if int(sp.get("samples", 100)) < 2:
            diags.append("spectrum.samples must be >= 2")
        if need(sp, "relative_bandwidth", "spectrum"):
            rb = sp["relative_bandwidth"]
            values = [rb] if isinstance(rb, (int, float)) else list(rb)
            if not values:
                diags.append("spectrum.relative_bandwidth must not be empty")
            for b in values:
                if not 0.0 < float(b) <= 0.5:
                    diags.append(f"relative bandwidth {b} outside (0, 0.5]")

    if need(raw, "techniques", "$"):
        techniques = raw["techniques"]
        if not techniques:
            diags.append("techniques list must not be empty")
        for tech in techniques:
            if tech not in TECHNIQUES:
                diags.append(f"unknown technique {tech!r}")
        bf = raw.get("beamformer", "central")
        mode = bf if isinstance(bf, str) else bf.get("mode")
        if "ALO" in techniques and mode != "central":
            diags.append("ALO requires the central beamformer")
        if mode not in ("ideal", "central", "hybrid"):
            diags.append(f"unknown beamformer mode {mode!r}")

    if need(raw, "sweep", "$") and raw["sweep"] not in ("spectrum-vs-f", "metric-vs-b"):
        diags.append(f"unknown sweep kind {raw['sweep']!r}")
    return diags


def bundled_scenario_path(name: str) -> Path:
    path = Path(__file__).parent / "scenarios" / f"{name}.json"
    if not path.exists():
        raise ScenarioError([f"no bundled scenario named {name!r}"])
    return path


def resolve_scenario(source) -> Path:
    """Accept a filesystem path or the name of a bundled scenario."""
    path = Path(source)
    if path.exists():
        return path
    return bundled_scenario_path(str(source))


def load_scenario(source) -> Scenario:
    """Parse and validate a scenario; raises ScenarioError with diagnostics."""
    if isinstance(source, Scenario):
        return source
    if isinstance(source, dict):
        raw, path = source, None
    else:
        path = resolve_scenario(source)
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ScenarioError([f"not valid JSON: {exc}"]) from exc
    diags = _validate_dict(raw)
    if diags:
        raise ScenarioError(diags)
    return Scenario(raw=raw, path=path)


def validate_scenario(source) -> list[str]:
    """Diagnostics for a scenario file without running it (empty means valid)."""
    try:
        if isinstance(source, dict):
            return _validate_dict(source)
        path = resolve_scenario(source)
        raw = json.loads(path.read_text())
    except ScenarioError as exc:
        return exc.diagnostics
    except json.JSONDecodeError as exc:
        return [f"not valid JSON: {exc}"]
    except OSError as exc:
        return [f"cannot read scenario: {exc}"]
    return _validate_dict(raw)


# ---------------------------------------------------------------------------
# incident-field cache

def _field_cache_name(scene_key: str, bf_key: str, spectrum_key: str,
                      dtype: str) -> str:
    return digest("fieldfile", scene_key, bf_key, spectrum_key, dtype)[:32] + ".field"


def cache_field(field: IncidentField, cache_dir) -> Path:
    """Write the field to the cache; the payload round-trips bit-exactly."""
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    dtype = "<c8" if field.w.dtype == np.complex64 else "<c16"
    header = json.dumps({
        "n_points": int(field.w.shape[0]), "n_freq": int(field.w.shape[1]),
        "dtype": dtype, "scene": field.scene_key,
        "beamformer": field.beamformer.key(), "spectrum": field.spectrum.key,
    }).encode()
    payload = np.ascontiguousarray(field.w).astype(dtype, copy=False).tobytes()
    name = _field_cache_name(field.scene_key, field.beamformer.key(),
                             field.spectrum.key, dtype)
    path = cache_dir / name
    _atomic_write_bytes(path, _FIELD_MAGIC + struct.pack("<I", len(header))
                        + header + payload)
    return path


def load_field(scene: SceneGeometry, bf: BeamformerSpec, spec: SignalSpectrum,
               cache_dir, dtype=np.complex128) -> IncidentField | None:
    """Load a cached field; None on miss, CacheError on a corrupted file."""
    wire = "<c8" if np.dtype(dtype) == np.complex64 else "<c16"
    path = Path(cache_dir) / _field_cache_name(scene.key, bf.key(), spec.key, wire)
    if not path.exists():
        return None
    blob = path.read_bytes()
    if len(blob) < 8 or blob[:4] != _FIELD_MAGIC:
        raise CacheError(f"corrupted field cache header in {path}")
    hlen = struct.unpack("<I", blob[4:8])[0]
    try:
        header = json.loads(blob[8:8 + hlen])
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CacheError(f"corrupted field cache header in {path}") from exc
    if (header.get("scene") != scene.key or header.get("beamformer") != bf.key()
            or header.get("spectrum") != spec.key or header.get("dtype") != wire):
        return None
    expected = header["n_points"] * header["n_freq"] * np.dtype(wire).itemsize
    payload = blob[8 + hlen:]
    if len(payload) != expected:
        raise CacheError(f"field cache payload truncated in {path}")
    w = np.frombuffer(payload, dtype=wire).astype(dtype, copy=False)
    w = w.reshape(header["n_points"], header["n_freq"]).copy()
    w.setflags(write=False)
    return IncidentField(w=w, freqs=spec.freqs, spectrum=spec, beamformer=bf,
                         scene_key=scene.key)


# ---------------------------------------------------------------------------
# phase-map export

def save_phase_csv(pm: PhaseMap, scene: SceneGeometry, path) -> Path:
    path = Path(path)
    rows = ["x_m,y_m,phase_rad"]
    for x, y, p in zip(scene.x, scene.y, pm.values):
        rows.append(f"{x:.12g},{y:.12g},{p:.12g}")
    _atomic_write_bytes(path, ("\n".join(rows) + "\n").encode())
    return path


def save_phase_binary(pm: PhaseMap, scene: SceneGeometry, path) -> Path:
    nx, ny = scene.shape
    blob = _PHASE_MAGIC + struct.pack("<IId", nx, ny, scene.cell_size)
    blob += pm.values.astype("<f8").tobytes()
    _atomic_write_bytes(Path(path), blob)
    return Path(path)


def load_phase_binary(path) -> tuple[np.ndarray, tuple[int, int], float]:
    blob = Path(path).read_bytes()
    if blob[:4] != _PHASE_MAGIC:
        raise CacheError(f"not a phase-map dump: {path}")
    nx, ny, cell = struct.unpack("<IId", blob[4:20])
    values = np.frombuffer(blob[20:], dtype="<f8").copy()
    return values, (nx, ny), cell


# ---------------------------------------------------------------------------
# running

@dataclass
class BandOutcome:
    """Everything computed for one bandwidth."""

    b_rel: float
    spectrum: SignalSpectrum
    envelope: np.ndarray
    phase_maps: dict[str, PhaseMap | None]
    transfers: dict[str, TransferFunction]
    reports: dict[str, MetricReport]
    errors: dict[str, str] = dc_field(default_factory=dict)
    timings: dict[str, float] = dc_field(default_factory=dict)


@dataclass
class RunResult:
    exit_code: int
    out_dir: Path
    scenario: Scenario
    artifacts: list[Path]
    manifest: dict
    bands: dict[float, BandOutcome]


def _envelope_transfer(env: np.ndarray, spec: SignalSpectrum,
                       context_key: str) -> TransferFunction:
    h = env.astype(np.complex128)
    z = spec.amplitude * env
    p_rx = band_integral(spec, z**2)
    return TransferFunction(freqs=spec.freqs, h=h, z=z.astype(np.complex128),
                            p_rx=p_rx, context_key=context_key)


def _run_band(scenario: Scenario, scene: SceneGeometry, bf: BeamformerSpec,
              b_rel: float, techniques: tuple[str, ...], dtype,
              cache_dir, cache_lock: Lock | None) -> BandOutcome:
    spec = scenario.spectrum(b_rel)
    zeta = scenario.zeta_table()
    resp0 = zero_response(scene, *(zeta or (None, None)))

    timings: dict[str, float] = {}
    t0 = time.perf_counter()
    field = None
    if cache_dir is not None:
        field = load_field(scene, bf, spec, cache_dir, dtype)
    fresh = field is None
    if fresh:
        field = incident_field(scene, bf, spec, dtype=dtype)
    if fresh and cache_dir is not None:
        with cache_lock or Lock():
            cache_field(field, cache_dir)
    timings["field"] = time.perf_counter() - t0

    env = upper_bound_envelope(field, resp0, scene)
    tf_ub = _envelope_transfer(env, spec, field.context_key)
    report_ub = metric_report(tf_ub, spec, "UB")
    report_ub = normalize(report_ub, report_ub)

    f_nb = barycenter(spec)
    window = scenario.slo_window_fraction * spec.bandwidth
    builders = {
        "NB": lambda: configure_nb(field, resp0, scene),
        "NBF": lambda: configure_nbf(scene, f_nb),
        "ED": lambda: configure_ed(field, resp0, scene, spec, seed=scenario.seed),
        "SLO": lambda: configure_slo(field, resp0, scene, spec, window=window),
        "ALO": lambda: configure_alo(field, resp0, scene, spec),
    }

    phase_maps: dict[str, PhaseMap | None] = {}
    transfers: dict[str, TransferFunction] = {}
    reports: dict[str, MetricReport] = {}
    errors: dict[str, str] = {}
    for tech in techniques:
        t1 = time.perf_counter()
        if tech == "UB":
            phase_maps[tech] = None
            transfers[tech] = tf_ub
            reports[tech] = report_ub
        else:
            try:
                pm = builders[tech]()
            except PhaseFitError as exc:
                errors[tech] = str(exc)
                timings[tech] = time.perf_counter() - t1
                continue
            phase_maps[tech] = pm
            tf = transfer_function(field, resp0.with_phase(pm), scene)
            transfers[tech] = tf
            reports[tech] = normalize(metric_report(tf, spec, tech), report_ub)
        timings[tech] = time.perf_counter() - t1
    return BandOutcome(b_rel=b_rel, spectrum=spec, envelope=env,
                       phase_maps=phase_maps, transfers=transfers,
                       reports=reports, errors=errors, timings=timings)


def _atomic_write_bytes(path: Path, blob: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_csv(path: Path, header: list[str], rows: list[list[str]]) -> None:
    import io
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    _atomic_write_bytes(path, buf.getvalue().encode())


def _fmt(x: float) -> str:
    return f"{x:.12g}"


def _spectrum_csv(out_dir: Path, outcome: BandOutcome, f0: float,
                  techniques: tuple[str, ...]) -> Path:
    spec = outcome.spectrum
    present = [t for t in techniques if t in outcome.reports]
    header = ["f_over_f0"] + [f"Znorm2_{t}" for t in present]
    rows = []
    for i in np.flatnonzero(spec.mask):
        row = [_fmt(spec.freqs[i] / f0)]
        for tech in present:
            row.append(_fmt(float(outcome.reports[tech].z_norm[i])))
        rows.append(row)
    path = out_dir / f"spectrum_B{outcome.b_rel:.3f}.csv"
    _write_csv(path, header, rows)
    return path


def _sweep_csv(out_dir: Path, outcomes: list[BandOutcome],
               techniques: tuple[str, ...]) -> Path:
    header = ["B_over_f0"]
    for tech in techniques:
        header += [f"P_norm_{tech}", f"CV_norm_{tech}"]
    rows = []
    for outcome in outcomes:
        row = [_fmt(outcome.b_rel)]
        for tech in techniques:
            report = outcome.reports.get(tech)
            if report is None:
                row += ["nan", "nan"]
            else:
                row += [_fmt(report.p_norm), _fmt(report.cv_norm)]
        rows.append(row)
    path = out_dir / "sweep.csv"
    _write_csv(path, header, rows)
    return path


def _sha256_file(path: Path) -> str:
    import hashlib
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run_scenario(source, out_dir=None, decimation: int | None = None,
                 threads: int = 1, precision: str = "f64",
                 save_phases: bool = False, cache_dir=None,
                 bands_override=None) -> RunResult:
    """Execute a scenario end to end and write its artifacts.

    Exit code 0 on success, 3 when the eigenvector iteration or the phase fit
    failed to converge somewhere (partial outputs are still written).  Schema
    problems raise ScenarioError before anything runs; I/O failures propagate
    as OSError.
    """
    scenario = load_scenario(source)
    if precision not in ("f32", "f64"):
        raise ValueError("precision must be 'f32' or 'f64'")
    dtype = np.complex64 if precision == "f32" else np.complex128
    if cache_dir is None:
        cache_dir = os.environ.get(CACHE_ENV_VAR) or None

    out_dir = Path(out_dir or scenario.raw.get("output_dir")
                   or f"out_{scenario.name}")
    scene = scenario.scene(decimation)
    bf = scenario.beamformer()
    techniques = scenario.techniques
    bands = tuple(float(b) for b in (bands_override or scenario.bandwidths))

    t_start = time.perf_counter()
    cache_lock = Lock()
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = {b: pool.submit(_run_band, scenario, scene, bf, b,
                                      techniques, dtype, cache_dir, cache_lock)
                       for b in bands}
            outcomes = [futures[b].result() for b in bands]
    else:
        outcomes = [_run_band(scenario, scene, bf, b, techniques, dtype,
                              cache_dir, cache_lock) for b in bands]

    artifacts: list[Path] = []
    for outcome in outcomes:
        artifacts.append(_spectrum_csv(out_dir, outcome, scenario.f0, techniques))
        if save_phases:
            for tech, pm in outcome.phase_maps.items():
                if pm is None:
                    continue
                artifacts.append(save_phase_csv(
                    pm, scene, out_dir / f"phase_{tech}_B{outcome.b_rel:.3f}.csv"))
    artifacts.append(_sweep_csv(out_dir, outcomes, techniques))

    ed_stats = {}
    errors = {}
    for outcome in outcomes:
        pm = outcome.phase_maps.get("ED")
        if pm is not None and pm.info is not None:
            ed_stats[_fmt(outcome.b_rel)] = {
                "iterations": pm.info.get("iterations"),
                "converged": bool(pm.info.get("converged")),
            }
        if outcome.errors:
            errors[_fmt(outcome.b_rel)] = dict(outcome.errors)

    nonconverged = any(not s["converged"] for s in ed_stats.values()) or bool(errors)
    exit_code = EXIT_NONCONVERGED if nonconverged else EXIT_OK

    manifest = {
        "schema_version": SCHEMA_VERSION,
        "scenario": scenario.name,
        "config_hash": scenario.config_hash(),
        "seed": scenario.seed,
        "precision": precision,
        "decimation": scene.irs.decimation,
        "grid_shape": list(scene.shape),
        "techniques": list(techniques),
        "bandwidths": [_fmt(b) for b in bands],
        "elapsed_seconds": time.perf_counter() - t_start,
        "timings": {_fmt(o.b_rel): o.timings for o in outcomes},
        "ed": ed_stats,
        "errors": errors,
        "exit_code": exit_code,
        "artifacts": [{"path": str(p.relative_to(out_dir)),
                       "sha256": _sha256_file(p)} for p in artifacts],
    }
    manifest_path = out_dir / "run_manifest.json"
    _atomic_write_bytes(manifest_path, json.dumps(manifest, indent=2).encode())
    artifacts.append(manifest_path)

    return RunResult(exit_code=exit_code, out_dir=out_dir, scenario=scenario,
                     artifacts=artifacts, manifest=manifest,
                     bands={o.b_rel: o for o in outcomes})
