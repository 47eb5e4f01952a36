import numpy as np
import pytest

from conftest import (F0, PITCH, far_scene, flat_spectrum, small_scene,
                      table1_scene)
from uwbirs import (ApArraySpec, BeamformerSpec, FrequencyMap, GradientField,
                    IncidentField, IrsGridSpec, PhaseFitError, PhaseMap,
                    alo_frequency_at, ap_distances, band_integral, barycenter,
                    build_scene, configure_alo, configure_ed, configure_nb,
                    configure_nbf, configure_slo, ed_matrix, element_positions,
                    envelope_at, fit_phase_lsq, freq_alo, freq_slo,
                    incident_field, make_spectrum, metric_report,
                    snell_gradient, transfer_at, transfer_function,
                    transfer_magnitude_at,
                    upper_bound_envelope, zero_response)
from uwbirs.configurators import _difference_operators
from uwbirs.wavefield import _TWO_PI_OVER_C


def wrap(angles):
    return np.angle(np.exp(1j * np.asarray(angles)))


class TestUpperBound:
    def test_single_point_envelope_equals_any_transfer(self):
        ap = ApArraySpec(rows=2, cols=2, spacing=PITCH, origin=(0.0, -2.0, 1.0))
        irs = IrsGridSpec(size_x=1.2 * PITCH, size_y=1.2 * PITCH, pitch=PITCH)
        scene = build_scene(ap, irs, (0.0, 1.0, 2.0))
        spec = flat_spectrum(0.4, n_freq=16)
        field = incident_field(scene, BeamformerSpec(mode="central"), spec)
        resp = zero_response(scene)
        env = upper_bound_envelope(field, resp, scene)
        pm = PhaseMap(values=np.array([1.234]))
        tf = transfer_function(field, resp.with_phase(pm), scene)
        assert np.allclose(np.abs(tf.h), env, rtol=1e-12)

    def test_dominates_every_technique(self, small_setup):
        scene, spec, field, resp = small_setup
        env = upper_bound_envelope(field, resp, scene)
        pm_nb = configure_nb(field, resp, scene)
        candidates = [pm_nb, configure_nbf(scene, pm_nb.info["f_nb"]),
                      configure_ed(field, resp, scene, spec),
                      configure_slo(field, resp, scene, spec),
                      configure_alo(field, resp, scene, spec)]
        for pm in candidates:
            h = transfer_function(field, resp.with_phase(pm), scene).h
            assert np.all(np.abs(h) <= env * (1 + 1e-9)), pm.technique

    def test_envelope_scales_with_uncontrollable_response(self, small_setup):
        scene, spec, field, resp = small_setup
        env1 = upper_bound_envelope(field, resp, scene)
        resp2 = zero_response(scene,
                              zeta_samples=2.0 * np.ones(spec.n_freq, complex),
                              zeta_freqs=spec.freqs)
        env2 = upper_bound_envelope(field, resp2, scene)
        assert np.allclose(env2, 2.0 * env1, rtol=1e-15)


class TestNarrowband:
    def test_tangent_to_envelope_at_alignment_frequency(self, small_setup):
        scene, spec, field, resp = small_setup
        pm = configure_nb(field, resp, scene)
        f_nb = pm.info["f_nb"]
        ratio = transfer_magnitude_at(field, resp.with_phase(pm), scene, f_nb) \
            / envelope_at(field, resp, scene, f_nb)
        assert 1.0 - 1e-9 <= ratio <= 1.0

    def test_default_alignment_is_spectrum_barycenter(self, small_setup):
        scene, spec, field, resp = small_setup
        pm = configure_nb(field, resp, scene)
        assert pm.info["f_nb"] == barycenter(spec)
        explicit = configure_nb(field, resp, scene, f_nb=barycenter(spec))
        assert np.array_equal(pm.values, explicit.values)

    def test_global_constant_leaves_magnitudes_unchanged(self, small_setup):
        scene, spec, field, resp = small_setup
        pm = configure_nb(field, resp, scene)
        h1 = transfer_function(field, resp.with_phase(pm), scene).h
        h2 = transfer_function(field, resp.with_phase(pm.shifted(1.7)), scene).h
        assert np.abs(np.abs(h2) - np.abs(h1)).max() <= 1e-12 * np.abs(h1).max()

    def test_rejects_out_of_band_alignment_frequency(self, small_setup):
        scene, spec, field, resp = small_setup
        with pytest.raises(ValueError):
            configure_nb(field, resp, scene, f_nb=2.0 * F0)


class TestNarrowbandFarField:
    def test_specular_geometry_gives_constant_map(self):
        ap = ApArraySpec(rows=1, cols=1, spacing=PITCH, origin=(0.0, 0.0, 3.0))
        irs = IrsGridSpec(size_x=11 * PITCH, size_y=11 * PITCH, pitch=PITCH)
        scene = build_scene(ap, irs, (0.0, 0.0, 2.0))
        pm = configure_nbf(scene, F0)
        assert np.abs(pm.values).max() == 0.0

    def test_map_is_the_stated_linear_plane(self):
        scene = small_scene()
        pm = configure_nbf(scene, F0)
        sx, sy = pm.info["slopes"]
        plane = sx * scene.x + sy * scene.y
        plane -= plane[scene.center_index]
        assert np.allclose(pm.values, plane, atol=1e-12)

    def test_slopes_match_center_gradient(self):
        scene = small_scene()
        pm = configure_nbf(scene, F0)
        fmap = FrequencyMap(values=np.full(scene.n_points, F0))
        grad = snell_gradient(scene, fmap)
        sx, sy = pm.info["slopes"]
        c = scene.center_index  # exact surface center on this grid
        assert grad.gx[c] == pytest.approx(sx, rel=1e-12)
        assert grad.gy[c] == pytest.approx(sy, rel=1e-12)

    def test_near_field_map_differs_from_exact_alignment(self, table1_dec16):
        scene, spec, field, resp = table1_dec16
        pm_nb = configure_nb(field, resp, scene)
        pm_nbf = configure_nbf(scene, pm_nb.info["f_nb"])
        diff = wrap(pm_nbf.values - pm_nb.values)
        assert np.abs(diff).max() > 0.1


@pytest.fixture(scope="module")
def table1_dec16():
    scene = table1_scene(decimation=16)
    spec = flat_spectrum(0.4)
    field = incident_field(scene, BeamformerSpec(mode="central"), spec)
    return scene, spec, field, zero_response(scene)


@pytest.fixture(scope="module")
def table1_dec4_shared():
    scene = table1_scene(decimation=4)
    spec = flat_spectrum(0.4)
    field = incident_field(scene, BeamformerSpec(mode="central"), spec)
    return scene, spec, field, zero_response(scene)


class TestEigenvectorTechnique:
    def test_single_frequency_reduces_to_alignment(self):
        scene = small_scene(rows=4, cols=2)
        samples = np.zeros(32)
        samples[20] = 1.0
        spec = make_spectrum(F0, 0.4 * F0, "tabulated", n_freq=32,
                             samples=samples)
        field = incident_field(scene, BeamformerSpec(mode="central"), spec)
        resp = zero_response(scene)
        pm_ed = configure_ed(field, resp, scene, spec)
        pm_nb = configure_nb(field, resp, scene, f_nb=float(spec.freqs[20]))
        diff = wrap(pm_ed.values - pm_nb.values)
        diff = wrap(diff - diff[0])
        assert np.abs(diff).max() < 1e-6

    def test_received_power_equals_kernel_quadratic_form(self):
        scene = small_scene(cells_x=12, cells_y=12, rows=6, cols=2)
        assert scene.shape == (12, 12)
        spec = flat_spectrum(0.4, n_freq=16)
        field = incident_field(scene, BeamformerSpec(mode="central"), spec)
        resp = zero_response(scene)
        a = ed_matrix(field, resp, scene, spec)
        kernel = a.conj().T @ a
        cell4 = scene.cell_size**4
        rng = np.random.default_rng(17)
        for _ in range(5):
            phi = rng.uniform(-np.pi, np.pi, scene.n_points)
            v = np.exp(1j * phi)
            tf = transfer_function(field, resp.with_phase(PhaseMap(values=phi)),
                                   scene)
            quad = cell4 * float(np.real(np.vdot(v, kernel @ v)))
            assert tf.p_rx == pytest.approx(quad, rel=1e-6)

    def test_rayleigh_history_is_monotone(self, small_setup):
        scene, spec, field, resp = small_setup
        pm = configure_ed(field, resp, scene, spec)
        hist = np.asarray(pm.info["rayleigh"])
        assert pm.info["converged"]
        assert np.all(np.diff(hist) >= -1e-12 * hist.max())

    def test_matches_dense_eigensolver(self):
        scene = small_scene(cells_x=10, cells_y=10, rows=6, cols=2)
        spec = flat_spectrum(0.4, n_freq=8)
        field = incident_field(scene, BeamformerSpec(mode="central"), spec)
        resp = zero_response(scene)
        pm = configure_ed(field, resp, scene, spec)
        a = ed_matrix(field, resp, scene, spec)
        _, vecs = np.linalg.eigh(a.conj().T @ a)
        dense = np.angle(vecs[:, -1])
        diff = wrap(pm.values - dense)
        aligned = wrap(diff - np.angle(np.exp(1j * diff).sum()))
        assert np.abs(aligned).max() < 1e-6

    def test_eigenvalue_bounds_any_phase_map(self):
        scene = small_scene(cells_x=6, cells_y=6, rows=4, cols=2)
        spec = flat_spectrum(0.3, n_freq=12)
        field = incident_field(scene, BeamformerSpec(mode="central"), spec)
        resp = zero_response(scene)
        a = ed_matrix(field, resp, scene, spec)
        lam_max = np.linalg.eigvalsh(a.conj().T @ a).max()
        cell4 = scene.cell_size**4
        rng = np.random.default_rng(23)
        for _ in range(8):
            phi = rng.uniform(-np.pi, np.pi, scene.n_points)
            tf = transfer_function(field, resp.with_phase(PhaseMap(values=phi)),
                                   scene)
            assert tf.p_rx <= cell4 * lam_max * scene.n_points * (1 + 1e-9)


class TestWindowedFrequencyMap:
    def test_flat_field_ties_resolve_to_center_frequency(self):
        scene, spec, field = _single_element(n_freq=100)
        fmap = freq_slo(field, spec, window=0.05 * spec.bandwidth)
        # even sample count: the two center-nearest samples tie; lower one wins
        assert np.all(fmap.values == spec.freqs[49])

    def test_synthetic_peak_is_found(self):
        scene, spec, field = _single_element(n_freq=64)
        w = np.full((scene.n_points, 64), 1e-6, complex)
        w[:, 40] = 10.0
        synthetic = IncidentField(w=w, freqs=spec.freqs, spectrum=spec,
                                  beamformer=field.beamformer,
                                  scene_key=scene.key)
        fmap = freq_slo(synthetic, spec, window=0.05 * spec.bandwidth)
        assert np.all(fmap.values == spec.freqs[40])

    def test_tracks_local_beam_split_frequency(self, table1_dec16):
        scene, spec, field, _ = table1_dec16
        idx_11 = int(np.argmin(np.abs(spec.freqs - 1.1 * F0)))
        p_star = int(np.abs(field.w[:, idx_11]).argmax())
        window = spec.bandwidth / 10.0
        fmap = freq_slo(field, spec, window)
        assert abs(fmap.values[p_star] - 1.1 * F0) <= window

    def test_values_stay_inside_band_support(self, table1_dec16):
        scene, spec, field, _ = table1_dec16
        gapped = make_spectrum(F0, 0.4 * F0, "flat", sub_bands=2,
                               gap_fraction=0.05, n_freq=100)
        field_g = incident_field(scene, BeamformerSpec(mode="central"), gapped)
        fmap = freq_slo(field_g, gapped, window=gapped.bandwidth / 10)
        assert gapped.bands.contains(fmap.values).all()
        falo = freq_alo(scene, F0, gapped)
        assert gapped.bands.contains(falo.values).all()

    def test_rejects_bad_window(self):
        scene, spec, field = _single_element(n_freq=16)
        with pytest.raises(ValueError):
            freq_slo(field, spec, window=0.0)


def _single_element(n_freq):
    ap = ApArraySpec(rows=1, cols=1, spacing=PITCH, origin=(0.0, -2.0, 1.0))
    irs = IrsGridSpec(size_x=5 * PITCH, size_y=5 * PITCH, pitch=PITCH)
    scene = build_scene(ap, irs, (0.0, 1.0, 2.0))
    spec = flat_spectrum(0.4, n_freq=n_freq)
    field = incident_field(scene, BeamformerSpec(mode="central"), spec)
    return scene, spec, field


class TestClosedFormFrequencyMap:
    def test_exact_center_frequency_at_beam_target(self):
        scene = table1_scene(decimation=16)
        values = alo_frequency_at(scene, [[0.0, 0.0]], F0)
        assert values[0] == F0

    def test_single_element_degenerates_to_center_frequency(self):
        scene, spec, _ = _single_element(n_freq=8)
        fmap = freq_alo(scene, F0, spec)
        assert np.all(fmap.values == F0)

    def test_far_edge_matches_dense_scan(self):
        scene = table1_scene(decimation=16)
        point = np.array([[0.08, 0.45]])
        est = alo_frequency_at(scene, point, F0)[0]
        # oracle: dense scan of the steered element-wave sum
        elems = element_positions(scene.ap)
        sigma = ap_distances(scene.ap, np.array([0.0, 0.0, 0.0]))
        rho = np.sqrt(((np.array([0.08, 0.45, 0.0]) - elems)**2).sum(axis=1))
        scan = np.linspace(0.5 * F0, 1.6 * F0, 1000)
        amp = 1.0 / (np.sqrt(4 * np.pi) * rho)
        w = (amp[None, :] * np.exp(1j * _TWO_PI_OVER_C
                                   * (rho[None, :] * scan[:, None]
                                      - sigma[None, :] * F0))).sum(axis=1)
        f_star = scan[np.abs(w).argmax()]
        assert abs(est - f_star) <= 0.02 * f_star


class TestSnellGradient:
    def test_zero_when_both_endpoints_on_the_normal(self):
        ap = ApArraySpec(rows=1, cols=1, spacing=PITCH, origin=(0.0, 0.0, 3.0))
        irs = IrsGridSpec(size_x=11 * PITCH, size_y=11 * PITCH, pitch=PITCH)
        scene = build_scene(ap, irs, (0.0, 0.0, 2.0))
        grad = snell_gradient(scene, FrequencyMap(values=np.full(scene.n_points, F0)))
        c = scene.center_index
        assert grad.gx[c] == 0.0 and grad.gy[c] == 0.0

    def test_linear_in_frequency(self):
        scene = small_scene(rows=2, cols=2)
        f1 = FrequencyMap(values=np.full(scene.n_points, F0))
        f2 = FrequencyMap(values=np.full(scene.n_points, 2 * F0))
        g1 = snell_gradient(scene, f1)
        g2 = snell_gradient(scene, f2)
        assert np.allclose(g2.gx, 2 * g1.gx, rtol=1e-15)
        assert np.allclose(g2.gy, 2 * g1.gy, rtol=1e-15)

    def test_far_field_gradient_matches_linear_plane(self):
        scene = far_scene()
        pm = configure_nbf(scene, F0)
        sx, sy = pm.info["slopes"]
        grad = snell_gradient(scene, FrequencyMap(values=np.full(scene.n_points, F0)))
        # relative to the natural gradient scale 2 pi f / c
        tol = 1e-3 * _TWO_PI_OVER_C * F0
        assert np.abs(grad.gx - sx).max() <= tol
        assert np.abs(grad.gy - sy).max() <= tol


class TestPhaseFit:
    def _dense_solution(self, grad):
        nx, ny = grad.shape
        dx, dy = _difference_operators(nx, ny, grad.spacing)
        stack = np.vstack([dx.toarray(), dy.toarray()])
        target = np.concatenate([grad.gx.reshape(nx, ny)[:-1, :].ravel(),
                                 grad.gy.reshape(nx, ny)[:, :-1].ravel()])
        sol, *_ = np.linalg.lstsq(stack, target, rcond=None)
        sol -= sol[(nx // 2) * ny + ny // 2]
        return sol, stack, target

    def test_recovers_discretely_conservative_field(self):
        n, h = 9, 0.01
        xs = (np.arange(n) - (n - 1) / 2) * h
        X, Y = np.meshgrid(xs, xs, indexing="ij")
        phi_true = 3.0 * (X**2 + Y**2)
        gx = np.zeros((n, n))
        gx[:-1, :] = (phi_true[1:, :] - phi_true[:-1, :]) / h
        gy = np.zeros((n, n))
        gy[:, :-1] = (phi_true[:, 1:] - phi_true[:, :-1]) / h
        pm = fit_phase_lsq(GradientField(gx=gx.ravel(), gy=gy.ravel(),
                                         shape=(n, n), spacing=h))
        centered = phi_true.ravel() - phi_true.ravel()[(n // 2) * n + n // 2]
        assert np.abs(pm.values - centered).max() <= 1e-6 * np.abs(centered).max()

    def test_recovers_linear_plane(self):
        n, h = 7, 0.02
        a, b = 4.0, -2.5
        xs = (np.arange(n) - (n - 1) / 2) * h
        X, Y = np.meshgrid(xs, xs, indexing="ij")
        pm = fit_phase_lsq(GradientField(gx=np.full(n * n, a),
                                         gy=np.full(n * n, b),
                                         shape=(n, n), spacing=h))
        plane = (a * X + b * Y).ravel()
        plane -= plane[(n // 2) * n + n // 2]
        assert np.abs(pm.values - plane).max() <= 1e-8 * np.abs(plane).max()

    def test_pure_curl_field_matches_dense_solve_and_stays_small(self):
        n, h = 5, 0.01
        xs = (np.arange(n) - (n - 1) / 2) * h
        X, Y = np.meshgrid(xs, xs, indexing="ij")
        grad = GradientField(gx=(-Y * 3.0).ravel(), gy=(X * 3.0).ravel(),
                             shape=(n, n), spacing=h)
        pm = fit_phase_lsq(grad)
        dense, stack, target = self._dense_solution(grad)
        assert np.abs(pm.values - dense).max() <= 1e-8 * max(np.abs(dense).max(),
                                                             1e-30)
        # the projection keeps only a small boundary component of a rotation field
        assert np.linalg.norm(stack @ pm.values) <= 0.2 * np.linalg.norm(target)

    def test_residual_gradient_is_divergence_free(self):
        rng = np.random.default_rng(31)
        n, h = 8, 0.01
        grad = GradientField(gx=rng.normal(size=n * n), gy=rng.normal(size=n * n),
                             shape=(n, n), spacing=h)
        pm = fit_phase_lsq(grad)
        dx, dy = _difference_operators(n, n, h)
        rx = dx @ pm.values - grad.gx.reshape(n, n)[:-1, :].ravel()
        ry = dy @ pm.values - grad.gy.reshape(n, n)[:, :-1].ravel()
        div = dx.T @ rx + dy.T @ ry
        scale = np.linalg.norm(dx.T @ grad.gx.reshape(n, n)[:-1, :].ravel()
                               + dy.T @ grad.gy.reshape(n, n)[:, :-1].ravel())
        assert np.linalg.norm(div) <= 1e-6 * scale

    def test_errors_on_iteration_cap(self):
        rng = np.random.default_rng(41)
        n = 12
        grad = GradientField(gx=rng.normal(size=n * n), gy=rng.normal(size=n * n),
                             shape=(n, n), spacing=0.01)
        with pytest.raises(PhaseFitError):
            fit_phase_lsq(grad, max_iter=2)

    def test_needs_two_points_per_axis(self):
        grad = GradientField(gx=np.zeros(2), gy=np.zeros(2), shape=(1, 2),
                             spacing=0.01)
        with pytest.raises(ValueError):
            fit_phase_lsq(grad)


class TestLocalOptimizationComposites:
    def test_narrowband_limit_reduces_to_far_field_plane(self):
        scene = far_scene(scale=10.0)  # deep far field: quadratic terms below 1e-3 rad
        spec = flat_spectrum(1e-3, n_freq=16)
        field = incident_field(scene, BeamformerSpec(mode="central"), spec)
        resp = zero_response(scene)
        pm_nbf = configure_nbf(scene, barycenter(spec))
        for pm in (configure_slo(field, resp, scene, spec),
                   configure_alo(field, resp, scene, spec)):
            rms = np.sqrt(np.mean((pm.values - pm_nbf.values) ** 2))
            assert rms <= 1e-3, pm.technique

    def test_beats_single_frequency_alignment_on_reference_scene(
            self, table1_dec4_shared):
        scene, spec, field, resp = table1_dec4_shared
        pm_slo = configure_slo(field, resp, scene, spec)
        pm_nb = configure_nb(field, resp, scene)
        p_slo = transfer_function(field, resp.with_phase(pm_slo), scene).p_rx
        p_nb = transfer_function(field, resp.with_phase(pm_nb), scene).p_rx
        assert p_slo >= p_nb

    def test_windowed_and_closed_form_maps_agree_in_power(
            self, table1_dec4_shared):
        scene, spec, field, resp = table1_dec4_shared
        p = {}
        for pm in (configure_slo(field, resp, scene, spec),
                   configure_alo(field, resp, scene, spec)):
            p[pm.technique] = transfer_function(field, resp.with_phase(pm),
                                                scene).p_rx
        assert abs(p["SLO"] - p["ALO"]) <= 0.15 * max(p.values())

    def test_metrics_invariant_under_global_phase(self, small_setup):
        scene, spec, field, resp = small_setup
        pm = configure_slo(field, resp, scene, spec)
        r1 = metric_report(transfer_function(field, resp.with_phase(pm), scene),
                           spec)
        r2 = metric_report(transfer_function(
            field, resp.with_phase(pm.shifted(-2.6)), scene), spec)
        assert r1.p_rx == pytest.approx(r2.p_rx, rel=1e-12)
        assert r1.sigma == pytest.approx(r2.sigma, rel=1e-12, abs=1e-30)
