"""Shared scene and spectrum builders for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from uwbirs import (ApArraySpec, BeamformerSpec, IrsGridSpec, SPEED_OF_LIGHT,
                    build_scene, incident_field, make_spectrum, zero_response)

F0 = 100e9
PITCH = SPEED_OF_LIGHT / F0 / 2.0


def table1_ap(rows=64, cols=4):
    """Access-point array of the reference setup (panel tilted toward the surface)."""
    return ApArraySpec(rows=rows, cols=cols, spacing=PITCH,
                       origin=(0.0, -2.0, 1.0), slant=np.deg2rad(-60.0))


def table1_scene(decimation=4, size_x=0.2):
    irs = IrsGridSpec(size_x=size_x, size_y=1.0, pitch=PITCH,
                      decimation=decimation)
    return build_scene(table1_ap(), irs, (0.0, 1.0, 2.0))


def small_scene(cells_x=21, cells_y=21, rows=8, cols=2, ue=(0.0, 1.0, 2.0)):
    """Tiny surface whose grid contains the exact center point (odd cell counts)."""
    irs = IrsGridSpec(size_x=cells_x * PITCH, size_y=cells_y * PITCH, pitch=PITCH)
    return build_scene(table1_ap(rows=rows, cols=cols), irs, ue)


def far_scene(cells=21, rows=4, cols=2, scale=1.0):
    """Endpoints a thousand surface-sizes away: the far-field regime."""
    ap = ApArraySpec(rows=rows, cols=cols, spacing=PITCH,
                     origin=(0.0, -40.0 * scale, 20.0 * scale))
    irs = IrsGridSpec(size_x=cells * PITCH, size_y=cells * PITCH, pitch=PITCH)
    return build_scene(ap, irs, (0.0, 30.0 * scale, 30.0 * scale))


def flat_spectrum(b_rel=0.4, n_freq=100, **kwargs):
    return make_spectrum(F0, b_rel * F0, "flat", n_freq=n_freq, **kwargs)


@pytest.fixture(scope="session")
def table1_dec4():
    """Reference scene, flat 40% band, central beamforming: field and response."""
    scene = table1_scene(decimation=4)
    spec = flat_spectrum(0.4)
    field = incident_field(scene, BeamformerSpec(mode="central"), spec)
    return scene, spec, field, zero_response(scene)


@pytest.fixture(scope="session")
def small_setup():
    scene = small_scene()
    spec = flat_spectrum(0.4)
    field = incident_field(scene, BeamformerSpec(mode="central"), spec)
    return scene, spec, field, zero_response(scene)
