"""Ultrawideband reflecting-surface downlink: fields, phase configuration, metrics.

Models a blocked access-point-to-terminal link served by a reconfigurable
reflecting surface, including the beam-split dispersion a wideband signal
suffers at a large planar array, and provides six ways to set the surface's
phase profile together with spectrum-aware figures of merit.
"""

from .configurators import (FrequencyMap, GradientField, PhaseFitError,
                            alo_frequency_at, configure_alo, configure_ed,
                            configure_nb, configure_nbf, configure_slo,
                            ed_matrix, envelope_at, fit_phase_lsq, freq_alo,
                            freq_slo, snell_gradient, upper_bound_envelope,
                            upper_bound_phase)
from .geometry import (ApArraySpec, IrsGridSpec, SceneGeometry, ap_distances,
                       build_scene, element_position, element_positions,
                       rotation_matrix)
from .harness import (CacheError, RunResult, Scenario, ScenarioError,
                      bundled_scenario_path, cache_field, load_field,
                      load_phase_binary, load_scenario, run_scenario,
                      save_phase_binary, save_phase_csv, validate_scenario)
from .metrics import (MetricReport, avg_psd, coefficient_of_variation,
                      metric_report, normalize, spectral_std)
from .spectrum import (BandSet, SignalSpectrum, band_integral, barycenter,
                       custom_spectrum, make_spectrum)
from .wavefield import (SPEED_OF_LIGHT, BeamformerSpec, IncidentField,
                        IrsResponse, PhaseMap, TransferFunction,
                        incident_field, incident_field_at, scattered_component,
                        scattered_matrix, transfer_at, transfer_function,
                        transfer_magnitude_at,
                        zero_response)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
