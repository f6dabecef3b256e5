"""Sinc-dictionary super-resolution: exact recovery, coherence, jitter, noise."""

import time

import numpy as np
import pytest

from multibeam.channel import (
    Cir,
    Path,
    PathSet,
    effective_path_amplitudes,
    measure_cir,
    synthesize_cir,
)
from multibeam.superres import (
    build_dictionary,
    default_ridge_weight,
    jitter_search,
    solve_amplitudes,
)
from multibeam.synthesis import BeamComponent, MultiBeamSpec, multi_beam_weights
from multibeam.ula import ArrayGeometry, single_beam_weights

BW = 400e6
TS = 1.0 / BW


def _dict_cir(dictionary, alphas):
    """CIR whose taps follow the dictionary model exactly."""
    return Cir(dictionary.matrix @ np.asarray(alphas), dictionary.bandwidth_hz)


# ---------------------------------------------------------------------------
# dictionary construction


def test_dictionary_shape_and_anchor_default():
    d = build_dictionary([0.0, 3 * TS, 7.5 * TS], BW, num_taps=256)
    assert d.matrix.shape == (256, 3)
    assert d.anchor_tap == 64
    assert d.num_paths == 3
    # anchor column is a unit pulse on the anchor tap
    assert d.matrix[64, 0] == pytest.approx(1.0)
    assert abs(d.matrix[65, 0]) < 1e-12


def test_dictionary_validation():
    with pytest.raises(ValueError):
        build_dictionary([1e-9, 2e-9], BW, 64)  # first ToF not zero
    with pytest.raises(ValueError):
        build_dictionary([0.0, 5e-9, 3e-9], BW, 64)  # not ascending
    with pytest.raises(ValueError):
        build_dictionary([0.0, 2e-9, 2e-9], BW, 64)  # duplicate
    with pytest.raises(ValueError):
        build_dictionary([0.0, 2e-9], -BW, 64)
    with pytest.raises(ValueError):
        build_dictionary([0.0, 2e-9], BW, 64, anchor_tap=64)
    with pytest.raises(ValueError):
        build_dictionary([0.0, 400e-9], BW, 64)  # past the tap window


def test_atom_coherence_at_sub_sample_separation():
    # Inner product of unit-energy sinc atoms separated by 0.4 samples is
    # sinc(0.4) ~= 0.7568 (shifted-sinc correlation identity), NOT a small
    # number: sub-sample paths are heavily correlated and need the ridge.
    d = build_dictionary([0.0, 0.4 * TS], BW, num_taps=4096, anchor_tap=2048)
    s1, s2 = d.matrix[:, 0], d.matrix[:, 1]
    coh = abs(np.dot(s1, s2)) / (np.linalg.norm(s1) * np.linalg.norm(s2))
    assert coh == pytest.approx(0.7568267286406569, abs=1e-3)


# ---------------------------------------------------------------------------
# ridge solve


def test_exact_recovery_noiseless_separated():
    d = build_dictionary([0.0, 3 * TS, 7.5 * TS], BW, num_taps=256)
    alphas = np.array([1.0 * np.exp(0.3j), 0.5 * np.exp(-1.2j), 0.3 * np.exp(2.0j)])
    est = solve_amplitudes(_dict_cir(d, alphas), d, ridge_weight=0.0)
    assert np.allclose(est.alphas, alphas, atol=1e-9)
    assert est.residual_norm < 1e-9
    assert est.shift_taps == 0
    assert not est.at_grid_edge


def test_default_ridge_bias_is_small_when_separated():
    d = build_dictionary([0.0, 4 * TS], BW, num_taps=256)
    alphas = np.array([1.0, 0.6j])
    est = solve_amplitudes(_dict_cir(d, alphas), d)
    # default ridge shrinks each mode by ~lambda/(1+lambda) ~ 1%
    assert np.allclose(est.alphas, alphas, rtol=0.02)


def test_zero_ridge_rejects_singular_dictionary():
    # more paths than taps: the normal equations are exactly rank-deficient
    d = build_dictionary([0.0, 1e-9, 2e-9], BW, num_taps=2)
    taps = d.matrix @ np.array([1.0, 0.5, 0.2 + 0j])
    with pytest.raises(np.linalg.LinAlgError):
        solve_amplitudes(Cir(taps, BW), d, ridge_weight=0.0)
    # a positive ridge keeps the same system solvable
    est = solve_amplitudes(Cir(taps, BW), d, ridge_weight=default_ridge_weight(d))
    assert np.all(np.isfinite(est.alphas))


def test_negative_ridge_rejected():
    d = build_dictionary([0.0, 4 * TS], BW, num_taps=64)
    with pytest.raises(ValueError):
        solve_amplitudes(_dict_cir(d, [1.0, 0.5]), d, ridge_weight=-1.0)


def test_mismatched_cir_rejected():
    d = build_dictionary([0.0, 4 * TS], BW, num_taps=64)
    with pytest.raises(ValueError):
        solve_amplitudes(Cir(np.ones(32, dtype=complex), BW), d)
    with pytest.raises(ValueError):
        solve_amplitudes(Cir(np.ones(64, dtype=complex), 2 * BW), d)


def test_alignment_is_shift_invariant():
    d = build_dictionary([0.0, 3 * TS, 7.5 * TS], BW, num_taps=256)
    alphas = np.array([1.0, 0.5 * np.exp(1j), 0.3])
    base = _dict_cir(d, alphas)
    est0 = solve_amplitudes(base, d)
    for shift in (1, 17, -40, 120):
        est = solve_amplitudes(Cir(np.roll(base.taps, shift), BW), d)
        # circular shift is a pure relabeling: identical solve, identical result
        assert np.array_equal(est.alphas, est0.alphas)
        assert (est.shift_taps - est0.shift_taps) % 256 == shift % 256


def test_recovery_through_physical_cir():
    # through the full pathset -> beam -> band-limited taps pipeline, with
    # the line-of-sight ToF on the sample grid
    geom = ArrayGeometry(num_elements=16)
    ps = PathSet(
        paths=[
            Path(aod_deg=0.0, aoa_deg=0.0, gain=1.0 + 0j, tof_s=40 * TS),
            Path(aod_deg=22.0, aoa_deg=-15.0, gain=0.5 * np.exp(0.7j), tof_s=40 * TS + 6.5 * TS),
        ],
        carrier_hz=28e9,
    )
    spec = MultiBeamSpec(beams=[BeamComponent(0.0), BeamComponent(22.0)])
    w_t, _ = multi_beam_weights(geom, spec)
    w_r = single_beam_weights(geom, 0.0)
    cir = synthesize_cir(ps, geom, w_t, geom, w_r, BW, num_taps=256)
    true_alphas = effective_path_amplitudes(ps, geom, w_t, geom, w_r)

    d = build_dictionary([0.0, 6.5 * TS], BW, num_taps=256)
    est = solve_amplitudes(cir, d, ridge_weight=0.0)
    # only window-truncation tails separate the model from the dictionary
    assert np.allclose(est.alphas, true_alphas, rtol=1e-3, atol=1e-4)


# ---------------------------------------------------------------------------
# jitter search


def test_jitter_search_recovers_tof_offset():
    nominal = [0.0, 4 * TS]
    d = build_dictionary(nominal, BW, num_taps=256)
    true = build_dictionary([0.0, 4 * TS + 0.2e-9], BW, num_taps=256)
    alphas = np.array([1.0, 0.7 * np.exp(0.9j)])
    cir = _dict_cir(true, alphas)

    base = solve_amplitudes(cir, d)
    est = jitter_search(cir, d)
    assert est.residual_norm < base.residual_norm
    assert est.jitter_applied_s[0] == 0.0
    assert abs(est.jitter_applied_s[1] - 0.2e-9) <= 0.1e-9 + 1e-15
    assert not est.at_grid_edge
    assert np.allclose(est.alphas, alphas, rtol=0.02)


def test_jitter_search_never_worse_than_plain_solve():
    rng = np.random.default_rng(7)
    d = build_dictionary([0.0, 3 * TS, 8 * TS], BW, num_taps=128)
    for _ in range(5):
        alphas = rng.standard_normal(3) + 1j * rng.standard_normal(3)
        alphas[0] = 2.0  # keep the anchor dominant
        noise = 0.05 * (rng.standard_normal(128) + 1j * rng.standard_normal(128))
        cir = Cir(d.matrix @ alphas + noise, BW)
        base = solve_amplitudes(cir, d)
        est = jitter_search(cir, d)
        assert est.residual_norm <= base.residual_norm + 1e-12


def test_jitter_search_flags_grid_edge():
    d = build_dictionary([0.0, 4 * TS], BW, num_taps=256)
    true = build_dictionary([0.0, 4 * TS + 0.5e-9], BW, num_taps=256)
    cir = _dict_cir(true, np.array([1.0, 0.8]))
    est = jitter_search(cir, d)
    assert est.at_grid_edge
    assert abs(est.jitter_applied_s[1]) == pytest.approx(0.5e-9)


def test_solver_runtime_under_one_ms():
    d = build_dictionary([0.0, 0.4 * TS, 6 * TS], BW, num_taps=256)
    cir = _dict_cir(d, np.array([1.0, 0.5j, 0.3]))
    solve_amplitudes(cir, d)  # warm up
    t0 = time.perf_counter()
    n = 200
    for _ in range(n):
        solve_amplitudes(cir, d)
    per_call = (time.perf_counter() - t0) / n
    assert per_call < 1e-3


# ---------------------------------------------------------------------------
# sub-resolution accuracy under noise


def test_subresolution_power_mse_below_one_db2():
    # two paths 1 ns apart (0.4 samples at 400 MHz), 20 dB per-tap SNR,
    # snapshot-averaged measurement: per-path power MSE below 1 dB^2
    geom = ArrayGeometry(num_elements=16)
    rng = np.random.default_rng(2024)
    sq_errors = []
    for trial in range(60):
        phase = rng.uniform(0, 2 * np.pi)
        ps = PathSet(
            paths=[
                Path(aod_deg=0.0, aoa_deg=0.0, gain=1.0 + 0j, tof_s=25e-9),
                Path(aod_deg=25.0, aoa_deg=-20.0, gain=0.7 * np.exp(1j * phase), tof_s=26e-9),
            ],
            carrier_hz=28e9,
        )
        # both ends steer one lobe per path, so each path is actually heard
        w_t, _ = multi_beam_weights(
            geom, MultiBeamSpec(beams=[BeamComponent(0.0), BeamComponent(25.0)])
        )
        w_r, _ = multi_beam_weights(
            geom, MultiBeamSpec(beams=[BeamComponent(0.0), BeamComponent(-20.0)])
        )

        clean = synthesize_cir(ps, geom, w_t, geom, w_r, BW, num_taps=64)
        noise_power = np.max(np.abs(clean.taps)) ** 2 / 10**2  # 20 dB SNR
        cir = measure_cir(
            ps, geom, w_t, geom, w_r, BW, num_taps=64,
            noise_power=noise_power, rng=rng, snapshots=8,
        )
        d = build_dictionary([0.0, 1e-9], BW, num_taps=64, anchor_tap=10)
        est = solve_amplitudes(cir, d)

        true_db = 20 * np.log10(np.abs(effective_path_amplitudes(ps, geom, w_t, geom, w_r)))
        sq_errors.extend((est.powers_db() - true_db) ** 2)
    mse = float(np.mean(sq_errors))
    assert mse < 1.0, f"per-path power MSE {mse:.3f} dB^2"
