"""Pure-numpy reference implementation of the hot kernels.

These are the fallback used when the compiled extension is unavailable and
the ground truth the extension is tested against.
"""

import numpy as np


def pattern_amplitude(weights, angles_rad, spacing_wl):
    """Array factor sum_n w[n] * exp(-1j*2*pi*n*spacing_wl*sin(angle)).

    weights: complex128[N]; angles_rad: float64[M].  Returns complex128[M].
    """
    weights = np.asarray(weights, dtype=np.complex128)
    angles_rad = np.asarray(angles_rad, dtype=np.float64)
    n = np.arange(weights.shape[0])
    # phase[m, n] = -2*pi*n*(d/lambda)*sin(theta_m)
    phase = -2.0 * np.pi * spacing_wl * np.outer(np.sin(angles_rad), n)
    return np.exp(1j * phase) @ weights


def sinc_taps(alphas, tofs_s, bandwidth_hz, num_taps):
    """Band-limited impulse response sum_k alpha_k * sinc(B*(n*Ts - tof_k)).

    alphas: complex128[L]; tofs_s: float64[L].  Returns complex128[num_taps].
    """
    alphas = np.asarray(alphas, dtype=np.complex128)
    tofs_s = np.asarray(tofs_s, dtype=np.float64)
    t = np.arange(num_taps) / bandwidth_hz  # tap instants, Ts = 1/B
    # np.sinc is the normalized sinc sin(pi x)/(pi x)
    return np.sinc(bandwidth_hz * (t[:, None] - tofs_s[None, :])) @ alphas


def sinc_matrix(tofs_s, bandwidth_hz, num_taps, anchor_tap):
    """Real dictionary S[n, k] = sinc(B*((n - anchor_tap)*Ts - tof_k))."""
    tofs_s = np.asarray(tofs_s, dtype=np.float64)
    t = (np.arange(num_taps) - anchor_tap) / bandwidth_hz
    return np.sinc(bandwidth_hz * (t[:, None] - tofs_s[None, :]))
