"""Uniform linear array: geometry, steering vectors, beam weights, patterns.

Conventions used throughout the package:
  * angles are degrees at every public API, 0 deg = broadside, valid range
    [-90, 90]
  * steering vector element n carries phase -2*pi*n*(d/lambda)*sin(angle)
  * beam weights conjugate that profile, so the array factor
    sum_n a_n(angle) * w_n peaks at the steered angle
  * gains are power ratios in dB; exact nulls are floored at GAIN_FLOOR_DB
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .kernels import pattern_amplitude

# Floor applied to 10*log10 of an exact pattern null.
GAIN_FLOOR_DB = -300.0


@dataclass(frozen=True)
class ArrayGeometry:
    """Uniform linear array described by element count and spacing.

    spacing_wl is the element spacing in carrier wavelengths (d/lambda).
    """

    num_elements: int
    spacing_wl: float = 0.5
    carrier_hz: float = 28e9

    def __post_init__(self):
        if self.num_elements < 1:
            raise ValueError("num_elements must be >= 1")
        if self.spacing_wl <= 0:
            raise ValueError("spacing_wl must be positive")
        if self.carrier_hz <= 0:
            raise ValueError("carrier_hz must be positive")


@dataclass
class WeightVector:
    """Analog beamforming weights, one complex coefficient per element."""

    weights: np.ndarray
    quantized: bool = False
    phase_bits: int | None = None
    amp_range_db: float | None = None

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.complex128)
        if w.ndim != 1 or w.size == 0:
            raise ValueError("weights must be a non-empty 1-D vector")
        if not np.all(np.isfinite(w.view(np.float64))):
            raise ValueError("weights must be finite")
        self.weights = w

    @property
    def num_elements(self) -> int:
        return self.weights.size

    def power(self) -> float:
        """Total radiated power ||w||^2 (unit TRP convention -> 1.0)."""
        return float(np.vdot(self.weights, self.weights).real)


def _check_angle(angle_deg: float) -> float:
    angle = float(angle_deg)
    if not -90.0 <= angle <= 90.0:
        raise ValueError(f"angle {angle} deg outside [-90, 90]")
    return angle


def steering_vector(geom: ArrayGeometry, angle_deg: float) -> np.ndarray:
    """Unit-modulus steering vector a(angle) for a plane wave at angle_deg."""
    angle = _check_angle(angle_deg)
    n = np.arange(geom.num_elements)
    phase = -2.0 * np.pi * geom.spacing_wl * n * np.sin(np.deg2rad(angle))
    return np.exp(1j * phase)


def single_beam_weights(geom: ArrayGeometry, angle_deg: float) -> WeightVector:
    """Unit-TRP weights steering one beam at angle_deg (||w||^2 = 1)."""
    a = steering_vector(geom, angle_deg)
    return WeightVector(np.conj(a) / np.sqrt(geom.num_elements))


def beam_gain_db(geom: ArrayGeometry, w: WeightVector, angle_deg):
    """Pattern power gain 10*log10 |sum_n a_n(angle) w_n|^2 in dB.

    angle_deg may be a scalar or an array; the return type matches.  Exact
    nulls are floored at GAIN_FLOOR_DB instead of returning -inf.
    """
    if w.num_elements != geom.num_elements:
        raise ValueError("weight length does not match array size")
    angles = np.atleast_1d(np.asarray(angle_deg, dtype=np.float64))
    if np.any(np.abs(angles) > 90.0):
        raise ValueError("angles outside [-90, 90]")
    amp = pattern_amplitude(w.weights, np.deg2rad(angles), geom.spacing_wl)
    power = np.abs(amp) ** 2
    with np.errstate(divide="ignore"):
        gain = 10.0 * np.log10(power)
    gain = np.maximum(gain, GAIN_FLOOR_DB)
    if np.isscalar(angle_deg):
        return float(gain[0])
    return gain


def quantize(w: WeightVector, phase_bits: int, amp_range_db: float) -> WeightVector:
    """Quantize weights to a phase grid and a bounded amplitude range.

    Phases snap to 2^phase_bits uniform levels; magnitudes are clamped into
    [max * 10^(-amp_range_db/20), max].  The result is renormalized back to
    the input norm, so TRP is preserved.  amp_range_db = 0 models on/off
    amplitude control (all active elements at equal magnitude).
    """
    if phase_bits < 1:
        raise ValueError("phase_bits must be >= 1")
    if amp_range_db < 0:
        raise ValueError("amp_range_db must be >= 0")
    mag = np.abs(w.weights)
    top = mag.max()
    if top == 0.0:
        raise ValueError("cannot quantize an all-zero weight vector")
    floor = top * 10.0 ** (-amp_range_db / 20.0)
    mag_q = np.clip(mag, floor, top)
    step = 2.0 * np.pi / (2**phase_bits)
    phase_q = np.round(np.angle(w.weights) / step) * step
    wq = mag_q * np.exp(1j * phase_q)
    wq *= np.sqrt(w.power()) / np.linalg.norm(wq)
    return WeightVector(wq, quantized=True, phase_bits=phase_bits, amp_range_db=amp_range_db)


def trp_and_eirp(
    geom: ArrayGeometry,
    w: WeightVector,
    trp_dbm: float,
    lobe_angles_deg,
) -> tuple[float, list[float]]:
    """EIRP per declared lobe for a weight vector radiating trp_dbm total.

    Requires unit-TRP weights (||w||^2 = 1) so the conducted power knob and
    the pattern are decoupled.  Returns (trp_dbm, [eirp_dbm per lobe]);
    eirp = trp_dbm + pattern_gain_db(lobe angle).
    """
    if abs(w.power() - 1.0) > 1e-6:
        raise ValueError("weights must be TRP-normalized (||w||^2 = 1)")
    eirp = [trp_dbm + float(beam_gain_db(geom, w, a)) for a in lobe_angles_deg]
    return trp_dbm, eirp


def export_pattern_csv(
    geom: ArrayGeometry,
    w: WeightVector,
    path: str,
    start_deg: float = -90.0,
    stop_deg: float = 90.0,
    step_deg: float = 0.1,
) -> np.ndarray:
    """Write the pattern cut to CSV with columns angle_deg,gain_db."""
    if step_deg <= 0:
        raise ValueError("step_deg must be positive")
    num = int(round((stop_deg - start_deg) / step_deg)) + 1
    angles = start_deg + step_deg * np.arange(num)
    angles = angles[angles <= stop_deg + 1e-9]
    gains = beam_gain_db(geom, w, angles)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["angle_deg", "gain_db"])
        for a, g in zip(angles, gains):
            writer.writerow([f"{a:.4f}", f"{g:.6f}"])
    return angles
