"""Multi-beam weight synthesis, the oracle beamformer and power rebalancing.

A multi-beam spec lists up to four beam components (angle, relative
amplitude delta, relative phase).  Beam 0 is the reference with delta = 1
and phase = 0 in canonical form; the synthesized weights are

    w = (1/sqrt(NF)) * sum_b delta_b * exp(-1j*phase_b) * w_single(angle_b)

with NF = || sum_b ... ||^2 computed exactly, so ||w||^2 = 1 and the total
radiated power is preserved no matter how the component beams overlap.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .channel import (
    DEFAULT_NUM_SUBCARRIERS,
    DEFAULT_SUBCARRIER_SPACING_HZ,
    PathSet,
    freq_response,
)
from .ula import ArrayGeometry, WeightVector, single_beam_weights

MAX_BEAMS = 4

# NF below this means the components cancel; no valid pattern exists.
_MIN_NORMALIZATION = 1e-12


@dataclass
class BeamComponent:
    """One component beam: pointing angle, linear amplitude, phase (radians)."""

    angle_deg: float
    delta: float = 1.0
    phase_rad: float = 0.0

    def __post_init__(self):
        if not -90.0 <= self.angle_deg <= 90.0:
            raise ValueError("angle_deg outside [-90, 90]")
        if self.delta < 0:
            raise ValueError("delta must be >= 0")
        self.phase_rad = float(self.phase_rad) % (2.0 * np.pi)


@dataclass
class MultiBeamSpec:
    """Up to MAX_BEAMS beam components; beam 0 is the reference."""

    beams: list[BeamComponent]

    def __post_init__(self):
        if not 1 <= len(self.beams) <= MAX_BEAMS:
            raise ValueError(f"need 1..{MAX_BEAMS} beams, got {len(self.beams)}")

    @property
    def num_beams(self) -> int:
        return len(self.beams)

    def angles_deg(self) -> np.ndarray:
        return np.array([b.angle_deg for b in self.beams])

    def deltas(self) -> np.ndarray:
        return np.array([b.delta for b in self.beams])

    def phases_rad(self) -> np.ndarray:
        return np.array([b.phase_rad for b in self.beams])

    def canonical(self) -> "MultiBeamSpec":
        """Re-reference so the strongest beam leads with delta 1, phase 0.

        The synthesized pattern is invariant to a common complex scale on
        the components (NF absorbs it), so this is purely a normal form.
        """
        idx = int(np.argmax(self.deltas()))
        ref = self.beams[idx]
        if ref.delta == 0:
            raise ValueError("cannot canonicalize an all-zero spec")
        order = [idx] + [i for i in range(self.num_beams) if i != idx]
        beams = [
            BeamComponent(
                self.beams[i].angle_deg,
                self.beams[i].delta / ref.delta,
                self.beams[i].phase_rad - ref.phase_rad,
            )
            for i in order
        ]
        return MultiBeamSpec(beams)

    def to_dict(self) -> dict:
        """JSON-friendly form: angles in deg, amplitudes in dB, phases in deg."""
        with np.errstate(divide="ignore"):
            deltas_db = 20.0 * np.log10(self.deltas())
        return {
            "angles_deg": [float(a) for a in self.angles_deg()],
            "deltas_db": [float(d) for d in deltas_db],
            "phases_deg": [float(np.rad2deg(p)) for p in self.phases_rad()],
        }

    @staticmethod
    def from_dict(data: dict) -> "MultiBeamSpec":
        angles = data["angles_deg"]
        deltas_db = data.get("deltas_db", [0.0] * len(angles))
        phases_deg = data.get("phases_deg", [0.0] * len(angles))
        if not len(angles) == len(deltas_db) == len(phases_deg):
            raise ValueError("angles, deltas and phases must have equal length")
        beams = [
            BeamComponent(float(a), 10.0 ** (float(d) / 20.0), np.deg2rad(float(p)))
            for a, d, p in zip(angles, deltas_db, phases_deg)
        ]
        return MultiBeamSpec(beams)

    def save(self, path: str) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    @staticmethod
    def load(path: str) -> "MultiBeamSpec":
        with open(path) as fh:
            return MultiBeamSpec.from_dict(json.load(fh))


def multi_beam_weights(geom: ArrayGeometry, spec: MultiBeamSpec) -> tuple[WeightVector, float]:
    """Synthesize unit-TRP weights for a spec; returns (weights, NF).

    NF is the exact squared norm of the unnormalized component sum: 4.0 for
    two identical in-phase beams, 2.0 for two orthogonal ones.
    """
    acc = np.zeros(geom.num_elements, dtype=np.complex128)
    for b in spec.beams:
        acc += b.delta * np.exp(-1j * b.phase_rad) * single_beam_weights(geom, b.angle_deg).weights
    nf = float(np.vdot(acc, acc).real)
    if nf < _MIN_NORMALIZATION:
        raise ValueError("beam components cancel: normalization factor is numerically zero")
    return WeightVector(acc / np.sqrt(nf)), nf


def orthonormality_factor(geom: ArrayGeometry, spec: MultiBeamSpec) -> float:
    """Cross-coupling of a 2-beam spec: delta*Re(exp(-1j*phase)*<w1, w2>)/(1+delta^2).

    0 for orthogonal component beams, 0.5 for two identical beams with
    delta = 1 and zero phase.  Defined for exactly two beams.
    """
    if spec.num_beams != 2:
        raise ValueError("orthonormality factor is defined for exactly 2 beams")
    w1 = single_beam_weights(geom, spec.beams[0].angle_deg).weights
    w2 = single_beam_weights(geom, spec.beams[1].angle_deg).weights
    delta = spec.beams[1].delta
    inner = np.vdot(w1, w2)  # <w1, w2> = w1^H w2
    return float(delta * (np.exp(-1j * spec.beams[1].phase_rad) * inner).real / (1.0 + delta**2))


def oracle_weights(
    ps: PathSet,
    geom_t: ArrayGeometry,
    num_subcarriers: int = DEFAULT_NUM_SUBCARRIERS,
    subcarrier_spacing_hz: float = DEFAULT_SUBCARRIER_SPACING_HZ,
) -> WeightVector:
    """Full-CSI transmit beamformer maximizing the subcarrier-averaged SNR.

    Computed as the dominant eigenvector of mean_k conj(h_k) h_k^T.  On a
    single subcarrier this reduces to conj(h)/||h||, the matched filter for
    the a(angle).T w signal convention used across the package.
    """
    h = freq_response(ps, geom_t, num_subcarriers, subcarrier_spacing_hz)
    cov = (np.conj(h).T @ h) / h.shape[0]  # mean_k conj(h_k) h_k^T, Hermitian PSD
    vals, vecs = np.linalg.eigh(cov)
    w = vecs[:, -1]
    # Deterministic global phase: strongest element real and positive.
    pivot = int(np.argmax(np.abs(w)))
    w = w * np.exp(-1j * np.angle(w[pivot]))
    return WeightVector(w)


def matched_multibeam_spec(ps: PathSet, k_beams: int) -> MultiBeamSpec:
    """Channel-matched spec over the k strongest paths.

    Beams point at the departure angles; amplitudes copy the relative path
    magnitudes and phases cancel the per-path channel phase at band center
    (gain phase plus carrier ToF rotation).
    """
    if not 1 <= k_beams <= MAX_BEAMS:
        raise ValueError(f"k_beams outside 1..{MAX_BEAMS}")
    if k_beams > ps.num_paths:
        raise ValueError("k_beams exceeds the number of paths")
    eff = ps.gains() * np.exp(2j * np.pi * ps.carrier_hz * ps.tofs_s())
    order = np.argsort(np.abs(eff))[::-1][:k_beams]
    ref = order[0]
    beams = [
        BeamComponent(
            ps.paths[i].aod_deg,
            float(np.abs(eff[i]) / np.abs(eff[ref])),
            float(np.angle(eff[i]) - np.angle(eff[ref])),
        )
        for i in order
    ]
    return MultiBeamSpec(beams)


def reliability_first_rebalance(spec: MultiBeamSpec, min_power_floor: float = 0.1) -> MultiBeamSpec:
    """Raise weak beams to a minimum share of radiated power.

    Power shares are delta_b^2 / sum(delta^2).  Beams below the floor are
    raised to exactly the floor; the excess is removed proportionally from
    the above-floor beams.  min_power_floor * K must not exceed 1.
    """
    k = spec.num_beams
    if min_power_floor < 0:
        raise ValueError("min_power_floor must be >= 0")
    if min_power_floor * k > 1.0 + 1e-12:
        raise ValueError("infeasible floor: num_beams * min_power_floor > 1")
    deltas = spec.deltas()
    if np.all(deltas == 0):
        raise ValueError("cannot rebalance an all-zero spec")
    shares = deltas**2 / np.sum(deltas**2)
    raised = np.zeros(k, dtype=bool)
    for _ in range(k):
        low = (shares < min_power_floor) & ~raised
        if not np.any(low):
            break
        raised |= low
        shares[raised] = min_power_floor
        free = ~raised
        budget = 1.0 - min_power_floor * np.count_nonzero(raised)
        shares[free] = shares[free] * (budget / np.sum(shares[free]))
    ref = np.sqrt(shares[0])
    beams = [
        BeamComponent(b.angle_deg, float(np.sqrt(s) / ref), b.phase_rad)
        for b, s in zip(spec.beams, shares)
    ]
    return MultiBeamSpec(beams)
