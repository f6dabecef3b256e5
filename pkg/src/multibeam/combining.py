"""Two-probe constructive combining: per-lobe phase/amplitude refinement.

For each non-reference lobe the transmitter fires two probes that differ
only in that lobe's phase (0 and pi).  The half-sum and half-difference of
the two received CSI vectors separate the reference composite from the
probed lobe's channel, and a closed-form estimate of the SNR-maximizing
per-lobe weight (delta, sigma) follows.  Two estimators are provided:

* ``projection`` - the least-squares projection with a leading minus sign,
  kept verbatim for traceability; its phase lands anti-phase and is NOT
  used for refinement.
* ``normalized`` - the maximizer of ||h_ref + delta*exp(-1j*sigma)*h_b||^2
  / (1 + delta^2), i.e. the dominant eigenvector of the 2x2 Gram matrix
  of (h_ref, h_b).  This is the default.

Sign convention: the returned sigma is the angle later applied as
exp(-1j*sigma) at synthesis, so correctness is asserted by re-synthesizing
and measuring, not by comparing raw angles.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .channel import (
    DEFAULT_NUM_SUBCARRIERS,
    DEFAULT_SUBCARRIER_SPACING_HZ,
    PathSet,
    measure_csi,
    omni,
)
from .ledger import ProbeLedger
from .synthesis import BeamComponent, MultiBeamSpec, multi_beam_weights
from .ula import ArrayGeometry, WeightVector

_NEGLIGIBLE_RATIO = 1e-9
_ESTIMATORS = ("normalized", "projection")


@dataclass
class ProbeReport:
    """One CSI-RS measurement through a known probe pattern."""

    probe_id: int
    csi: np.ndarray
    spec_used: MultiBeamSpec
    probed_beam: int
    probe_phase_rad: float
    nf_used: float
    timestamp_slot: int = 0


@dataclass
class CombiningEstimate:
    """One estimator's per-lobe weight: delta, and sigma applied as e^{-j sigma}."""

    delta: float
    phase_rad: float
    negligible: bool = False


@dataclass
class CombiningSolution:
    """Both estimators for one probed lobe, clearly labeled."""

    normalized: CombiningEstimate
    projection: CombiningEstimate


@dataclass
class ProbeCycleResult:
    refined: MultiBeamSpec
    solutions: list[CombiningSolution]
    reports: list[ProbeReport]
    next_slot: int


def gen_probe_specs(base: MultiBeamSpec) -> list[MultiBeamSpec]:
    """The 2(K-1) probe patterns for a K-lobe base pattern.

    For each non-reference lobe b: one pattern with lobe b at phase 0 and
    one at phase pi, every other lobe at phase 0, amplitudes straight from
    the base.  A single-lobe base needs no probes.
    """
    k = len(base.beams)
    if k < 2:
        return []
    specs = []
    for b in range(1, k):
        for phase in (0.0, np.pi):
            beams = [
                BeamComponent(c.angle_deg, c.delta, phase if i == b else 0.0)
                for i, c in enumerate(base.beams)
            ]
            specs.append(MultiBeamSpec(beams=beams))
    return specs


def _check_matched_pair(r1: ProbeReport, r2: ProbeReport) -> None:
    if r1.probed_beam != r2.probed_beam:
        raise ValueError("probe pair targets different lobes")
    if r1.csi.shape != r2.csi.shape:
        raise ValueError("probe pair has mismatched CSI lengths")
    s1, s2 = r1.spec_used, r2.spec_used
    if len(s1.beams) != len(s2.beams):
        raise ValueError("probe pair has mismatched lobe counts")
    for i, (b1, b2) in enumerate(zip(s1.beams, s2.beams)):
        if abs(b1.angle_deg - b2.angle_deg) > 1e-9 or abs(b1.delta - b2.delta) > 1e-12:
            raise ValueError("probe pair differs outside the probed lobe's phase")
        want = 0.0
        if i == r1.probed_beam:
            continue  # phases 0 and pi checked below
        if abs(b1.phase_rad - want) > 1e-9 or abs(b2.phase_rad - want) > 1e-9:
            raise ValueError("probe pair differs outside the probed lobe's phase")
    d_phase = abs((r1.spec_used.beams[r1.probed_beam].phase_rad
                   - r2.spec_used.beams[r2.probed_beam].phase_rad))
    if abs(d_phase - np.pi) > 1e-9:
        raise ValueError("probe pair phases must differ by pi on the probed lobe")


def recover_per_beam_csi(
    r1: ProbeReport, r2: ProbeReport, undo_normalization: bool = True
) -> tuple[np.ndarray, np.ndarray]:
    """Half-sum / half-difference recovery of (reference, probed) channels.

    The transmitter normalizes each probe pattern to unit radiated power,
    and the two probes normalize differently; the receiver knows the
    patterns it requested, so the normalization is undone before the
    linear recovery (otherwise the reference would bleed into the lobe
    estimate).
    """
    _check_matched_pair(r1, r2)
    p1 = np.asarray(r1.csi, dtype=np.complex128)
    p2 = np.asarray(r2.csi, dtype=np.complex128)
    if undo_normalization:
        p1 = p1 * np.sqrt(r1.nf_used)
        p2 = p2 * np.sqrt(r2.nf_used)
    if r1.spec_used.beams[r1.probed_beam].phase_rad > r2.spec_used.beams[r2.probed_beam].phase_rad:
        p1, p2 = p2, p1  # ensure p1 is the phase-0 probe
    return 0.5 * (p1 + p2), 0.5 * (p1 - p2)


def optimize_combining(h_ref: np.ndarray, h_b: np.ndarray) -> CombiningSolution:
    """Closed-form per-lobe (delta, sigma) from the recovered channel pair.

    ``normalized``: dominant eigenvector of the Gram matrix of (h_ref,
    h_b); its component ratio c = delta*exp(-1j*sigma) maximizes the
    power-normalized combined response.  ``projection``: the verbatim
    minus-signed least-squares ratio -<h_b, h_ref>/<h_b, h_b>.  Because
    that form regresses the reference on the lobe, on a coherent channel
    its magnitude is the RECIPROCAL of the combining amplitude (equal only
    at delta = 1) and its phase lands anti-phase; it is kept for
    traceability and is not used for refinement.
    """
    h_ref = np.asarray(h_ref, dtype=np.complex128).ravel()
    h_b = np.asarray(h_b, dtype=np.complex128).ravel()
    if h_ref.shape != h_b.shape:
        raise ValueError("channel vectors must have equal length")
    n_ref = float(np.linalg.norm(h_ref))
    n_b = float(np.linalg.norm(h_b))
    if n_ref == 0.0 and n_b == 0.0:
        raise ValueError("both channels are zero")
    if n_ref < _NEGLIGIBLE_RATIO * n_b:
        raise ValueError("reference beam carries no signal")
    if n_b < _NEGLIGIBLE_RATIO * n_ref:
        zero = CombiningEstimate(0.0, 0.0, negligible=True)
        return CombiningSolution(normalized=zero, projection=zero)

    m11 = np.vdot(h_ref, h_ref)
    m12 = np.vdot(h_ref, h_b)
    m22 = np.vdot(h_b, h_b)
    gram = np.array([[m11, m12], [np.conj(m12), m22]])
    vals, vecs = np.linalg.eigh(gram)
    top = vecs[:, int(np.argmax(vals))]
    if abs(top[0]) < _NEGLIGIBLE_RATIO:
        raise ValueError("degenerate eigen-direction (reference component vanishes)")
    c = top[1] / top[0]  # = delta * exp(-1j*sigma)
    normalized = CombiningEstimate(float(np.abs(c)), float(-np.angle(c)) % (2 * np.pi))

    c9 = -np.vdot(h_b, h_ref) / np.vdot(h_b, h_b)
    projection = CombiningEstimate(float(np.abs(c9)), float(np.angle(c9)) % (2 * np.pi))
    return CombiningSolution(normalized=normalized, projection=projection)


def refine_multibeam(
    base: MultiBeamSpec,
    estimates: list[CombiningEstimate],
    ledger: ProbeLedger | None = None,
    start_slot: int = 0,
) -> MultiBeamSpec:
    """Apply per-lobe estimates to the non-reference lobes of the pattern.

    Expects one estimate per non-reference lobe, in lobe order.  When a
    ledger is given, the 2(K-1) CSI-RS probes that produced the estimates
    are charged to it.
    """
    k = len(base.beams)
    if len(estimates) != k - 1:
        raise ValueError("need exactly one estimate per non-reference lobe")
    beams = [base.beams[0]]
    for b, est in enumerate(estimates, start=1):
        beams.append(
            BeamComponent(base.beams[b].angle_deg, est.delta, est.phase_rad)
        )
    if ledger is not None:
        slot = start_slot
        for b in range(1, k):
            for _ in range(2):
                ledger.log_csirs(slot, beam_id=b)
                slot += 1
    return MultiBeamSpec(beams=beams)


def run_probe_cycle(
    ps: PathSet,
    geom_t: ArrayGeometry,
    base: MultiBeamSpec,
    geom_r: ArrayGeometry | None = None,
    w_r: WeightVector | None = None,
    tx_power: float = 1.0,
    noise_power: float = 0.0,
    rng: np.random.Generator | None = None,
    num_subcarriers: int = DEFAULT_NUM_SUBCARRIERS,
    subcarrier_spacing_hz: float = DEFAULT_SUBCARRIER_SPACING_HZ,
    ledger: ProbeLedger | None = None,
    start_slot: int = 0,
    estimator: str = "normalized",
) -> ProbeCycleResult:
    """One full maintenance cycle: probe every non-reference lobe, refine.

    Probes are transmitted through the physically normalized patterns and
    measured at the receiver (omnidirectional unless a receive beam is
    given); the refinement updates the base pattern's (delta, sigma) per
    lobe using the chosen estimator.
    """
    if estimator not in _ESTIMATORS:
        raise ValueError(f"estimator must be one of {_ESTIMATORS}")
    if geom_r is None or w_r is None:
        geom_r, w_r = omni(ps.carrier_hz)
    specs = gen_probe_specs(base)
    if not specs:
        return ProbeCycleResult(base, [], [], start_slot)

    reports = []
    slot = start_slot
    for i, spec in enumerate(specs):
        w, nf = multi_beam_weights(geom_t, spec)
        csi = measure_csi(
            ps, geom_t, w, geom_r, w_r,
            tx_power=tx_power, noise_power=noise_power, rng=rng,
            num_subcarriers=num_subcarriers,
            subcarrier_spacing_hz=subcarrier_spacing_hz,
        )
        probed = 1 + i // 2
        reports.append(
            ProbeReport(
                probe_id=i, csi=csi, spec_used=spec, probed_beam=probed,
                probe_phase_rad=spec.beams[probed].phase_rad, nf_used=nf,
                timestamp_slot=slot,
            )
        )
        slot += 1

    solutions = []
    estimates = []
    for b in range(1, len(base.beams)):
        h_ref, h_b = recover_per_beam_csi(reports[2 * (b - 1)], reports[2 * (b - 1) + 1])
        delta_probe = base.beams[b].delta
        if delta_probe > 0 and np.linalg.norm(h_b) > 0:
            h_b = h_b / delta_probe  # back to the unit-lobe channel
        sol = optimize_combining(h_ref, h_b)
        solutions.append(sol)
        estimates.append(sol.normalized if estimator == "normalized" else sol.projection)

    refined = refine_multibeam(base, estimates, ledger=ledger, start_slot=start_slot)
    return ProbeCycleResult(refined, solutions, reports, slot)


def grid_scan_combining(
    ps: PathSet,
    geom_t: ArrayGeometry,
    base: MultiBeamSpec,
    geom_r: ArrayGeometry | None = None,
    w_r: WeightVector | None = None,
    delta_grid_db=None,
    phase_grid_rad=None,
    tx_power: float = 1.0,
    noise_power: float = 1.0,
    num_subcarriers: int = DEFAULT_NUM_SUBCARRIERS,
    subcarrier_spacing_hz: float = DEFAULT_SUBCARRIER_SPACING_HZ,
) -> tuple[float, float, float]:
    """Brute-force (delta, sigma) scan for a 2-lobe pattern.

    Returns (best_delta, best_phase_rad, best_snr_db), maximizing the
    exact achieved SNR (including the pattern normalization) over the
    grid.  The composite pattern is linear in the two lobes, so the whole
    grid reduces to three scalars measured once; the result is identical
    to synthesizing and measuring every grid point.  Used as the
    estimation oracle in validation; real systems pay two probes instead
    of a full scan.
    """
    if len(base.beams) != 2:
        raise ValueError("grid scan is defined for 2-lobe patterns")
    if geom_r is None or w_r is None:
        geom_r, w_r = omni(ps.carrier_hz)
    if delta_grid_db is None:
        delta_grid_db = np.arange(-20.0, 3.0 + 1e-9, 0.5)
    if phase_grid_rad is None:
        phase_grid_rad = np.deg2rad(np.arange(0.0, 360.0, 2.0))
    deltas = 10.0 ** (np.asarray(delta_grid_db, dtype=float) / 20.0)
    phases = np.asarray(phase_grid_rad, dtype=float)

    lobes = []
    for comp in base.beams:
        spec = MultiBeamSpec(beams=[replace(comp, delta=1.0, phase_rad=0.0)])
        w, _ = multi_beam_weights(geom_t, spec)
        lobes.append(w)
    g1 = measure_csi(
        ps, geom_t, lobes[0], geom_r, w_r, tx_power=1.0, noise_power=0.0,
        num_subcarriers=num_subcarriers, subcarrier_spacing_hz=subcarrier_spacing_hz,
    )
    g2 = measure_csi(
        ps, geom_t, lobes[1], geom_r, w_r, tx_power=1.0, noise_power=0.0,
        num_subcarriers=num_subcarriers, subcarrier_spacing_hz=subcarrier_spacing_hz,
    )
    p1 = float(np.mean(np.abs(g1) ** 2))
    p2 = float(np.mean(np.abs(g2) ** 2))
    cross_sig = complex(np.mean(np.conj(g1) * g2))
    cross_w = complex(np.vdot(lobes[0].weights, lobes[1].weights))

    d = deltas[:, None]
    rot = np.exp(-1j * phases)[None, :]
    power = p1 + d**2 * p2 + 2.0 * d * np.real(rot * cross_sig)
    nf = 1.0 + d**2 + 2.0 * d * np.real(rot * cross_w)
    snr_db = 10.0 * np.log10(tx_power * power / (nf * noise_power))
    i, j = np.unravel_index(int(np.argmax(snr_db)), snr_db.shape)
    return float(deltas[i]), float(phases[j]), float(snr_db[i, j])
