"""Proactive link maintenance from per-lobe power monitoring.

The tracker watches the per-lobe amplitude stream a link already produces,
smooths it with a forgetting-factor average, and classifies what the
channel is doing: a lobe collapsing while another holds steady is a
blockage; every lobe decaying by the same amount is a receiver rotation;
unequal decays are a translation.  Rotations and translations are then
quantified by inverting the known beam pattern (a 1-D search for the
misalignment angle that reproduces the observed decays), leaving a sign
ambiguity that one extra probe resolves.  Blockage is answered by zeroing
the blocked lobe and letting synthesis renormalize the survivors.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .ledger import ProbeLedger
from .synthesis import BeamComponent, MultiBeamSpec
from .ula import ArrayGeometry, beam_gain_db, single_beam_weights

BLOCKAGE_DROP_DB = 10.0  # raw drop within the blockage detection span
BLOCKAGE_SPAN_SAMPLES = 10  # detection span in monitored symbols
STABLE_BAND_DB = 1.0  # a companion lobe within this band counts as stable
MIN_DECAY_DB = 0.3  # smallest smoothed decay treated as real motion
EQUAL_DECAY_BAND_DB = 0.5  # rotation if per-lobe decays agree this closely
DEFAULT_FORGETTING = 0.9
DEFAULT_WINDOW = 50
DEFAULT_REFINE_THRESHOLD_DB = 1.5
PATTERN_DYNAMIC_RANGE_DB = 20.0  # decays beyond this exceed trustworthy inversion
_POWER_FLOOR = 1e-15


class OutageEvent(RuntimeError):
    """Every lobe is blocked; the link has nothing left to reallocate."""


@dataclass(frozen=True)
class Classification:
    kind: str  # static | blockage | rotation | translation | mobility_unclassified
    blocked_beams: tuple[int, ...] = ()


@dataclass(frozen=True)
class MotionEstimate:
    kind: str  # rotation | translation
    phi_deg: float  # magnitude until resolved, signed afterwards
    candidates: tuple[float, float]
    resolved: bool = False
    saturated: bool = False
    needs_retrain: bool = False
    beam_id: int = -1  # set for per-lobe translation estimates


class TrackerLog:
    """Row-per-observation log in the tracker's CSV interface."""

    _HEADER = "slot,beam_id,power_db,smoothed_db,event,phi_est_deg,probes_used"

    def __init__(self):
        self.rows: list[tuple] = []

    def power_row(self, slot, beam_id, power_db, smoothed_db):
        self.rows.append((int(slot), int(beam_id), float(power_db),
                          float(smoothed_db), "", None, 0))

    def event_row(self, slot, event, phi_est_deg=None, probes_used=0, beam_id=-1):
        self.rows.append((int(slot), int(beam_id), None, None, str(event),
                          phi_est_deg, int(probes_used)))

    def to_csv(self, path) -> None:
        def fmt(x):
            return "" if x is None else (f"{x:.6g}" if isinstance(x, float) else str(x))

        lines = [self._HEADER]
        for row in self.rows:
            lines.append(",".join(fmt(x) for x in row))
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


class TrackerState:
    """Single-writer per-lobe power monitor.

    One ingest/classify/refine loop owns the instance; everything else
    should only read snapshots of its attributes.
    """

    def __init__(
        self,
        num_beams: int,
        window: int = DEFAULT_WINDOW,
        forgetting: float = DEFAULT_FORGETTING,
        refine_threshold_db: float = DEFAULT_REFINE_THRESHOLD_DB,
    ):
        if num_beams < 1:
            raise ValueError("need at least one lobe to track")
        if not 0.0 <= forgetting < 1.0:
            raise ValueError("forgetting factor must be in [0, 1)")
        if refine_threshold_db <= 0:
            raise ValueError("refine_threshold_db must be positive")
        if window < BLOCKAGE_SPAN_SAMPLES:
            raise ValueError(f"window must be >= {BLOCKAGE_SPAN_SAMPLES}")
        self.num_beams = num_beams
        self.window = window
        self.forgetting = forgetting
        self.refine_threshold_db = refine_threshold_db
        # per lobe: deque of (slot, raw_db, smoothed_db), newest last
        self.history = [deque(maxlen=window) for _ in range(num_beams)]
        self.smoothed_db = [None] * num_beams
        self.baseline_db = [None] * num_beams
        self.fit_coeffs = [None] * num_beams  # quadratic in (slot - window start)
        self.classification = Classification("static")
        self.last_refine_slot: int | None = None

    @property
    def num_samples(self) -> int:
        return len(self.history[0])

    def fitted_power_db(self, beam: int, slot: float) -> float:
        """Evaluate the quadratic window fit for one lobe at a slot."""
        coeffs = self.fit_coeffs[beam]
        if coeffs is None:
            raise ValueError("fit needs at least 3 ingested samples")
        t0 = self.history[beam][0][0]
        return float(np.polyval(coeffs, float(slot) - t0))


def ingest_power(
    state: TrackerState,
    slot: int,
    alphas,
    log: TrackerLog | None = None,
) -> TrackerState:
    """Append one per-lobe amplitude observation.

    Powers are 20*log10|alpha|; the smoothed track is a forgetting-factor
    average seeded with the first sample; the quadratic fit over the
    retained window refreshes on every call.
    """
    alphas = np.atleast_1d(np.asarray(alphas))
    if alphas.shape != (state.num_beams,):
        raise ValueError(f"need exactly one amplitude per lobe ({state.num_beams})")
    powers = 20.0 * np.log10(np.maximum(np.abs(alphas), _POWER_FLOOR))
    for k, p in enumerate(powers):
        prev = state.smoothed_db[k]
        smoothed = float(p) if prev is None else (
            state.forgetting * prev + (1.0 - state.forgetting) * float(p)
        )
        state.smoothed_db[k] = smoothed
        if state.baseline_db[k] is None:
            state.baseline_db[k] = smoothed
        state.history[k].append((int(slot), float(p), smoothed))
        if len(state.history[k]) >= 3:
            slots = np.array([s for s, _, _ in state.history[k]], dtype=float)
            raws = np.array([r for _, r, _ in state.history[k]])
            state.fit_coeffs[k] = np.polyfit(slots - slots[0], raws, 2)
        if log is not None:
            log.power_row(slot, k, float(p), smoothed)
    return state


def decay_from_baseline_db(state: TrackerState) -> np.ndarray:
    """Per-lobe smoothed decay relative to the post-refinement baseline."""
    if any(s is None for s in state.smoothed_db):
        raise ValueError("no samples ingested yet")
    return np.array(
        [b - s for b, s in zip(state.baseline_db, state.smoothed_db)]
    )


def classify_event(state: TrackerState) -> Classification:
    """Label the window: blockage, rotation, translation, or static.

    Blockage: a lobe's raw power drops by >= 10 dB across the last 10
    monitored symbols while some other lobe stays within 1 dB.  Rotation:
    every lobe's smoothed decay exceeds 0.3 dB and the decays agree within
    0.5 dB.  Translation: every lobe decays >= 0.3 dB but unequally.  A
    single-lobe tracker cannot tell rotation from translation and reports
    mobility_unclassified instead.
    """
    if state.num_samples < BLOCKAGE_SPAN_SAMPLES:
        raise ValueError(f"classification needs >= {BLOCKAGE_SPAN_SAMPLES} samples")
    raws = [np.array([r for _, r, _ in state.history[k]]) for k in range(state.num_beams)]
    best_drop = np.zeros(state.num_beams)
    spans = [(0, 0)] * state.num_beams
    for k in range(state.num_beams):
        for i in range(len(raws[k])):
            j_end = min(i + BLOCKAGE_SPAN_SAMPLES, len(raws[k]))
            for j in range(i + 1, j_end):
                drop = raws[k][i] - raws[k][j]
                if drop > best_drop[k]:
                    best_drop[k] = drop
                    spans[k] = (i, j)
    blocked = [k for k in range(state.num_beams) if best_drop[k] >= BLOCKAGE_DROP_DB]
    result = None
    if blocked:
        deepest = max(blocked, key=lambda k: best_drop[k])
        i, j = spans[deepest]
        stable = [
            c for c in range(state.num_beams)
            if c not in blocked and abs(raws[c][i] - raws[c][j]) < STABLE_BAND_DB
        ]
        if stable:
            result = Classification("blockage", tuple(sorted(blocked)))
    if result is None:
        decays = decay_from_baseline_db(state)
        if np.all(decays >= MIN_DECAY_DB):
            if state.num_beams == 1:
                result = Classification("mobility_unclassified")
            elif float(decays.max() - decays.min()) <= EQUAL_DECAY_BAND_DB:
                result = Classification("rotation")
            else:
                result = Classification("translation")
        else:
            result = Classification("static")
    state.classification = result
    return result


def _decay_curve_db(geom: ArrayGeometry, center_deg: float, offsets_deg: np.ndarray):
    """Pattern decay of a lobe steered at center when the arrival shifts."""
    w = single_beam_weights(geom, center_deg)
    angles = center_deg + offsets_deg
    valid = np.abs(angles) <= 90.0
    gains = np.full(angles.shape, -np.inf)
    if np.any(valid):
        gains[valid] = beam_gain_db(geom, w, angles[valid])
    on_axis = float(beam_gain_db(geom, w, center_deg))
    return on_axis - gains  # decay >= 0 within the main lobe


def _search_misalignment(
    decay_targets: np.ndarray,
    curves: np.ndarray,
    grid_deg: np.ndarray,
) -> tuple[float, bool]:
    """LS fit of a common misalignment angle to per-lobe decay targets.

    curves[k, i] is lobe k's predicted decay at grid_deg[i].  Returns the
    minimizing angle and a saturation flag raised when the observed decay
    exceeds what the pattern can credibly produce: deeper than any grid
    point, or beyond the pattern's usable dynamic range (pattern nulls are
    floored far below anything invertible, so the range is capped).
    """
    achievable = np.nanmax(np.where(np.isfinite(curves), curves, np.nan), axis=1)
    achievable = np.minimum(achievable, PATTERN_DYNAMIC_RANGE_DB)
    if np.any(decay_targets > achievable + 0.5):
        return float(grid_deg[-1]), True
    err = np.nansum(
        np.where(np.isfinite(curves), (curves - decay_targets[:, None]) ** 2, np.nan),
        axis=0,
    )
    return float(grid_deg[int(np.nanargmin(err))]), False


def estimate_rotation(
    state: TrackerState,
    geom_r: ArrayGeometry,
    rx_angles_deg,
    search_max_deg: float = 15.0,
    step_deg: float = 0.05,
) -> MotionEstimate:
    """Invert the receive pattern for the common rotation angle.

    All receive lobes deviate by the same angle under rotation, so a 1-D
    search finds the |phi| whose per-lobe pattern decays best match the
    observed smoothed decays.  The sign stays ambiguous until probed.
    """
    if state.classification.kind != "rotation":
        raise ValueError("state is not classified as rotation")
    rx_angles = np.atleast_1d(np.asarray(rx_angles_deg, dtype=float))
    if rx_angles.shape != (state.num_beams,):
        raise ValueError("need one receive angle per lobe")
    decays = decay_from_baseline_db(state)
    grid = np.arange(0.0, search_max_deg + step_deg / 2, step_deg)
    curves = np.stack([_decay_curve_db(geom_r, a, grid) for a in rx_angles])
    phi, saturated = _search_misalignment(decays, curves, grid)
    if saturated:
        return MotionEstimate(
            "rotation", phi, (phi, -phi), saturated=True, needs_retrain=True
        )
    if phi == 0.0:
        return MotionEstimate("rotation", 0.0, (0.0, 0.0), resolved=True)
    return MotionEstimate("rotation", phi, (phi, -phi))


def estimate_translation(
    state: TrackerState,
    geom_t: ArrayGeometry,
    geom_r: ArrayGeometry,
    tx_angles_deg,
    rx_angles_deg,
    search_max_deg: float = 15.0,
    step_deg: float = 0.05,
) -> list[MotionEstimate]:
    """Per-lobe misalignment angles under translation.

    Translation deviates each path by its own angle, felt equally at both
    ends of the link, so each lobe gets an independent 1-D search over the
    sum of the transmit and receive pattern decays.
    """
    if state.classification.kind != "translation":
        raise ValueError("state is not classified as translation")
    tx_angles = np.atleast_1d(np.asarray(tx_angles_deg, dtype=float))
    rx_angles = np.atleast_1d(np.asarray(rx_angles_deg, dtype=float))
    if tx_angles.shape != (state.num_beams,) or rx_angles.shape != (state.num_beams,):
        raise ValueError("need one transmit and one receive angle per lobe")
    decays = decay_from_baseline_db(state)
    grid = np.arange(0.0, search_max_deg + step_deg / 2, step_deg)
    out = []
    for k in range(state.num_beams):
        curve = (
            _decay_curve_db(geom_t, tx_angles[k], grid)
            + _decay_curve_db(geom_r, rx_angles[k], grid)
        )
        phi, saturated = _search_misalignment(
            decays[k : k + 1], curve[None, :], grid
        )
        if saturated:
            est = MotionEstimate(
                "translation", phi, (phi, -phi),
                saturated=True, needs_retrain=True, beam_id=k,
            )
        elif phi == 0.0:
            est = MotionEstimate("translation", 0.0, (0.0, 0.0), resolved=True, beam_id=k)
        else:
            est = MotionEstimate("translation", phi, (phi, -phi), beam_id=k)
        out.append(est)
    return out


def resolve_ambiguity(
    estimate: MotionEstimate,
    probe_fn: Callable[[float], float],
    baseline_snr_db: float,
    ledger: ProbeLedger | None = None,
    slot: int = 0,
    improve_db: float = 0.3,
) -> MotionEstimate:
    """Pick the sign of a misalignment estimate with one probe.

    The first candidate is tried as a CSI-RS probe (the one logged probe);
    if the SNR improves by >= improve_db it wins, otherwise the opposite
    sign is adopted and verified on ordinary data slots.  If neither
    direction helps, the correction is abandoned and a full retrain is
    requested.
    """
    if estimate.resolved:
        return estimate
    plus, minus = estimate.candidates
    if ledger is not None:
        ledger.log_csirs(slot, beam_id=estimate.beam_id)
    if probe_fn(plus) >= baseline_snr_db + improve_db:
        return replace(estimate, phi_deg=plus, resolved=True)
    if probe_fn(minus) >= baseline_snr_db + improve_db:
        return replace(estimate, phi_deg=minus, resolved=True)
    return replace(estimate, needs_retrain=True)


def reallocate_on_blockage(spec: MultiBeamSpec, blocked_ids) -> MultiBeamSpec:
    """Zero the blocked lobes; synthesis renormalizes the survivors.

    Survivors keep their relative amplitudes and phases.  Blocking every
    lobe raises OutageEvent: there is no power left to reallocate and the
    decision (retrain or hand over) belongs to the caller.
    """
    blocked = set(int(b) for b in blocked_ids)
    for b in blocked:
        if not 0 <= b < len(spec.beams):
            raise ValueError(f"blocked lobe {b} out of range")
    if blocked >= set(range(len(spec.beams))):
        raise OutageEvent("every lobe is blocked")
    beams = [
        BeamComponent(c.angle_deg, 0.0 if i in blocked else c.delta, c.phase_rad)
        for i, c in enumerate(spec.beams)
    ]
    return MultiBeamSpec(beams=beams)


def should_refine(state: TrackerState) -> bool:
    """True when any lobe has decayed past the refinement threshold."""
    if any(s is None for s in state.smoothed_db):
        return False
    decays = decay_from_baseline_db(state)
    return bool(np.any(decays >= state.refine_threshold_db))


def mark_refined(state: TrackerState, slot: int) -> None:
    """Record a refinement and re-anchor the monitor.

    Refinement changes the weights, so the pre-refinement average no
    longer describes the link: the smoothed track and the baseline are
    re-seeded from the next ingested sample instead of dragging the stale
    (decayed) level forward.
    """
    state.last_refine_slot = int(slot)
    state.smoothed_db = [None] * state.num_beams
    state.baseline_db = [None] * state.num_beams
