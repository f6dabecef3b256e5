"""Initial link acquisition: exhaustive scan, path extraction, association.

One side sweeps a single-beam codebook while the other side stays
omnidirectional, producing an SNR-vs-angle profile per side.  Local maxima
give candidate departure/arrival angles; a per-candidate impulse-response
measurement gives each candidate a time of flight, and the two sides are
associated by matching ToFs (a path's ToF is the same seen from either
end).  The result is a path skeleton: (AoD, AoA, ToF) per path, amplitudes
left to the probing stage.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.signal import find_peaks

from .channel import (
    DEFAULT_NUM_SUBCARRIERS,
    DEFAULT_SUBCARRIER_SPACING_HZ,
    DEFAULT_BANDWIDTH_HZ,
    Cir,
    Path,
    PathSet,
    measure_cir,
    omni,
    subcarrier_indices,
)
from .ledger import SS_BURST_MS, ProbeLedger
from .ula import ArrayGeometry, WeightVector, single_beam_weights

DEFAULT_CODEBOOK_STEP_DEG = 2.0
DEFAULT_SCAN_RANGE_DEG = (-60.0, 60.0)
DEFAULT_PROMINENCE_DB = 3.0
BEAMS_PER_BURST = 64
TOF_AMBIGUITY_S = 0.5e-9
_LOW_CONFIDENCE_MARGIN_DB = 3.0
_MERGED_RESIDUAL_FRACTION = 0.02

_SIDES = ("tx", "rx")
_FRAMINGS = ("per_probe", "ss_burst")


@dataclass
class ScanProfile:
    """Measured SNR versus codebook angle for one link side."""

    angles_deg: np.ndarray
    snr_db: np.ndarray
    side: str

    def __post_init__(self):
        self.angles_deg = np.asarray(self.angles_deg, dtype=np.float64)
        self.snr_db = np.asarray(self.snr_db, dtype=np.float64)
        if self.angles_deg.ndim != 1 or self.angles_deg.shape != self.snr_db.shape:
            raise ValueError("angles and snr must be matching 1-D vectors")
        if self.angles_deg.size and np.any(np.diff(self.angles_deg) <= 0):
            raise ValueError("scan angles must be strictly increasing")
        if self.side not in _SIDES:
            raise ValueError(f"side must be one of {_SIDES}")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["angle_deg", "snr_db", "side"])
            for a, s in zip(self.angles_deg, self.snr_db):
                writer.writerow([f"{a:.6g}", f"{s:.6g}", self.side])


def load_scan_profile(path) -> ScanProfile:
    angles, snrs, sides = [], [], set()
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            angles.append(float(row["angle_deg"]))
            snrs.append(float(row["snr_db"]))
            sides.add(row["side"])
    if len(sides) != 1:
        raise ValueError("profile file must contain exactly one side")
    return ScanProfile(np.array(angles), np.array(snrs), sides.pop())


@dataclass
class AnglePeak:
    """One local maximum of a scan profile, vertex-refined."""

    angle_deg: float
    snr_db: float


@dataclass
class PathCandidate:
    """A detected angle on one side, with its measured ToF key."""

    angle_deg: float
    snr_db: float
    tof_s: float
    low_confidence: bool = False


@dataclass
class AssociatedPath:
    """An AoD/AoA pair matched by ToF; the minimum-ToF pair is the LOS."""

    aod_deg: float
    aoa_deg: float
    tof_s: float
    tx_snr_db: float
    rx_snr_db: float
    is_los: bool = False


@dataclass
class TofEstimate:
    """Strongest-tap time of flight from an upsampled impulse response."""

    tof_s: float
    peak_amplitude: complex
    peak_above_median_db: float
    low_confidence: bool
    merged: bool
    residual_fraction: float


@dataclass
class TrainingResult:
    """Everything the acquisition stage learned about the link."""

    skeleton: PathSet
    paths: list[AssociatedPath]
    tx_profile: ScanProfile
    rx_profile: ScanProfile
    ambiguous: bool
    any_low_confidence: bool
    any_merged: bool
    ledger: ProbeLedger
    next_slot: int


def _steering_rows(angles_deg, num_elements: int, spacing_wl: float) -> np.ndarray:
    """Rows a(angle)^T, shape (len(angles), num_elements)."""
    sines = np.sin(np.deg2rad(np.asarray(angles_deg, dtype=np.float64)))
    n = np.arange(num_elements)
    return np.exp(-2j * np.pi * spacing_wl * np.outer(sines, n))


def scan_grid(step_deg: float, scan_range_deg=DEFAULT_SCAN_RANGE_DEG) -> np.ndarray:
    lo, hi = scan_range_deg
    if step_deg <= 0 or hi <= lo:
        raise ValueError("need a positive step and a non-empty range")
    span = hi - lo
    count = span / step_deg
    if abs(count - round(count)) > 1e-9:
        raise ValueError("codebook step must divide the scan range")
    return lo + step_deg * np.arange(int(round(count)) + 1)


def exhaustive_scan(
    ps: PathSet,
    geom: ArrayGeometry,
    side: str,
    codebook_step_deg: float = DEFAULT_CODEBOOK_STEP_DEG,
    scan_range_deg=DEFAULT_SCAN_RANGE_DEG,
    tx_power: float = 1.0,
    noise_power: float = 1.0,
    rng: np.random.Generator | None = None,
    snapshots: int = 1,
    num_subcarriers: int = DEFAULT_NUM_SUBCARRIERS,
    subcarrier_spacing_hz: float = DEFAULT_SUBCARRIER_SPACING_HZ,
    ledger: ProbeLedger | None = None,
    start_slot: int = 0,
    framing: str = "per_probe",
) -> ScanProfile:
    """Sweep a single-beam codebook on one side, the other side omni.

    Measures the subcarrier-averaged SNR per codebook angle (coherently
    averaging `snapshots` looks when an rng is given) and charges the air
    time to the ledger: one SSB per angle in "per_probe" framing, or one
    5 ms burst per 64 beams in "ss_burst" framing.
    """
    if side not in _SIDES:
        raise ValueError(f"side must be one of {_SIDES}")
    if framing not in _FRAMINGS:
        raise ValueError(f"framing must be one of {_FRAMINGS}")
    if noise_power <= 0 or tx_power <= 0:
        raise ValueError("tx_power and noise_power must be positive")
    if snapshots < 1:
        raise ValueError("snapshots must be >= 1")
    grid = scan_grid(codebook_step_deg, scan_range_deg)

    own_angles = ps.aods_deg() if side == "tx" else ps.aoas_deg()
    rows_paths = _steering_rows(own_angles, geom.num_elements, geom.spacing_wl)
    rows_grid = _steering_rows(grid, geom.num_elements, geom.spacing_wl)
    # beam factor of codebook beam at each path angle: a(path)^T conj(a(grid))/sqrt(N)
    factors = rows_paths @ rows_grid.conj().T / math.sqrt(geom.num_elements)  # (L, A)

    carrier_phase = np.exp(2j * np.pi * ps.carrier_hz * ps.tofs_s())
    alphas = factors * (ps.gains() * carrier_phase)[:, None]  # (L, A)
    k = subcarrier_indices(num_subcarriers)
    rot = np.exp(
        2j * np.pi * subcarrier_spacing_hz * np.outer(k, ps.tofs_s())
    )  # (S, L)
    g = rot @ alphas  # (S, A)

    sig = math.sqrt(tx_power) * g
    effective_noise = noise_power
    if rng is not None and noise_power > 0.0:
        scale = math.sqrt(noise_power / 2.0)
        noise = scale * (
            rng.standard_normal((snapshots,) + sig.shape)
            + 1j * rng.standard_normal((snapshots,) + sig.shape)
        )
        sig = sig + noise.mean(axis=0)
        effective_noise = noise_power / snapshots
    mean_power = np.mean(np.abs(sig) ** 2, axis=0)
    with np.errstate(divide="ignore"):
        snr_db = 10.0 * np.log10(mean_power / effective_noise)

    if ledger is not None:
        if framing == "per_probe":
            for i in range(grid.size):
                ledger.log_ssb(start_slot + i, beam_id=i)
        else:
            bursts = math.ceil(grid.size / BEAMS_PER_BURST)
            for i in range(bursts):
                ledger.log_ssb(start_slot + i, beam_id=-1, duration_ms=SS_BURST_MS)
    return ScanProfile(grid, snr_db, side)


def _vertex_refine(angles: np.ndarray, y_db: np.ndarray, p: int) -> tuple[float, float]:
    """Quadratic interpolation of a peak and its two neighbors (dB domain)."""
    angle = float(angles[p])
    height = float(y_db[p])
    if 0 < p < y_db.size - 1:
        ym, y0, yp = y_db[p - 1], y_db[p], y_db[p + 1]
        denom = ym - 2.0 * y0 + yp
        if denom < 0:  # proper downward curvature
            delta = float(np.clip(0.5 * (ym - yp) / denom, -0.5, 0.5))
            step = float(angles[p + 1] - angles[p])
            a = 0.5 * (ym + yp) - y0
            b = 0.5 * (yp - ym)
            angle += delta * step
            # a beam pattern's vertex barely exceeds its best sample;
            # clamp so degenerate 3-point fits cannot explode
            height = float(min(y0 + b * delta + a * delta * delta, y0 + 3.0))
    return angle, height


def extract_paths(
    profile: ScanProfile,
    min_prominence_db: float = DEFAULT_PROMINENCE_DB,
    num_elements: int | None = None,
    spacing_wl: float = 0.5,
    dynamic_range_db: float = 20.0,
    max_paths: int = 8,
) -> list[AnglePeak]:
    """Peel candidate angles off the profile by successive beam subtraction.

    A strong path's own sidelobes are local maxima many dB prominent, so
    plain peak picking over-counts.  Instead the strongest peak is taken,
    vertex-refined, and the codebook beam's full power pattern at that
    angle is subtracted from the profile (the paths add in power since
    their ToF rotations decorrelate across subcarriers); then repeat.
    Extraction stops when the next peak is within `min_prominence_db` of
    the residual's median (the noise floor) or more than
    `dynamic_range_db` below the strongest peak.  Returned strongest
    first.  When `num_elements` is omitted, sidelobe subtraction is
    skipped and plain local maxima with that prominence are returned.
    """
    if profile.angles_deg.size == 0:
        raise ValueError("profile is empty")
    y = profile.snr_db
    if num_elements is None:
        idx, _ = find_peaks(y, prominence=min_prominence_db)
        return [AnglePeak(*_vertex_refine(profile.angles_deg, y, p)) for p in idx]

    power = 10.0 ** (y / 10.0)
    rows_grid = _steering_rows(profile.angles_deg, num_elements, spacing_wl)
    # imperfect subtraction leaves noise-by-signal spurs on a peak's own
    # main lobe; nothing closer than a beamwidth is resolvable anyway
    hpbw_deg = 101.5 / (2.0 * num_elements * spacing_wl)
    allowed = np.ones(power.size, dtype=bool)
    peaks: list[AnglePeak] = []
    top_db = None
    for _ in range(max_paths):
        if not np.any(allowed):
            break
        masked = np.where(allowed, power, 0.0)
        p = int(np.argmax(masked))
        with np.errstate(divide="ignore"):
            resid_db = 10.0 * np.log10(np.maximum(power, 1e-30))
        peak_db = float(resid_db[p])
        floor_db = float(np.median(resid_db))
        if peak_db - floor_db < min_prominence_db:
            break
        if top_db is not None and peak_db < top_db - dynamic_range_db:
            break
        if top_db is None:
            top_db = peak_db
        angle, height = _vertex_refine(profile.angles_deg, resid_db, p)
        peaks.append(AnglePeak(angle, height))
        # power pattern of the codebook beam trained on this angle
        steer = np.exp(
            -2j * np.pi * spacing_wl * np.sin(np.deg2rad(angle)) * np.arange(num_elements)
        )
        template = np.abs(rows_grid @ steer.conj()) ** 2 / num_elements
        if template[p] > 0:
            power = np.maximum(power - power[p] * template / template[p], 0.0)
        else:  # degenerate; remove the single bin
            power[p] = 0.0
        allowed &= np.abs(profile.angles_deg - angle) > hpbw_deg
    return peaks


def _upsample(taps: np.ndarray, factor: int) -> np.ndarray:
    """Band-limited (circular) interpolation by spectrum zero-padding."""
    t = taps.size
    if factor == 1:
        return taps.astype(np.complex128)
    spec = np.fft.fft(taps)
    m = t * factor
    out = np.zeros(m, dtype=np.complex128)
    half = t // 2
    if t % 2 == 0:
        out[:half] = spec[:half]
        # split the Nyquist bin across both spectrum edges
        out[half] = 0.5 * spec[half]
        out[m - half] = 0.5 * spec[half]
        out[m - half + 1 :] = spec[half + 1 :]
    else:
        out[: half + 1] = spec[: half + 1]
        out[m - half :] = spec[half + 1 :]
    return np.fft.ifft(out) * factor


def estimate_tof(cir: Cir, upsample_factor: int = 8) -> TofEstimate:
    """Time of flight of the strongest tap, to sub-sample precision.

    The tap vector is band-limited-upsampled by `upsample_factor`, and the
    three magnitude samples around the coarse peak are fit with
    A*cos(w*(t - tau)) to place the peak between fine samples.  Flags:
    `low_confidence` when the peak clears the median tap by < 3 dB, and
    `merged` when a single-pulse shape fit around the peak leaves more
    than 2% of the local energy unexplained (two sub-sample paths look
    like one biased peak).
    """
    if upsample_factor < 1:
        raise ValueError("upsample_factor must be >= 1")
    taps = cir.taps
    energy = float(np.sum(np.abs(taps) ** 2))
    if energy == 0.0:
        raise ValueError("impulse response is identically zero")
    fine = _upsample(taps, upsample_factor)
    mag = np.abs(fine)
    m = int(np.argmax(mag))

    delta = 0.0
    if 0 < m < mag.size - 1:
        ym, y0, yp = mag[m - 1], mag[m], mag[m + 1]
        ratio = (ym + yp) / (2.0 * y0)
        if -1.0 < ratio < 1.0:
            w = math.acos(ratio)
            if w > 1e-9:
                delta = math.atan2(yp - ym, 2.0 * y0 * math.sin(w)) / w
                delta = float(np.clip(delta, -1.0, 1.0))

    fine_step = cir.sample_period_s / upsample_factor
    tof = (m + delta) * fine_step
    peak_amp = complex(fine[m])

    median_power = float(np.median(np.abs(taps) ** 2))
    if median_power == 0.0:
        margin_db = math.inf
    else:
        margin_db = 10.0 * math.log10(abs(peak_amp) ** 2 / median_power)

    # shape check around the peak: LS-fit a single pulse at the estimated
    # ToF over a +-3 tap window; leftover energy means overlapping paths
    coarse = int(np.argmax(np.abs(taps)))
    lo = max(coarse - 3, 0)
    hi = min(coarse + 4, cir.num_taps)
    window = np.arange(lo, hi)
    shape = np.sinc(cir.bandwidth_hz * (window * cir.sample_period_s - tof))
    h_win = taps[window]
    denom = float(np.dot(shape, shape))
    fit = (np.dot(shape, h_win) / denom) if denom > 0 else 0.0
    win_energy = float(np.sum(np.abs(h_win) ** 2))
    residual_fraction = (
        float(np.sum(np.abs(h_win - fit * shape) ** 2) / win_energy)
        if win_energy > 0
        else 0.0
    )

    return TofEstimate(
        tof_s=float(tof),
        peak_amplitude=peak_amp,
        peak_above_median_db=margin_db,
        low_confidence=margin_db < _LOW_CONFIDENCE_MARGIN_DB,
        merged=residual_fraction > _MERGED_RESIDUAL_FRACTION,
        residual_fraction=residual_fraction,
    )


def associate_paths(
    tx_candidates: list[PathCandidate],
    rx_candidates: list[PathCandidate],
    tof_tolerance_s: float = TOF_AMBIGUITY_S,
) -> tuple[list[AssociatedPath], bool]:
    """Pair departure and arrival candidates by their shared ToF key.

    Pairs are the minimum-total-|dToF| assignment.  If any candidate could
    match more than one partner within the tolerance the pairing is
    ambiguous: the SNR ranking (strongest with strongest) is used instead
    and the flag is raised.  The minimum-ToF pair is labeled LOS.
    """
    if len(tx_candidates) != len(rx_candidates):
        raise ValueError("candidate lists must have equal length (prune first)")
    if not tx_candidates:
        return [], False

    tx_tofs = np.array([c.tof_s for c in tx_candidates])
    rx_tofs = np.array([c.tof_s for c in rx_candidates])
    cost = np.abs(tx_tofs[:, None] - rx_tofs[None, :])

    ambiguous = bool(
        np.any(np.sum(cost < tof_tolerance_s, axis=1) > 1)
        or np.any(np.sum(cost < tof_tolerance_s, axis=0) > 1)
    )
    if ambiguous:
        tx_order = np.argsort([-c.snr_db for c in tx_candidates])
        rx_order = np.argsort([-c.snr_db for c in rx_candidates])
        pairs = list(zip(tx_order, rx_order))
    else:
        from scipy.optimize import linear_sum_assignment

        rows, cols = linear_sum_assignment(cost)
        pairs = list(zip(rows, cols))

    out = []
    for i, j in pairs:
        t, r = tx_candidates[i], rx_candidates[j]
        out.append(
            AssociatedPath(
                aod_deg=t.angle_deg,
                aoa_deg=r.angle_deg,
                tof_s=0.5 * (t.tof_s + r.tof_s),
                tx_snr_db=t.snr_db,
                rx_snr_db=r.snr_db,
            )
        )
    out.sort(key=lambda p: p.tof_s)
    out[0] = replace(out[0], is_los=True)
    return out, ambiguous


def _candidate_tofs(
    ps: PathSet,
    geom: ArrayGeometry,
    side: str,
    peaks: list[AnglePeak],
    bandwidth_hz: float,
    num_taps: int,
    tx_power: float,
    noise_power: float,
    rng: np.random.Generator | None,
    snapshots: int,
    ledger: ProbeLedger,
    slot: int,
) -> tuple[list[PathCandidate], int, bool, bool]:
    """One beamformed impulse-response measurement per detected angle."""
    geom_o, w_o = omni(ps.carrier_hz)
    candidates = []
    any_low = any_merged = False
    for peak in peaks:
        w = single_beam_weights(geom, peak.angle_deg)
        if side == "tx":
            args = (ps, geom, w, geom_o, w_o)
        else:
            args = (ps, geom_o, w_o, geom, w)
        cir = measure_cir(
            *args,
            bandwidth_hz=bandwidth_hz,
            num_taps=num_taps,
            tx_power=tx_power,
            noise_power=noise_power,
            rng=rng,
            snapshots=snapshots,
        )
        est = estimate_tof(cir)
        ledger.log_ssb(slot, beam_id=len(candidates))
        slot += 1
        any_low |= est.low_confidence
        any_merged |= est.merged
        candidates.append(
            PathCandidate(peak.angle_deg, peak.snr_db, est.tof_s, est.low_confidence)
        )
    return candidates, slot, any_low, any_merged


def run_training(
    ps: PathSet,
    geom_t: ArrayGeometry,
    geom_r: ArrayGeometry,
    codebook_step_deg: float = DEFAULT_CODEBOOK_STEP_DEG,
    scan_range_deg=DEFAULT_SCAN_RANGE_DEG,
    min_prominence_db: float = DEFAULT_PROMINENCE_DB,
    tx_power: float = 1.0,
    noise_power: float = 1.0,
    rng: np.random.Generator | None = None,
    snapshots: int = 1,
    bandwidth_hz: float = DEFAULT_BANDWIDTH_HZ,
    num_taps: int = 64,
    ledger: ProbeLedger | None = None,
    start_slot: int = 0,
    framing: str = "per_probe",
) -> TrainingResult:
    """Full acquisition: scan both sides, extract, key by ToF, associate.

    After association each pair's ToF is re-measured through both steered
    beams (the double beamforming gain suppresses the other paths), which
    is what the returned skeleton carries.  Skeleton amplitudes are scan
    SNR ratios relative to the strongest pair; phases are unknown (zero).
    """
    if ledger is None:
        ledger = ProbeLedger()
    slot = start_slot
    rows_before = len(ledger.records)

    tx_profile = exhaustive_scan(
        ps, geom_t, "tx", codebook_step_deg, scan_range_deg, tx_power, noise_power,
        rng, snapshots, ledger=ledger, start_slot=slot, framing=framing,
    )
    slot = start_slot + (len(ledger.records) - rows_before)
    rx_profile = exhaustive_scan(
        ps, geom_r, "rx", codebook_step_deg, scan_range_deg, tx_power, noise_power,
        rng, snapshots, ledger=ledger, start_slot=slot, framing=framing,
    )
    slot = start_slot + (len(ledger.records) - rows_before)

    tx_peaks = extract_paths(
        tx_profile, min_prominence_db,
        num_elements=geom_t.num_elements, spacing_wl=geom_t.spacing_wl,
    )
    rx_peaks = extract_paths(
        rx_profile, min_prominence_db,
        num_elements=geom_r.num_elements, spacing_wl=geom_r.spacing_wl,
    )
    if not tx_peaks or not rx_peaks:
        raise ValueError("no path detected on at least one side")
    # prune the longer list to the strongest candidates
    n = min(len(tx_peaks), len(rx_peaks))
    tx_peaks = sorted(tx_peaks, key=lambda p: -p.snr_db)[:n]
    rx_peaks = sorted(rx_peaks, key=lambda p: -p.snr_db)[:n]

    tx_cands, slot, low_t, merged_t = _candidate_tofs(
        ps, geom_t, "tx", tx_peaks, bandwidth_hz, num_taps,
        tx_power, noise_power, rng, snapshots, ledger, slot,
    )
    rx_cands, slot, low_r, merged_r = _candidate_tofs(
        ps, geom_r, "rx", rx_peaks, bandwidth_hz, num_taps,
        tx_power, noise_power, rng, snapshots, ledger, slot,
    )

    paths, ambiguous = associate_paths(tx_cands, rx_cands)

    # refine each pair's ToF through both steered beams
    refined = []
    for pair in paths:
        w_t = single_beam_weights(geom_t, pair.aod_deg)
        w_r = single_beam_weights(geom_r, pair.aoa_deg)
        cir = measure_cir(
            ps, geom_t, w_t, geom_r, w_r,
            bandwidth_hz=bandwidth_hz, num_taps=num_taps,
            tx_power=tx_power, noise_power=noise_power, rng=rng, snapshots=snapshots,
        )
        est = estimate_tof(cir)
        ledger.log_ssb(slot, beam_id=len(refined))
        slot += 1
        refined.append(replace(pair, tof_s=est.tof_s))
    refined.sort(key=lambda p: p.tof_s)
    refined = [replace(p, is_los=(i == 0)) for i, p in enumerate(refined)]

    best_snr = max(p.tx_snr_db for p in refined)
    skeleton = PathSet(
        paths=[
            Path(
                aod_deg=p.aod_deg,
                aoa_deg=p.aoa_deg,
                gain=10.0 ** ((p.tx_snr_db - best_snr) / 20.0) + 0j,
                tof_s=p.tof_s,
            )
            for p in refined
        ],
        carrier_hz=ps.carrier_hz,
    )
    return TrainingResult(
        skeleton=skeleton,
        paths=refined,
        tx_profile=tx_profile,
        rx_profile=rx_profile,
        ambiguous=ambiguous,
        any_low_confidence=low_t or low_r,
        any_merged=merged_t or merged_r,
        ledger=ledger,
        next_slot=slot,
    )
