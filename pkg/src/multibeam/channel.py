"""Sparse geometric multipath channel between two uniform linear arrays.

A channel is a small set of discrete propagation paths, each with a
departure angle, an arrival angle, a complex gain (reflection loss and
phase) and a time of flight.  The per-subcarrier response of path l seen
through beams (w_t, w_r) is

    alpha_l * exp(+1j*2*pi*k*delta_f*tof_l),
    alpha_l = (a_r(aoa_l).T w_r) * (a_t(aod_l).T w_t) * gain_l
              * exp(+1j*2*pi*carrier_hz*tof_l)

i.e. the carrier-frequency ToF phase lives in the effective amplitude and
the subcarrier index k (centered on the carrier) only adds the residual
rotation across the band.  The band-limited impulse response uses the same
alphas: taps[n] = sum_l alpha_l * sinc(B*(n*Ts - tof_l)), Ts = 1/B.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .kernels import pattern_amplitude, sinc_taps
from .ula import ArrayGeometry, WeightVector, steering_vector

SPEED_OF_LIGHT = 299_792_458.0

# 400 MHz band sampled as 256 subcarriers of 1.5625 MHz.
DEFAULT_NUM_SUBCARRIERS = 256
DEFAULT_SUBCARRIER_SPACING_HZ = 1.5625e6
DEFAULT_BANDWIDTH_HZ = 400e6

MAX_PATHS = 8

# Typical indoor reflection losses relative to the direct path, in dB.
MATERIAL_ATTENUATION_DB = {
    "metal": -3.0,
    "monitor": -12.0,
    "wood": -15.0,
    "wall": -16.0,
}

# Taps a path's sinc tail is allowed to spill past the last sample.
_TAP_GUARD = 4


@dataclass
class Path:
    """One propagation path; gain is a linear complex amplitude."""

    aod_deg: float
    aoa_deg: float
    gain: complex
    tof_s: float

    def __post_init__(self):
        if not -90.0 <= self.aod_deg <= 90.0:
            raise ValueError("aod_deg outside [-90, 90]")
        if not -90.0 <= self.aoa_deg <= 90.0:
            raise ValueError("aoa_deg outside [-90, 90]")
        if self.tof_s < 0:
            raise ValueError("tof_s must be non-negative")
        self.gain = complex(self.gain)


@dataclass
class PathSet:
    """A set of 1..MAX_PATHS paths, sorted by ToF; path 0 is the direct path."""

    paths: list[Path]
    carrier_hz: float = 28e9

    def __post_init__(self):
        if not 1 <= len(self.paths) <= MAX_PATHS:
            raise ValueError(f"need 1..{MAX_PATHS} paths, got {len(self.paths)}")
        if self.carrier_hz <= 0:
            raise ValueError("carrier_hz must be positive")
        self.paths = sorted(self.paths, key=lambda p: p.tof_s)

    @property
    def num_paths(self) -> int:
        return len(self.paths)

    def aods_deg(self) -> np.ndarray:
        return np.array([p.aod_deg for p in self.paths])

    def aoas_deg(self) -> np.ndarray:
        return np.array([p.aoa_deg for p in self.paths])

    def gains(self) -> np.ndarray:
        return np.array([p.gain for p in self.paths], dtype=np.complex128)

    def tofs_s(self) -> np.ndarray:
        return np.array([p.tof_s for p in self.paths])


@dataclass
class NoiseSpec:
    """Receiver noise: linear noise power and a seed for sampled draws."""

    noise_power: float = 1.0
    seed: int | None = None

    def __post_init__(self):
        if self.noise_power < 0:
            raise ValueError("noise_power must be >= 0")

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)


@dataclass
class Cir:
    """Band-limited channel impulse response sampled at Ts = 1/bandwidth."""

    taps: np.ndarray
    bandwidth_hz: float

    def __post_init__(self):
        self.taps = np.asarray(self.taps, dtype=np.complex128)
        if self.taps.ndim != 1 or self.taps.size == 0:
            raise ValueError("taps must be a non-empty 1-D vector")
        if self.bandwidth_hz <= 0:
            raise ValueError("bandwidth_hz must be positive")

    @property
    def num_taps(self) -> int:
        return self.taps.size

    @property
    def sample_period_s(self) -> float:
        return 1.0 / self.bandwidth_hz


def omni(carrier_hz: float = 28e9) -> tuple[ArrayGeometry, WeightVector]:
    """Single-element (omnidirectional) side, used as the non-scanned end."""
    return ArrayGeometry(1, 0.5, carrier_hz), WeightVector(np.ones(1, dtype=np.complex128))


def subcarrier_indices(num_subcarriers: int = DEFAULT_NUM_SUBCARRIERS) -> np.ndarray:
    """Subcarrier indices centered on the carrier: -S/2 .. S/2-1."""
    return np.arange(num_subcarriers) - num_subcarriers // 2


def _beam_factor(geom: ArrayGeometry, w: WeightVector, angles_deg: np.ndarray) -> np.ndarray:
    """Complex pattern amplitude a(angle).T w for each angle."""
    if w.num_elements != geom.num_elements:
        raise ValueError("weight length does not match array size")
    return pattern_amplitude(w.weights, np.deg2rad(np.asarray(angles_deg, float)), geom.spacing_wl)


def effective_path_amplitudes(
    ps: PathSet,
    geom_t: ArrayGeometry,
    w_t: WeightVector,
    geom_r: ArrayGeometry,
    w_r: WeightVector,
) -> np.ndarray:
    """Per-path complex amplitude through the given transmit/receive beams.

    Includes the carrier-frequency ToF phase, so these alphas are the tap
    amplitudes of the band-limited impulse response.  The per-path power in
    dB decomposes as tx gain + rx gain + 20*log10|gain_l|.
    """
    t = _beam_factor(geom_t, w_t, ps.aods_deg())
    r = _beam_factor(geom_r, w_r, ps.aoas_deg())
    carrier_phase = np.exp(2j * np.pi * ps.carrier_hz * ps.tofs_s())
    return r * t * ps.gains() * carrier_phase


def freq_response(
    ps: PathSet,
    geom_t: ArrayGeometry,
    num_subcarriers: int = DEFAULT_NUM_SUBCARRIERS,
    subcarrier_spacing_hz: float = DEFAULT_SUBCARRIER_SPACING_HZ,
) -> np.ndarray:
    """Per-element transmit-side channel, shape (num_subcarriers, N).

    h[k, n] = sum_l a_t(aod_l)[n] * gain_l * exp(+1j*2*pi*(fc + k*df)*tof_l)
    with k centered on the carrier.  The receive side is omnidirectional
    here; use effective_path_amplitudes for a two-sided projection.
    """
    k = subcarrier_indices(num_subcarriers)
    tofs = ps.tofs_s()
    freqs = ps.carrier_hz + k[:, None] * subcarrier_spacing_hz  # (S, L)
    phases = np.exp(2j * np.pi * freqs * tofs[None, :])
    steer = np.stack([steering_vector(geom_t, p.aod_deg) for p in ps.paths])  # (L, N)
    return (phases * ps.gains()[None, :]) @ steer


def subcarrier_response(
    ps: PathSet,
    geom_t: ArrayGeometry,
    w_t: WeightVector,
    geom_r: ArrayGeometry,
    w_r: WeightVector,
    num_subcarriers: int = DEFAULT_NUM_SUBCARRIERS,
    subcarrier_spacing_hz: float = DEFAULT_SUBCARRIER_SPACING_HZ,
) -> np.ndarray:
    """Scalar beam-projected channel per subcarrier, shape (num_subcarriers,)."""
    alphas = effective_path_amplitudes(ps, geom_t, w_t, geom_r, w_r)
    k = subcarrier_indices(num_subcarriers)
    rot = np.exp(2j * np.pi * subcarrier_spacing_hz * np.outer(k, ps.tofs_s()))
    return rot @ alphas


def received_snr_db(
    ps: PathSet,
    geom_t: ArrayGeometry,
    w_t: WeightVector,
    geom_r: ArrayGeometry,
    w_r: WeightVector,
    tx_power: float = 1.0,
    noise_power: float = 1.0,
    num_subcarriers: int = DEFAULT_NUM_SUBCARRIERS,
    subcarrier_spacing_hz: float = DEFAULT_SUBCARRIER_SPACING_HZ,
) -> float:
    """Subcarrier-averaged SNR in dB for the given beams and link budget."""
    if tx_power <= 0 or noise_power <= 0:
        raise ValueError("tx_power and noise_power must be positive")
    g = subcarrier_response(ps, geom_t, w_t, geom_r, w_r, num_subcarriers, subcarrier_spacing_hz)
    mean_power = float(np.mean(np.abs(g) ** 2))
    if mean_power == 0.0:
        return -np.inf
    return 10.0 * np.log10(mean_power * tx_power / noise_power)


def synthesize_cir(
    ps: PathSet,
    geom_t: ArrayGeometry,
    w_t: WeightVector,
    geom_r: ArrayGeometry,
    w_r: WeightVector,
    bandwidth_hz: float = DEFAULT_BANDWIDTH_HZ,
    num_taps: int = 64,
) -> Cir:
    """Band-limited impulse response through the given beams.

    Every ToF must fall at least _TAP_GUARD samples before the end of the
    tap window; aliasing a path past the window is an error.
    """
    if num_taps < 1:
        raise ValueError("num_taps must be >= 1")
    ts = 1.0 / bandwidth_hz
    limit = (num_taps - _TAP_GUARD) * ts
    if np.any(ps.tofs_s() > limit):
        raise ValueError(
            f"a ToF exceeds the tap window ({limit * 1e9:.1f} ns for "
            f"{num_taps} taps at {bandwidth_hz / 1e6:.0f} MHz)"
        )
    alphas = effective_path_amplitudes(ps, geom_t, w_t, geom_r, w_r)
    taps = sinc_taps(alphas, ps.tofs_s(), bandwidth_hz, num_taps)
    return Cir(taps, bandwidth_hz)


def cir_to_subcarriers(cir: Cir, subcarrier_indices_arr: np.ndarray, subcarrier_spacing_hz: float) -> np.ndarray:
    """Frequency samples of a tap vector at the given subcarrier offsets.

    Uses the same positive-rotation convention as subcarrier_response, so
    for a fully captured response the two agree.
    """
    n = np.arange(cir.num_taps)
    ts = cir.sample_period_s
    kernel = np.exp(2j * np.pi * subcarrier_spacing_hz * np.outer(subcarrier_indices_arr, n * ts))
    return kernel @ cir.taps


def measure_csi(
    ps: PathSet,
    geom_t: ArrayGeometry,
    w_t: WeightVector,
    geom_r: ArrayGeometry,
    w_r: WeightVector,
    tx_power: float = 1.0,
    noise_power: float = 0.0,
    rng: np.random.Generator | None = None,
    num_subcarriers: int = DEFAULT_NUM_SUBCARRIERS,
    subcarrier_spacing_hz: float = DEFAULT_SUBCARRIER_SPACING_HZ,
) -> np.ndarray:
    """One sampled CSI snapshot per subcarrier: sqrt(P)*g(k) + noise."""
    g = subcarrier_response(ps, geom_t, w_t, geom_r, w_r, num_subcarriers, subcarrier_spacing_hz)
    sig = np.sqrt(tx_power) * g
    if noise_power > 0.0:
        if rng is None:
            rng = np.random.default_rng()
        scale = np.sqrt(noise_power / 2.0)
        sig = sig + scale * (rng.standard_normal(sig.size) + 1j * rng.standard_normal(sig.size))
    return sig


def measure_cir(
    ps: PathSet,
    geom_t: ArrayGeometry,
    w_t: WeightVector,
    geom_r: ArrayGeometry,
    w_r: WeightVector,
    bandwidth_hz: float = DEFAULT_BANDWIDTH_HZ,
    num_taps: int = 64,
    tx_power: float = 1.0,
    noise_power: float = 0.0,
    rng: np.random.Generator | None = None,
    snapshots: int = 1,
) -> Cir:
    """Sampled impulse-response measurement, optionally snapshot-averaged.

    Per-tap noise has the given power per snapshot; averaging `snapshots`
    independent looks reduces it accordingly (pilot symbols are cheap
    relative to the tracking timescale).
    """
    cir = synthesize_cir(ps, geom_t, w_t, geom_r, w_r, bandwidth_hz, num_taps)
    taps = np.sqrt(tx_power) * cir.taps
    if noise_power > 0.0:
        if rng is None:
            rng = np.random.default_rng()
        scale = np.sqrt(noise_power / 2.0)
        noise = scale * (
            rng.standard_normal((snapshots, num_taps)) + 1j * rng.standard_normal((snapshots, num_taps))
        )
        taps = taps + noise.mean(axis=0)
    return Cir(taps, bandwidth_hz)


def save_pathset(ps: PathSet, path: str) -> None:
    """Write a path set to CSV: aod_deg,aoa_deg,gain_db,phase_deg,tof_ns."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# carrier_hz={ps.carrier_hz!r}\n")
        writer = csv.writer(fh)
        writer.writerow(["aod_deg", "aoa_deg", "gain_db", "phase_deg", "tof_ns"])
        for p in ps.paths:
            gain_db = 20.0 * np.log10(abs(p.gain))
            phase_deg = np.rad2deg(np.angle(p.gain))
            writer.writerow(
                [
                    f"{p.aod_deg:.4f}",
                    f"{p.aoa_deg:.4f}",
                    f"{gain_db:.4f}",
                    f"{phase_deg:.4f}",
                    f"{p.tof_s * 1e9:.4f}",
                ]
            )


def load_pathset(path: str) -> PathSet:
    """Read a path set written by save_pathset."""
    carrier_hz = 28e9
    rows = []
    with open(path, newline="") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                if "carrier_hz=" in line:
                    carrier_hz = float(line.split("carrier_hz=")[1])
                continue
            rows.append(line)
    reader = csv.DictReader(rows)
    paths = []
    for row in reader:
        gain = 10.0 ** (float(row["gain_db"]) / 20.0) * np.exp(1j * np.deg2rad(float(row["phase_deg"])))
        paths.append(
            Path(
                aod_deg=float(row["aod_deg"]),
                aoa_deg=float(row["aoa_deg"]),
                gain=complex(gain),
                tof_s=float(row["tof_ns"]) * 1e-9,
            )
        )
    return PathSet(paths, carrier_hz=carrier_hz)


def random_pathset(
    rng: np.random.Generator,
    num_paths: int | None = None,
    carrier_hz: float = 28e9,
    angle_span_deg: float = 60.0,
    min_angle_sep_deg: float = 15.0,
    atten_db_range: tuple[float, float] = (-16.0, -3.0),
    los_tof_range_ns: tuple[float, float] = (20.0, 40.0),
    excess_tof_range_ns: tuple[float, float] = (2.0, 30.0),
    min_tof_sep_ns: float = 2.0,
) -> PathSet:
    """Draw a direct path plus reflected paths with separated angles/ToFs.

    The direct path has unit magnitude and a random phase; reflections draw
    their loss uniformly from atten_db_range (typical indoor materials).
    """
    if num_paths is None:
        num_paths = int(rng.integers(2, 4))
    if not 1 <= num_paths <= MAX_PATHS:
        raise ValueError("num_paths outside 1..8")

    def draw_angles() -> np.ndarray:
        for _ in range(1000):
            cand = rng.uniform(-angle_span_deg, angle_span_deg, size=num_paths)
            if num_paths == 1 or np.min(np.diff(np.sort(cand))) >= min_angle_sep_deg:
                return cand
        raise RuntimeError("could not draw separated angles; relax the constraints")

    aods = draw_angles()
    aoas = draw_angles()
    los_tof = rng.uniform(*los_tof_range_ns)
    tofs = [los_tof]
    for _ in range(num_paths - 1):
        for _ in range(1000):
            t = los_tof + rng.uniform(*excess_tof_range_ns)
            if all(abs(t - u) >= min_tof_sep_ns for u in tofs):
                tofs.append(t)
                break
        else:
            raise RuntimeError("could not draw separated ToFs; relax the constraints")

    paths = [Path(aods[0], aoas[0], np.exp(1j * rng.uniform(0, 2 * np.pi)), tofs[0] * 1e-9)]
    for i in range(1, num_paths):
        mag = 10.0 ** (rng.uniform(*atten_db_range) / 20.0)
        gain = mag * np.exp(1j * rng.uniform(0, 2 * np.pi))
        paths.append(Path(aods[i], aoas[i], gain, tofs[i] * 1e-9))
    return PathSet(paths, carrier_hz=carrier_hz)
