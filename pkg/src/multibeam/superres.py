"""Super-resolution of per-path amplitudes from a band-limited CIR.

Paths closer than the sample period blur into overlapping sinc tails; with
the relative ToFs known from geometry, the complex amplitudes are the ridge
solution of a small linear system built from a sinc dictionary

    S[n, k] = sinc(B * ((n - anchor) * Ts - rel_tof_k)),   Ts = 1/B.

The measured CIR is circularly shifted so its strongest tap sits on the
anchor; estimates therefore depend only on (CIR, relative ToFs), not on
absolute timing.  A small exhaustive jitter search around the nominal ToFs
absorbs tracking drift between refinements.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .channel import Cir
from .kernels import sinc_matrix

# Default ridge weight: 1e-2 * trace(S^T S) / K.
_RIDGE_SCALE = 1e-2

# Default jitter grid: +-0.5 ns in 0.1 ns steps.
_JITTER_HALF_SPAN_S = 0.5e-9
_JITTER_STEP_S = 0.1e-9


@dataclass
class SincDictionary:
    """Sinc dictionary over relative ToFs, anchored inside the tap window."""

    matrix: np.ndarray  # (num_taps, num_paths), real
    relative_tofs_s: np.ndarray
    bandwidth_hz: float
    anchor_tap: int

    @property
    def num_paths(self) -> int:
        return self.matrix.shape[1]

    @property
    def num_taps(self) -> int:
        return self.matrix.shape[0]

    def condition_number(self) -> float:
        return float(np.linalg.cond(self.matrix))


@dataclass
class AmplitudeEstimate:
    """Ridge-recovered per-path amplitudes and fit diagnostics."""

    alphas: np.ndarray  # complex, one per dictionary path
    residual_norm: float
    jitter_applied_s: np.ndarray  # per-path ToF correction, 0 for the anchor
    shift_taps: int  # circular alignment applied to the input CIR
    at_grid_edge: bool = False  # a jitter landed on the search boundary

    def powers_db(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return 20.0 * np.log10(np.abs(self.alphas))


def build_dictionary(
    relative_tofs_s,
    bandwidth_hz: float,
    num_taps: int,
    anchor_tap: int | None = None,
) -> SincDictionary:
    """Dictionary for the given relative ToFs (first entry 0, ascending)."""
    tofs = np.asarray(relative_tofs_s, dtype=np.float64)
    if tofs.ndim != 1 or tofs.size == 0:
        raise ValueError("relative_tofs_s must be a non-empty 1-D vector")
    if abs(tofs[0]) > 1e-15:
        raise ValueError("the first relative ToF must be 0 (the anchor path)")
    if np.any(np.diff(tofs) <= 1e-12):
        raise ValueError("relative ToFs must be strictly ascending with no duplicates")
    if bandwidth_hz <= 0:
        raise ValueError("bandwidth_hz must be positive")
    if anchor_tap is None:
        anchor_tap = num_taps // 4
    if not 0 <= anchor_tap < num_taps:
        raise ValueError("anchor_tap outside the tap window")
    span = (num_taps - 1 - anchor_tap) / bandwidth_hz
    if tofs[-1] > span:
        raise ValueError("a relative ToF falls past the tap window")
    mat = sinc_matrix(tofs, bandwidth_hz, num_taps, float(anchor_tap))
    return SincDictionary(mat, tofs, bandwidth_hz, int(anchor_tap))


def default_ridge_weight(dictionary: SincDictionary) -> float:
    gram_trace = float(np.sum(dictionary.matrix**2))
    return _RIDGE_SCALE * gram_trace / dictionary.num_paths


def _align(cir: Cir, dictionary: SincDictionary) -> tuple[np.ndarray, int]:
    if abs(cir.bandwidth_hz - dictionary.bandwidth_hz) > 1e-6 * dictionary.bandwidth_hz:
        raise ValueError("CIR and dictionary bandwidths differ")
    if cir.num_taps != dictionary.num_taps:
        raise ValueError("CIR and dictionary tap counts differ")
    shift = int(np.argmax(np.abs(cir.taps))) - dictionary.anchor_tap
    return np.roll(cir.taps, -shift), shift


def _ridge_solve(matrix: np.ndarray, h: np.ndarray, ridge: float) -> np.ndarray:
    gram = matrix.T @ matrix
    rhs = matrix.T @ h
    if ridge == 0.0:
        cond = np.linalg.cond(gram)
        if not np.isfinite(cond) or cond > 1e12:
            raise np.linalg.LinAlgError(
                "sinc dictionary is numerically singular; use a positive ridge weight"
            )
    return np.linalg.solve(gram + ridge * np.eye(matrix.shape[1]), rhs)


def solve_amplitudes(
    cir: Cir,
    dictionary: SincDictionary,
    ridge_weight: float | None = None,
) -> AmplitudeEstimate:
    """Closed-form complex ridge fit of per-path amplitudes."""
    if ridge_weight is None:
        ridge_weight = default_ridge_weight(dictionary)
    if ridge_weight < 0:
        raise ValueError("ridge_weight must be >= 0")
    h, shift = _align(cir, dictionary)
    alphas = _ridge_solve(dictionary.matrix, h, ridge_weight)
    residual = float(np.linalg.norm(h - dictionary.matrix @ alphas))
    return AmplitudeEstimate(
        alphas=alphas,
        residual_norm=residual,
        jitter_applied_s=np.zeros(dictionary.num_paths),
        shift_taps=shift,
    )


def jitter_search(
    cir: Cir,
    dictionary: SincDictionary,
    ridge_weight: float | None = None,
    jitter_half_span_s: float = _JITTER_HALF_SPAN_S,
    jitter_step_s: float = _JITTER_STEP_S,
) -> AmplitudeEstimate:
    """Exhaustive per-path ToF jitter search around the nominal grid.

    The anchor path stays fixed; every non-anchor path tries offsets in
    [-half_span, +half_span] at the given step, the ridge system is
    re-solved per combination and the lowest-residual fit wins.  The zero
    combination is always included, so the result is never worse than
    solve_amplitudes.
    """
    if ridge_weight is None:
        ridge_weight = default_ridge_weight(dictionary)
    if jitter_step_s <= 0 or jitter_half_span_s < 0:
        raise ValueError("jitter grid must have a positive step and span >= 0")
    h, shift = _align(cir, dictionary)
    steps = int(round(jitter_half_span_s / jitter_step_s))
    offsets = jitter_step_s * np.arange(-steps, steps + 1)
    if 0.0 not in offsets:
        offsets = np.sort(np.append(offsets, 0.0))

    k = dictionary.num_paths
    best = None
    for combo in product(offsets, repeat=k - 1):
        tofs = dictionary.relative_tofs_s.copy()
        tofs[1:] += np.asarray(combo)
        if np.any(np.diff(tofs) <= 1e-12) or tofs[-1] * dictionary.bandwidth_hz > dictionary.num_taps - 1 - dictionary.anchor_tap:
            continue
        mat = sinc_matrix(tofs, dictionary.bandwidth_hz, dictionary.num_taps, float(dictionary.anchor_tap))
        alphas = _ridge_solve(mat, h, ridge_weight)
        residual = float(np.linalg.norm(h - mat @ alphas))
        if best is None or residual < best[0]:
            best = (residual, alphas, np.asarray(combo))
    if best is None:
        raise ValueError("jitter grid produced no valid ToF combination")
    residual, alphas, combo = best
    at_edge = bool(
        combo.size
        and offsets.max() > 0
        and np.any(np.abs(combo) >= offsets.max() - 1e-15)
    )
    jitter = np.zeros(k)
    jitter[1:] = combo
    return AmplitudeEstimate(
        alphas=alphas,
        residual_norm=residual,
        jitter_applied_s=jitter,
        shift_taps=shift,
        at_grid_edge=at_edge,
    )
