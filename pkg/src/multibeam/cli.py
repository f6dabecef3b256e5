"""Command-line front end binding the library modules into file pipelines.

Subcommands::

    pattern   synthesize a multi-lobe pattern and export its angular cut
    train     acquire a channel skeleton by two-sided exhaustive scanning
    probe     run one constructive-combining refinement cycle on a pattern
    superres  split overlapping per-lobe amplitudes out of a measured CIR
    track     replay a per-lobe power trace through the event monitor
    sim       Monte Carlo link simulation of the maintenance schemes
    overhead  tabulate per-cycle probing cost versus lobe/antenna count
    sweep     export analysis grids (combining sensitivity, lobe separation)

All values cross the command line and the CSV files in engineering units:
angles in degrees, powers and gains in dB, times of flight in nanoseconds,
airtime in milliseconds.  Subcommands that draw randomness require
``--seed`` and produce byte-identical files when re-run with the same
arguments.  Exit status: 0 on success, 2 on configuration or usage errors,
1 on runtime failures.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import re
import sys
from pathlib import Path as _FsPath

import numpy as np

try:  # Python 3.11+
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10 only
    import tomli as tomllib

from . import linksim
from .channel import (
    Cir,
    DEFAULT_BANDWIDTH_HZ,
    Path,
    PathSet,
    load_pathset,
    save_pathset,
)
from .superres import build_dictionary, jitter_search, solve_amplitudes
from .synthesis import BeamComponent, MultiBeamSpec, multi_beam_weights
from .tracking import (
    BLOCKAGE_SPAN_SAMPLES,
    TrackerLog,
    TrackerState,
    classify_event,
    estimate_rotation,
    estimate_translation,
    ingest_power,
    mark_refined,
    should_refine,
)
from .training import run_training
from .combining import run_probe_cycle
from .ula import ArrayGeometry, export_pattern_csv, single_beam_weights
from .channel import omni, received_snr_db
from .synthesis import matched_multibeam_spec

_UNITS_NOTE = (
    "Units: angles in degrees, powers/gains in dB, times of flight in "
    "nanoseconds, airtime in milliseconds."
)


class _UsageError(Exception):
    """Bad arguments or malformed input files; maps to exit status 2."""


class _Parser(argparse.ArgumentParser):
    """Argument parser that accepts negative-number lists like ``-20,20``.

    No option here starts with a digit, so any token beginning with
    ``-<digit>`` must be a value, not a flag.
    """

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self._negative_number_matcher = re.compile(r"^-\d")


@contextlib.contextmanager
def _config_phase():
    """Convert input-construction failures into usage errors."""
    try:
        yield
    except _UsageError:
        raise
    except (ValueError, KeyError, TypeError, OSError, json.JSONDecodeError) as exc:
        raise _UsageError(str(exc)) from exc


def _parse_float_list(text: str, flag: str) -> list[float]:
    try:
        values = [float(tok) for tok in text.split(",") if tok.strip() != ""]
    except ValueError as exc:
        raise _UsageError(f"{flag} expects comma-separated numbers, got {text!r}") from exc
    if not values:
        raise _UsageError(f"{flag} must list at least one value")
    return values


def _parse_int_list(text: str, flag: str) -> list[int]:
    floats = _parse_float_list(text, flag)
    ints = [int(round(v)) for v in floats]
    if any(abs(i - v) > 1e-9 for i, v in zip(ints, floats)):
        raise _UsageError(f"{flag} expects integers, got {text!r}")
    return ints


def _geometry(elements: int, spacing_wl: float, carrier_ghz: float) -> ArrayGeometry:
    return ArrayGeometry(elements, spacing_wl, carrier_ghz * 1e9)


def _require_seed(args) -> int:
    if args.seed is None:
        raise _UsageError("this subcommand draws randomness; --seed is required")
    return int(args.seed)


# ---------------------------------------------------------------------------
# pattern
# ---------------------------------------------------------------------------


def _build_spec(args) -> MultiBeamSpec:
    if args.spec is not None:
        if args.angles is not None:
            raise _UsageError("give either --spec or --angles, not both")
        return MultiBeamSpec.load(args.spec)
    if args.angles is None:
        raise _UsageError("one of --spec or --angles is required")
    angles = _parse_float_list(args.angles, "--angles")
    deltas_db = (
        _parse_float_list(args.delta_db, "--delta-db")
        if args.delta_db is not None
        else [0.0] * len(angles)
    )
    phases_deg = (
        _parse_float_list(args.phases_deg, "--phases-deg")
        if args.phases_deg is not None
        else [0.0] * len(angles)
    )
    if not len(angles) == len(deltas_db) == len(phases_deg):
        raise _UsageError("--angles, --delta-db and --phases-deg lengths differ")
    return MultiBeamSpec.from_dict(
        {"angles_deg": angles, "deltas_db": deltas_db, "phases_deg": phases_deg}
    )


def _cmd_pattern(args) -> None:
    with _config_phase():
        spec = _build_spec(args)
        geom = _geometry(args.elements, args.spacing_wl, args.carrier_ghz)
        if args.step_deg <= 0:
            raise _UsageError("--step-deg must be positive")
    w, nf = multi_beam_weights(geom, spec)
    angles = export_pattern_csv(geom, w, args.out, step_deg=args.step_deg)
    if args.save_spec:
        spec.save(args.save_spec)
    print(
        f"pattern: {spec.num_beams} lobe(s), normalization {10 * np.log10(nf):.3f} dB, "
        f"{angles.size} rows -> {args.out}"
    )


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def _cmd_train(args) -> None:
    with _config_phase():
        seed = _require_seed(args)
        ps = load_pathset(args.channel)
        geom_t = _geometry(args.tx_elements, args.spacing_wl, args.carrier_ghz)
        geom_r = _geometry(args.rx_elements, args.spacing_wl, args.carrier_ghz)
        if args.snr_db is None:
            raise _UsageError("--snr-db is required")
        noise_power = 10.0 ** (-args.snr_db / 10.0)
    result = run_training(
        ps,
        geom_t,
        geom_r,
        codebook_step_deg=args.step_deg,
        noise_power=noise_power,
        rng=np.random.default_rng(seed),
        snapshots=args.snapshots,
    )
    save_pathset(result.skeleton, args.out)
    if args.profiles_out:
        result.tx_profile.to_csv(f"{args.profiles_out}_tx.csv")
        result.rx_profile.to_csv(f"{args.profiles_out}_rx.csv")
    flags = []
    if result.ambiguous:
        flags.append("ambiguous")
    if result.any_low_confidence:
        flags.append("low-confidence")
    if result.any_merged:
        flags.append("merged-taps")
    print(
        f"train: {result.skeleton.num_paths} path(s) acquired in "
        f"{result.next_slot} probe slots"
        + (f" [{', '.join(flags)}]" if flags else "")
        + f" -> {args.out}"
    )


# ---------------------------------------------------------------------------
# probe
# ---------------------------------------------------------------------------


def _cmd_probe(args) -> None:
    with _config_phase():
        ps = load_pathset(args.channel)
        base = MultiBeamSpec.load(args.spec)
        geom_t = _geometry(args.tx_elements, args.spacing_wl, args.carrier_ghz)
        if args.noiseless:
            noise_power, rng = 0.0, None
        else:
            seed = _require_seed(args)
            noise_power = 10.0 ** (-args.snr_db / 10.0)
            rng = np.random.default_rng(seed)
    result = run_probe_cycle(
        ps,
        geom_t,
        base,
        noise_power=noise_power,
        rng=rng,
        estimator=args.estimator,
    )
    result.refined.save(args.out)
    refined = result.refined.to_dict()
    pairs = ", ".join(
        f"lobe {b}: {d:.2f} dB @ {p:.1f} deg"
        for b, (d, p) in enumerate(zip(refined["deltas_db"], refined["phases_deg"]))
        if b > 0
    )
    print(
        f"probe: {len(result.reports)} probe(s) over "
        f"{result.next_slot}-slot cycle; {pairs or 'single lobe'} -> {args.out}"
    )


# ---------------------------------------------------------------------------
# superres
# ---------------------------------------------------------------------------


def _load_cir_csv(path: str) -> Cir:
    """Read a CIR file: optional ``# bandwidth_hz=`` line, then tap_index,re,im."""
    bandwidth_hz = DEFAULT_BANDWIDTH_HZ
    rows: list[str] = []
    with open(path, newline="") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                if "bandwidth_hz=" in line:
                    bandwidth_hz = float(line.split("bandwidth_hz=")[1])
                continue
            rows.append(line)
    taps: dict[int, complex] = {}
    for row in csv.DictReader(rows):
        taps[int(row["tap_index"])] = complex(float(row["re"]), float(row["im"]))
    if not taps:
        raise ValueError(f"{path} holds no CIR taps")
    if sorted(taps) != list(range(len(taps))):
        raise ValueError("tap_index values must cover 0..N-1 exactly once")
    vec = np.array([taps[i] for i in range(len(taps))], dtype=np.complex128)
    return Cir(vec, bandwidth_hz)


def _cmd_superres(args) -> None:
    with _config_phase():
        cir = _load_cir_csv(args.cir)
        tofs_ns = _parse_float_list(args.tofs_ns, "--tofs-ns")
        dictionary = build_dictionary(
            np.asarray(tofs_ns) * 1e-9, cir.bandwidth_hz, cir.num_taps
        )
    kwargs = {}
    if args.ridge is not None:
        kwargs["ridge_weight"] = args.ridge
    if args.no_jitter:
        est = solve_amplitudes(cir, dictionary, **kwargs)
    else:
        if args.jitter_span_ns is not None:
            kwargs["jitter_half_span_s"] = args.jitter_span_ns * 1e-9
        if args.jitter_step_ns is not None:
            kwargs["jitter_step_s"] = args.jitter_step_ns * 1e-9
        est = jitter_search(cir, dictionary, **kwargs)
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["beam_id", "alpha_db", "alpha_phase_deg"])
        for b, alpha in enumerate(est.alphas):
            mag = max(abs(alpha), 1e-30)
            writer.writerow(
                [b, f"{20 * np.log10(mag):.6f}", f"{np.degrees(np.angle(alpha)):.6f}"]
            )
    jit = ", ".join(f"{j * 1e9:+.3f}" for j in est.jitter_applied_s)
    print(
        f"superres: {dictionary.num_paths} path(s), residual "
        f"{est.residual_norm:.3e}, jitter ns [{jit}] -> {args.out}"
    )


# ---------------------------------------------------------------------------
# track
# ---------------------------------------------------------------------------


def _load_trace(path: str) -> tuple[list[int], np.ndarray]:
    """Read a long-format trace (slot,beam_id,power_db) into slot rows."""
    per_slot: dict[int, dict[int, float]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            per_slot.setdefault(int(row["slot"]), {})[int(row["beam_id"])] = float(
                row["power_db"]
            )
    if not per_slot:
        raise ValueError(f"{path} holds no trace rows")
    beams = sorted({b for powers in per_slot.values() for b in powers})
    if beams != list(range(len(beams))):
        raise ValueError("beam_id values must cover 0..K-1")
    slots = sorted(per_slot)
    grid = np.empty((len(slots), len(beams)))
    for i, s in enumerate(slots):
        if sorted(per_slot[s]) != beams:
            raise ValueError(f"slot {s} is missing a lobe observation")
        grid[i] = [per_slot[s][b] for b in beams]
    return slots, grid


def _cmd_track(args) -> None:
    with _config_phase():
        slots, powers_db = _load_trace(args.trace)
        k = powers_db.shape[1]
        geom_t = _geometry(args.tx_elements, args.spacing_wl, args.carrier_ghz)
        geom_r = _geometry(args.rx_elements, args.spacing_wl, args.carrier_ghz)
        tx_angles = (
            _parse_float_list(args.tx_angles, "--tx-angles") if args.tx_angles else None
        )
        rx_angles = (
            _parse_float_list(args.rx_angles, "--rx-angles") if args.rx_angles else None
        )
        for name, lst in (("--tx-angles", tx_angles), ("--rx-angles", rx_angles)):
            if lst is not None and len(lst) != k:
                raise _UsageError(f"{name} must list one angle per lobe ({k})")
        state = TrackerState(
            k,
            window=args.window,
            forgetting=args.forgetting,
            refine_threshold_db=args.threshold_db,
        )
    log = TrackerLog()
    events = {"blockage": 0, "rotation": 0, "translation": 0, "unclassified": 0}
    for slot, row in zip(slots, powers_db):
        ingest_power(state, slot, 10.0 ** (row / 20.0), log)
        if state.num_samples < BLOCKAGE_SPAN_SAMPLES or not should_refine(state):
            continue
        try:
            cls = classify_event(state)
        except ValueError:
            log.event_row(slot, "unclassified")
            events["unclassified"] += 1
            mark_refined(state, slot)
            continue
        if cls.kind == "blockage":
            for b in cls.blocked_beams:
                log.event_row(slot, "blockage", beam_id=b)
            events["blockage"] += 1
        elif cls.kind == "rotation":
            if rx_angles is None:
                raise _UsageError("rotation event found; --rx-angles is required")
            est = estimate_rotation(state, geom_r, rx_angles)
            log.event_row(slot, "rotation", phi_est_deg=est.phi_deg)
            events["rotation"] += 1
        elif cls.kind == "translation":
            if tx_angles is None or rx_angles is None:
                raise _UsageError(
                    "translation event found; --tx-angles and --rx-angles are required"
                )
            for est in estimate_translation(state, geom_t, geom_r, tx_angles, rx_angles):
                log.event_row(slot, "translation", phi_est_deg=est.phi_deg, beam_id=est.beam_id)
            events["translation"] += 1
        mark_refined(state, slot)
    log.to_csv(args.out)
    summary = ", ".join(f"{n} {kind}" for kind, n in events.items() if n)
    print(
        f"track: {len(slots)} slots x {k} lobe(s), "
        f"{summary or 'no events'} -> {args.out}"
    )


# ---------------------------------------------------------------------------
# sim
# ---------------------------------------------------------------------------

_SIM_KEYS = {
    "scheme",
    "schemes",
    "ensemble",
    "trials",
    "seed",
    "duration_s",
    "slot_s",
    "num_beams",
    "base_snr_db",
    "outage_snr_db",
    "tx_elements",
    "rx_elements",
    "monitor_period_slots",
    "channel",
    "mobility",
    "blockers",
}


def _load_config_file(path: str) -> dict:
    suffix = _FsPath(path).suffix.lower()
    if suffix == ".json":
        with open(path) as fh:
            return json.load(fh)
    if suffix == ".toml":
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    raise _UsageError(f"--config must be a .toml or .json file, got {path!r}")


def _channel_from_config(section: dict, config_dir: _FsPath) -> PathSet:
    if "file" in section:
        return load_pathset(str(config_dir / section["file"]))
    cols = ("aod_deg", "aoa_deg", "gain_db", "phase_deg", "tof_ns")
    missing = [c for c in cols if c not in section]
    if missing:
        raise _UsageError(f"[channel] needs 'file' or columns {cols}; missing {missing}")
    aod, aoa, gain_db, phase_deg, tof_ns = (list(section[c]) for c in cols)
    if not len(aod) == len(aoa) == len(gain_db) == len(phase_deg) == len(tof_ns):
        raise _UsageError("[channel] column lengths differ")
    paths = [
        Path(
            a,
            b,
            10.0 ** (g / 20.0) * np.exp(1j * np.deg2rad(p)),
            t * 1e-9,
        )
        for a, b, g, p, t in zip(aod, aoa, gain_db, phase_deg, tof_ns)
    ]
    return PathSet(paths, carrier_hz=float(section.get("carrier_hz", 28e9)))


def _blocker_from_config(section: dict) -> linksim.Blocker:
    kwargs = {}
    if "start_s" in section:
        kwargs["start_s"] = float(section["start_s"])
    if "duration_s" in section:
        kwargs["duration_s"] = float(section["duration_s"])
    if "start_range_s" in section:
        kwargs["start_range_s"] = tuple(section["start_range_s"])
    if "duration_range_s" in section:
        kwargs["duration_range_s"] = tuple(section["duration_range_s"])
    if "paths" in section:
        kwargs["blocked_path_ids"] = tuple(int(i) for i in section["paths"])
    if "depth_db" in section:
        kwargs["depth_db"] = float(section["depth_db"])
    known = {"start_s", "duration_s", "start_range_s", "duration_range_s", "paths", "depth_db"}
    unknown = set(section) - known
    if unknown:
        raise _UsageError(f"unknown [[blockers]] keys: {sorted(unknown)}")
    return linksim.Blocker(**kwargs)


def _cmd_sim(args) -> None:
    with _config_phase():
        raw = _load_config_file(args.config)
        if not isinstance(raw, dict):
            raise _UsageError("config root must be a table/object")
        unknown = set(raw) - _SIM_KEYS
        if unknown:
            raise _UsageError(f"unknown config keys: {sorted(unknown)}")
        config_dir = _FsPath(args.config).resolve().parent

        schemes = raw.get("schemes", [raw.get("scheme", "multibeam")])
        if isinstance(schemes, str):
            schemes = [schemes]
        trials = int(args.trials if args.trials is not None else raw.get("trials", 1))
        seed = args.seed if args.seed is not None else raw.get("seed")
        if seed is None:
            raise _UsageError("sim draws randomness; set --seed or a 'seed' config key")
        seed = int(seed)

        if raw.get("ensemble", False):
            conflicting = {"channel", "mobility", "blockers"} & set(raw)
            if conflicting:
                raise _UsageError(
                    f"ensemble = true replaces {sorted(conflicting)}; remove them"
                )
            configs = None
        else:
            if "channel" not in raw:
                raise _UsageError("config needs a [channel] section (or ensemble = true)")
            ps = _channel_from_config(raw["channel"], config_dir)
            mobility = linksim.Mobility(**raw.get("mobility", {}))
            blockers = tuple(_blocker_from_config(b) for b in raw.get("blockers", []))
            scalar = {
                key: raw[key]
                for key in (
                    "duration_s",
                    "slot_s",
                    "num_beams",
                    "base_snr_db",
                    "outage_snr_db",
                    "tx_elements",
                    "rx_elements",
                    "monitor_period_slots",
                )
                if key in raw
            }
            configs = {
                scheme: linksim.ScenarioConfig(
                    ps,
                    scheme=scheme,
                    mobility=mobility,
                    blockers=blockers,
                    trials=trials,
                    seed=seed,
                    **scalar,
                )
                for scheme in schemes
            }
        if args.slots_out and len(schemes) != 1:
            raise _UsageError("--slots-out needs exactly one scheme")

    results = []
    for scheme in schemes:
        if configs is None:
            results.append(linksim.run_mobility_blockage_ensemble(scheme, trials, seed))
        else:
            results.append(linksim.run_scenario(configs[scheme]))
    linksim.write_aggregate_csv(args.out, results)
    if args.slots_out:
        linksim.write_slot_csv(args.slots_out, results[0].trials)
    for r in results:
        print(
            f"sim[{r.scheme}]: {len(r.trials)} trial(s), reliability "
            f"{r.reliability:.4f}, mean throughput {r.mean_throughput:.3f} "
            f"bits/s/Hz, product {r.throughput_reliability_product:.3f}"
        )
    print(f"sim: aggregates -> {args.out}")


# ---------------------------------------------------------------------------
# overhead
# ---------------------------------------------------------------------------


def _cmd_overhead(args) -> None:
    with _config_phase():
        beams = _parse_int_list(args.beams, "--beams")
        antennas = _parse_int_list(args.antennas, "--antennas")
        rows = []
        for k in beams:
            ms = linksim.probing_overhead_ms(
                "multibeam", num_beams=k, refinement_phases=args.phases
            )
            rows.append(("multibeam", k, "", f"{ms:.6g}"))
        for n in antennas:
            ms = linksim.probing_overhead_ms("nr", num_antennas=n)
            rows.append(("nr", "", n, f"{ms:.6g}"))
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scheme", "num_beams", "num_antennas", "overhead_ms"])
        writer.writerows(rows)
    print(f"overhead: {len(rows)} rows -> {args.out}")


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------


def _sweep_sensitivity(args) -> int:
    m = linksim.sensitivity_map(
        channel_delta_db=args.channel_delta_db,
        channel_phase_deg=args.channel_phase_deg,
    )
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["delta_db", "phase_deg", "gain_db"])
        for i, d in enumerate(m.delta_db):
            for j, p in enumerate(m.phase_deg):
                writer.writerow([f"{d:.6g}", f"{p:.6g}", f"{m.gain_db[i, j]:.6f}"])
    return m.delta_db.size * m.phase_deg.size


def _sweep_separation(args) -> int:
    geom = _geometry(args.elements, args.spacing_wl, args.carrier_ghz)
    geom_r, w_r = omni(geom.carrier_hz)
    if args.step_deg <= 0 or args.stop_deg <= args.start_deg:
        raise _UsageError("need --start-deg < --stop-deg and positive --step-deg")
    seps = np.arange(args.start_deg, args.stop_deg + args.step_deg / 2, args.step_deg)
    tof = 30e-9
    rows = []
    for sep in seps:
        ps = PathSet(
            [Path(0.0, 0.0, 1.0, tof), Path(float(sep), 0.0, 1.0, tof)],
            carrier_hz=geom.carrier_hz,
        )
        w, _ = multi_beam_weights(geom, matched_multibeam_spec(ps, 2))
        multi = received_snr_db(ps, geom, w, geom_r, w_r)
        single = received_snr_db(ps, geom, single_beam_weights(geom, 0.0), geom_r, w_r)
        rows.append((float(sep), multi - single))
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["separation_deg", "gain_db"])
        for sep, gain in rows:
            writer.writerow([f"{sep:.6g}", f"{gain:.6f}"])
    return len(rows)


def _cmd_sweep(args) -> None:
    with _config_phase():
        if args.figure == "sensitivity":
            n = _sweep_sensitivity(args)
        else:
            n = _sweep_separation(args)
    print(f"sweep[{args.figure}]: {n} rows -> {args.out}")


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _add_geometry_flags(p, tx_default=64, rx_default=8, rx=True):
    p.add_argument("--tx-elements", type=int, default=tx_default, help="transmit array size")
    if rx:
        p.add_argument("--rx-elements", type=int, default=rx_default, help="receive array size")
    p.add_argument("--spacing-wl", type=float, default=0.5, help="element pitch in wavelengths")
    p.add_argument("--carrier-ghz", type=float, default=28.0, help="carrier frequency in GHz")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="multibeam",
        description="Multi-lobe analog beamforming toolkit. " + _UNITS_NOTE,
    )
    sub = parser.add_subparsers(dest="subcommand", required=True, metavar="SUBCOMMAND")

    p = sub.add_parser(
        "pattern",
        help="synthesize a multi-lobe pattern and export its angular cut",
        description="Synthesize a multi-lobe pattern and write its gain cut "
        "as angle_deg,gain_db rows. " + _UNITS_NOTE,
    )
    p.add_argument("--angles", help="lobe directions, comma-separated degrees (e.g. 0,30)")
    p.add_argument("--delta-db", help="per-lobe relative amplitudes in dB (default all 0)")
    p.add_argument("--phases-deg", help="per-lobe relative phases in degrees (default all 0)")
    p.add_argument("--spec", help="JSON pattern file, alternative to --angles")
    p.add_argument("--elements", type=int, default=64, help="array size")
    p.add_argument("--spacing-wl", type=float, default=0.5, help="element pitch in wavelengths")
    p.add_argument("--carrier-ghz", type=float, default=28.0, help="carrier frequency in GHz")
    p.add_argument("--step-deg", type=float, default=0.1, help="cut resolution in degrees")
    p.add_argument("--save-spec", help="also save the pattern as JSON here")
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=_cmd_pattern)

    p = sub.add_parser(
        "train",
        help="acquire a channel skeleton by two-sided exhaustive scanning",
        description="Scan both link ends over the codebook, key detected "
        "paths by time of flight and write the acquired skeleton as a path "
        "CSV (aod_deg,aoa_deg,gain_db,phase_deg,tof_ns). " + _UNITS_NOTE,
    )
    p.add_argument("--channel", required=True, help="ground-truth path CSV")
    p.add_argument("--step-deg", type=float, default=1.0, help="codebook step in degrees")
    p.add_argument("--snr-db", type=float, default=30.0, help="per-probe SNR in dB")
    p.add_argument("--snapshots", type=int, default=4, help="averaged looks per probe")
    p.add_argument("--profiles-out", help="also write PREFIX_tx.csv / PREFIX_rx.csv scans")
    _add_geometry_flags(p)
    p.add_argument("--seed", type=int, help="RNG seed (required: probes are noisy)")
    p.add_argument("--out", required=True, help="output skeleton CSV path")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser(
        "probe",
        help="run one constructive-combining refinement cycle on a pattern",
        description="Probe every non-reference lobe of a pattern over a "
        "channel and write the refined pattern JSON (angles_deg, deltas_db, "
        "phases_deg). " + _UNITS_NOTE,
    )
    p.add_argument("--channel", required=True, help="ground-truth path CSV")
    p.add_argument("--spec", required=True, help="base pattern JSON")
    p.add_argument("--snr-db", type=float, default=20.0, help="per-probe SNR in dB")
    p.add_argument("--noiseless", action="store_true", help="probe without noise (no seed needed)")
    p.add_argument(
        "--estimator",
        choices=("normalized", "projection"),
        default="normalized",
        help="per-lobe ratio estimator",
    )
    _add_geometry_flags(p, rx=False)
    p.add_argument("--seed", type=int, help="RNG seed (required unless --noiseless)")
    p.add_argument("--out", required=True, help="refined pattern JSON path")
    p.set_defaults(func=_cmd_probe)

    p = sub.add_parser(
        "superres",
        help="split overlapping per-lobe amplitudes out of a measured CIR",
        description="Fit per-path complex amplitudes to a band-limited "
        "impulse response (CSV tap_index,re,im with an optional "
        "'# bandwidth_hz=' line) on a sub-tap time-of-flight grid; write "
        "beam_id,alpha_db,alpha_phase_deg. " + _UNITS_NOTE,
    )
    p.add_argument("--cir", required=True, help="input CIR CSV")
    p.add_argument("--tofs-ns", required=True, help="relative ToFs in ns, first 0 (e.g. 0,1.0)")
    p.add_argument("--ridge", type=float, help="ridge weight (default: conditioning-scaled)")
    p.add_argument("--no-jitter", action="store_true", help="skip the ToF jitter search")
    p.add_argument("--jitter-span-ns", type=float, help="jitter half-span in ns")
    p.add_argument("--jitter-step-ns", type=float, help="jitter step in ns")
    p.add_argument("--out", required=True, help="output amplitude CSV path")
    p.set_defaults(func=_cmd_superres)

    p = sub.add_parser(
        "track",
        help="replay a per-lobe power trace through the event monitor",
        description="Feed a long-format trace (slot,beam_id,power_db) "
        "through the per-lobe monitor: classify decay events as blockage, "
        "rotation or translation, estimate misalignment angles and write "
        "the monitor log CSV. " + _UNITS_NOTE,
    )
    p.add_argument("--trace", required=True, help="input trace CSV")
    p.add_argument("--tx-angles", help="lobe departure angles in degrees, comma-separated")
    p.add_argument("--rx-angles", help="lobe arrival angles in degrees, comma-separated")
    p.add_argument("--window", type=int, default=50, help="monitor window in samples")
    p.add_argument("--forgetting", type=float, default=0.9, help="smoothing forgetting factor")
    p.add_argument("--threshold-db", type=float, default=1.5, help="refinement trigger in dB")
    _add_geometry_flags(p)
    p.add_argument("--out", required=True, help="output log CSV path")
    p.set_defaults(func=_cmd_track)

    p = sub.add_parser(
        "sim",
        help="Monte Carlo link simulation of the maintenance schemes",
        description="Run seeded link trials from a TOML/JSON scenario config "
        "and write per-scheme aggregates (scheme,reliability,mean_tput,"
        "overhead_ms,trp_product). " + _UNITS_NOTE,
    )
    p.add_argument("--config", required=True, help="scenario config (.toml or .json)")
    p.add_argument("--trials", type=int, help="override the config trial count")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--slots-out", help="also write per-slot rows (single scheme only)")
    p.add_argument("--out", required=True, help="aggregate CSV path")
    p.set_defaults(func=_cmd_sim)

    p = sub.add_parser(
        "overhead",
        help="tabulate per-cycle probing cost versus lobe/antenna count",
        description="Write the per-maintenance-cycle airtime table "
        "(scheme,num_beams,num_antennas,overhead_ms) in milliseconds. "
        + _UNITS_NOTE,
    )
    p.add_argument("--beams", default="2,3,4", help="lobe counts for the probing scheme")
    p.add_argument("--antennas", default="8,64,256", help="array sizes for exhaustive scans")
    p.add_argument("--phases", type=int, default=3, help="refinement phases per cycle")
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=_cmd_overhead)

    p = sub.add_parser(
        "sweep",
        help="export analysis grids (combining sensitivity, lobe separation)",
        description="Export an analysis grid as CSV: 'sensitivity' sweeps "
        "the applied (phase, amplitude) of a second lobe against a two-path "
        "channel (delta_db,phase_deg,gain_db); 'separation' sweeps the "
        "angular spacing of an equal-split two-lobe pattern "
        "(separation_deg,gain_db). " + _UNITS_NOTE,
    )
    p.add_argument(
        "--figure",
        required=True,
        choices=("sensitivity", "separation"),
        help="which grid to export",
    )
    p.add_argument("--channel-delta-db", type=float, default=-3.0, help="secondary path level in dB")
    p.add_argument("--channel-phase-deg", type=float, default=-40.0, help="secondary path phase in degrees")
    p.add_argument("--elements", type=int, default=64, help="array size (separation sweep)")
    p.add_argument("--spacing-wl", type=float, default=0.5, help="element pitch in wavelengths")
    p.add_argument("--carrier-ghz", type=float, default=28.0, help="carrier frequency in GHz")
    p.add_argument("--start-deg", type=float, default=2.0, help="first separation in degrees")
    p.add_argument("--stop-deg", type=float, default=60.0, help="last separation in degrees")
    p.add_argument("--step-deg", type=float, default=1.0, help="separation step in degrees")
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=_cmd_sweep)

    return parser


def dispatch(argv=None) -> int:
    """Parse argv and run the mapped pipeline; return the exit status."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed usage/help
        code = exc.code
        return code if isinstance(code, int) else 2
    try:
        args.func(args)
        return 0
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
