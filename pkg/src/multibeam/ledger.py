"""Air-time accounting for every reference-signal transmission.

Each probe a procedure fires is one row: the slot it occupied, the probe
type, its duration, and the beam it measured.  Procedures receive a ledger
and log into it; the link simulator reads the total back as overhead.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path as FilePath

SSB_MS = 0.5  # one synchronization-signal block
CSIRS_MS = 0.125  # one aperiodic CSI reference signal
SS_BURST_MS = 5.0  # one full synchronization burst window
SS_BURST_PERIOD_MS = 20.0  # burst repetition period

_PROBE_TYPES = ("SSB", "CSIRS")


@dataclass(frozen=True)
class ProbeRecord:
    slot: int
    probe_type: str
    duration_ms: float
    beam_id: int


@dataclass
class ProbeLedger:
    """Append-only log of probe transmissions."""

    records: list[ProbeRecord] = field(default_factory=list)

    def log(self, slot: int, probe_type: str, duration_ms: float, beam_id: int) -> None:
        if probe_type not in _PROBE_TYPES:
            raise ValueError(f"probe_type must be one of {_PROBE_TYPES}")
        if duration_ms <= 0:
            raise ValueError("duration_ms must be positive")
        self.records.append(ProbeRecord(int(slot), probe_type, float(duration_ms), int(beam_id)))

    def log_ssb(self, slot: int, beam_id: int, duration_ms: float = SSB_MS) -> None:
        self.log(slot, "SSB", duration_ms, beam_id)

    def log_csirs(self, slot: int, beam_id: int, duration_ms: float = CSIRS_MS) -> None:
        self.log(slot, "CSIRS", duration_ms, beam_id)

    def __len__(self) -> int:
        return len(self.records)

    def count(self, probe_type: str | None = None) -> int:
        if probe_type is None:
            return len(self.records)
        return sum(1 for r in self.records if r.probe_type == probe_type)

    def total_ms(self, probe_type: str | None = None) -> float:
        return sum(
            r.duration_ms
            for r in self.records
            if probe_type is None or r.probe_type == probe_type
        )

    def to_csv(self, path) -> None:
        with open(FilePath(path), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["slot", "probe_type", "duration_ms", "beam_id"])
            for r in self.records:
                writer.writerow([r.slot, r.probe_type, f"{r.duration_ms:.6g}", r.beam_id])
