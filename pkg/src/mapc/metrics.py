"""Normalized throughput, round-log reading and report files."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .protocol import outcome_from_record, score_round
from .types import RoundOutcome, SlotState

log = logging.getLogger(__name__)

SUMMARY_COLUMNS = ("scenario", "k", "policy", "ablations", "seed", "total_normalized", "collision_rate", "idle_rate")


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class ThroughputReport:
    per_ap_normalized: dict
    total_normalized: float
    rounds: int
    slots: int
    collision_rate: float
    idle_rate: float

    def to_dict(self) -> dict:
        return {
            "per_ap_normalized": {str(k): v for k, v in self.per_ap_normalized.items()},
            "total_normalized": self.total_normalized,
            "rounds": self.rounds,
            "slots": self.slots,
            "collision_rate": self.collision_rate,
            "idle_rate": self.idle_rate,
        }


def normalized_throughput(outcomes: Sequence[RoundOutcome]) -> ThroughputReport:
    """Successful slot-transmissions over the T*L data slots, per AP and summed."""
    if not outcomes:
        raise MetricsError("no outcomes")
    aps = tuple(outcomes[0].aps)
    L = outcomes[0].slots
    for o in outcomes:
        if tuple(o.aps) != aps or o.slots != L:
            raise MetricsError(f"shape inconsistency in round {o.round_index}")
    T = len(outcomes)
    denom = T * L
    succ = {ap: 0 for ap in aps}
    n_tx = n_coll = idle = 0
    for o in outcomes:
        rows = {ap: o.states(ap) for ap in aps}
        for ap, row in rows.items():
            for st in row:
                if st is SlotState.SUCCESS:
                    succ[ap] += 1
                    n_tx += 1
                elif st is SlotState.COLLISION:
                    n_coll += 1
                    n_tx += 1
        idle += sum(1 for s in range(L) if all(rows[ap][s] is SlotState.IDLE for ap in aps))
    per_ap = {ap: succ[ap] / denom for ap in aps}
    total = sum(succ.values()) / denom
    return ThroughputReport(per_ap, total, T, L, n_coll / n_tx if n_tx else 0.0, idle / denom)


def heat_grid(outcomes: Iterable[RoundOutcome]) -> list[dict]:
    """One cell per (round, AP, slot) with its state; plot-ready."""
    cells = []
    for o in outcomes:
        for ap in o.aps:
            for s, st in enumerate(o.states(ap)):
                cells.append({"round": o.round_index, "ap": ap, "slot": s + 1, "state": st.value})
    return cells


def mean_std(values: Sequence[float]) -> tuple[float, float]:
    """Sample mean and (population) standard deviation."""
    vals = list(values)
    if not vals:
        return float("nan"), float("nan")
    m = math.fsum(vals) / len(vals)
    return m, math.sqrt(math.fsum((v - m) ** 2 for v in vals) / len(vals))


# --------------------------------------------------------------------------
# round logs


@dataclass
class ParsedLog:
    path: str
    header: dict | None
    outcomes: list[RoundOutcome]
    summary: dict | None
    warnings: int = 0
    score_mismatches: list[int] = field(default_factory=list)


def read_round_log(path) -> ParsedLog:
    """Parse a JSONL round log; corrupt lines are skipped and counted."""
    header = summary = None
    outcomes = []
    warnings = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                kind = rec["type"]
                if kind == "header":
                    header = rec
                elif kind == "round":
                    outcomes.append(outcome_from_record(rec))
                elif kind == "summary":
                    summary = rec
                else:
                    raise ValueError(f"unknown record type {kind!r}")
            except (ValueError, KeyError, TypeError) as exc:
                warnings += 1
                log.warning("%s:%d skipped corrupt line (%s)", path, lineno, exc)
    parsed = ParsedLog(str(path), header, outcomes, summary, warnings)
    for o in outcomes:
        per, total = score_round(o)
        if total != o.group_score or any(per[i] != o.scores[ap] for i, ap in enumerate(o.aps)):
            parsed.score_mismatches.append(o.round_index)
    return parsed


@dataclass
class SummaryResult:
    rows: list[dict]
    warnings: int
    summary_csv: Path | None = None
    heatgrid: Path | None = None


def summary_row(header: dict, report: ThroughputReport) -> dict:
    cfg = header.get("run", {})
    return {
        "scenario": cfg.get("scenario", ""),
        "k": cfg.get("k", ""),
        "policy": cfg.get("policy", ""),
        "ablations": "+".join(cfg.get("ablations", [])) or "none",
        "seed": header.get("seed", ""),
        "total_normalized": report.total_normalized,
        "collision_rate": report.collision_rate,
        "idle_rate": report.idle_rate,
    }


def summarize_run(log_paths: Sequence, out_dir=None) -> SummaryResult:
    """Summary CSV (one row per log) plus the per-round heat grid as JSONL."""
    rows, cells, warnings = [], [], 0
    for p in sorted(map(str, log_paths)):
        parsed = read_round_log(p)
        warnings += parsed.warnings
        if not parsed.outcomes or parsed.header is None:
            warnings += 1
            log.warning("%s has no usable rounds", p)
            continue
        rows.append(summary_row(parsed.header, normalized_throughput(parsed.outcomes)))
        for c in heat_grid(parsed.outcomes):
            cells.append({"seed": parsed.header.get("seed"), **c})
    res = SummaryResult(rows, warnings)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        res.summary_csv = out / "summary.csv"
        write_csv(res.summary_csv, rows, SUMMARY_COLUMNS)
        res.heatgrid = out / "heatgrid.jsonl"
        with res.heatgrid.open("w", encoding="utf-8") as fh:
            for c in cells:
                fh.write(json.dumps(c) + "\n")
    return res


def write_csv(path, rows: Sequence[dict], columns: Sequence[str]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({c: r.get(c, "") for c in columns})
