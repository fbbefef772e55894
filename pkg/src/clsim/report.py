"""Record/summary serialization and figure-ready sweep aggregates.

CSV files use RFC-4180 quoting via the stdlib csv module. Floats are written
with repr so re-parsing reproduces the exact values, which keeps summaries
recomputable from the record files byte-for-byte.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .netmodel import SuboptimalityRecord

RECORD_COLUMNS = [
    "flow_id",
    "controller",
    "period_index",
    "o_measured",
    "o_optimal",
    "d_subopt",
    "path_len",
    "rejected",
    "divergent",
]


def nearest_rank(values: Sequence[float], percentile: float) -> float:
    """Nearest-rank percentile: value at index ceil(p/100 * N) of sorted data."""
    if not values:
        return math.nan
    if not 0 < percentile <= 100:
        raise ValueError("percentile must be in (0, 100]")
    ordered = sorted(values)
    rank = math.ceil(percentile / 100 * len(ordered))
    return ordered[max(rank, 1) - 1]


def write_records_csv(path: str | Path, records: Iterable[SuboptimalityRecord]) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(RECORD_COLUMNS)
        for r in records:
            writer.writerow(
                [
                    r.flow_id,
                    r.controller,
                    r.period_index,
                    r.o_measured,
                    r.o_optimal,
                    repr(r.d_subopt),
                    r.path_len,
                    int(r.rejected),
                    int(r.divergent),
                ]
            )


def read_records_csv(path: str | Path) -> list[SuboptimalityRecord]:
    records = []
    with open(path, newline="") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames != RECORD_COLUMNS:
            raise ValueError(f"unexpected record columns: {reader.fieldnames}")
        for row in reader:
            records.append(
                SuboptimalityRecord(
                    flow_id=int(row["flow_id"]),
                    controller=int(row["controller"]),
                    period_index=int(row["period_index"]),
                    o_measured=int(row["o_measured"]),
                    o_optimal=int(row["o_optimal"]),
                    d_subopt=float(row["d_subopt"]),
                    path_len=int(row["path_len"]),
                    rejected=bool(int(row["rejected"])),
                    divergent=bool(int(row["divergent"])),
                )
            )
    return records


def suboptimality_stats(records: Sequence[SuboptimalityRecord]) -> dict:
    """Statistics over scored records (admitted, non-divergent) only."""
    ineff = [1.0 - r.d_subopt for r in records if not r.rejected and not r.divergent]
    scored = len(ineff)
    if scored == 0:
        return {
            "records_scored": 0,
            "mean_subopt": 0.0,
            "p50_subopt": 0.0,
            "p95_subopt": 0.0,
            "p99_subopt": 0.0,
            "fraction_suboptimal": 0.0,
        }
    return {
        "records_scored": scored,
        "mean_subopt": sum(ineff) / scored,
        "p50_subopt": nearest_rank(ineff, 50),
        "p95_subopt": nearest_rank(ineff, 95),
        "p99_subopt": nearest_rank(ineff, 99),
        "fraction_suboptimal": sum(1 for x in ineff if x > 0) / scored,
    }


def write_summary_json(path: str | Path, summary: Mapping) -> None:
    with open(path, "w") as handle:
        json.dump(dict(summary), handle, indent=2, sort_keys=True)
        handle.write("\n")


# -- figure-ready sweep aggregates -------------------------------------------
#
# fig3.csv: rows cl=1..11, one column per grid size; mean (1-D) in percent.
# fig4.csv: rows cl=1..11, one column per traffic model; mean (1-D) in percent.
# fig5.csv: rows cl=1..11: pooled fraction of suboptimal flows (percent) and
#           its cumulative distribution over the CL axis.
# fig6.csv: rows cl, one column per cluster size; mean (1-D) in percent.


def _series_table(cells: Sequence[dict], series_key, series_fmt) -> tuple[list, dict]:
    levels = sorted({cell["config"]["cl"] for cell in cells})
    series = sorted({series_key(cell) for cell in cells})
    table: dict[tuple, float] = {}
    for cell in cells:
        key = (cell["config"]["cl"], series_key(cell))
        table[key] = cell["summary"]["mean_subopt"] * 100.0
    header = ["cl"] + [series_fmt(s) for s in series]
    rows = [header]
    for cl in levels:
        rows.append([cl] + [repr(table.get((cl, s), math.nan)) for s in series])
    return rows, {"levels": levels, "series": series}


def write_fig3_csv(path: str | Path, cells: Sequence[dict]) -> None:
    rows, _ = _series_table(
        cells,
        series_key=lambda cell: cell["config"]["grid_size"],
        series_fmt=lambda g: f"grid_{g}x{g}",
    )
    _write_rows(path, rows)


def write_fig4_csv(path: str | Path, cells: Sequence[dict]) -> None:
    rows, _ = _series_table(
        cells,
        series_key=lambda cell: tuple(cell["config"]["traffic_range"]),
        series_fmt=lambda t: f"traffic_{t[0]}_{t[1]}",
    )
    _write_rows(path, rows)


def write_fig5_csv(path: str | Path, cells: Sequence[dict]) -> None:
    levels = sorted({cell["config"]["cl"] for cell in cells})
    subopt_count: dict[int, int] = {cl: 0 for cl in levels}
    scored_count: dict[int, int] = {cl: 0 for cl in levels}
    for cell in cells:
        cl = cell["config"]["cl"]
        summary = cell["summary"]
        scored = summary["records_scored"]
        scored_count[cl] += scored
        subopt_count[cl] += round(summary["fraction_suboptimal"] * scored)
    total_subopt = sum(subopt_count.values())
    rows = [["cl", "fraction_suboptimal_pct", "cdf"]]
    running = 0
    for cl in levels:
        fraction = subopt_count[cl] / scored_count[cl] * 100.0 if scored_count[cl] else 0.0
        running += subopt_count[cl]
        cdf = running / total_subopt if total_subopt else 0.0
        rows.append([cl, repr(fraction), repr(cdf)])
    _write_rows(path, rows)


def write_fig6_csv(path: str | Path, cells: Sequence[dict]) -> None:
    rows, _ = _series_table(
        cells,
        series_key=lambda cell: cell["config"]["n_controllers"],
        series_fmt=lambda n: f"n_{n}",
    )
    _write_rows(path, rows)


def _write_rows(path: str | Path, rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as handle:
        csv.writer(handle).writerows(rows)
