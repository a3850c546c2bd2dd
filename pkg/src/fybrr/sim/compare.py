"""Run every scheme on shared seeds and summarise the comparison."""

from __future__ import annotations

import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .config import SCHEMES, SimConfig, dump_config
from .engine import SimResult, run_simulation
from .io import csv_text, write_atomic, write_series, write_snapshots, write_summary, write_trace

TABLE_HEADER = ("scheme", "mean_latency_ms", "mean_jitter_ms", "mean_pdr", "height", "utilization")


@dataclass
class RunSummary:
    seed: int
    scheme: str
    latency: float  # leaf median of per-node mean latency, ms
    jitter: float  # leaf median of per-node mean jitter, ms
    pdr: float
    height: int
    utilization: float

    def row(self) -> tuple:
        return (self.seed, self.scheme, self.latency, self.jitter, self.pdr, self.height, self.utilization)


@dataclass
class Comparison:
    runs: list[RunSummary]
    seeds: list[int]
    ordering: dict[str, int] = field(default_factory=dict)  # criterion -> seeds satisfying it

    def by(self, seed: int, scheme: str) -> RunSummary:
        return next(r for r in self.runs if r.seed == seed and r.scheme == scheme)

    @property
    def height_verdict(self) -> bool:
        return self.ordering.get("height", 0) == len(self.seeds)

    def table(self) -> list[tuple]:
        out = []
        for scheme in SCHEMES:
            rs = [r for r in self.runs if r.scheme == scheme]
            out.append((
                scheme,
                statistics.fmean(r.latency for r in rs),
                statistics.fmean(r.jitter for r in rs),
                statistics.fmean(r.pdr for r in rs),
                statistics.fmean(r.height for r in rs),
                statistics.fmean(r.utilization for r in rs),
            ))
        return out

    def verdict_text(self) -> str:
        n = len(self.seeds)
        lines = [f"height_ordering: {'PASS' if self.height_verdict else 'FAIL'} ({self.ordering['height']}/{n})"]
        for key, label in (("latency", "quad < fybrr < binary"), ("jitter", "fybrr < binary < quad"),
                           ("pdr", "quad < fybrr <= binary")):
            lines.append(f"{key}_ordering ({label}): {self.ordering[key]}/{n}")
        return "\n".join(lines) + "\n"


def summarize(result: SimResult) -> RunSummary:
    rep = result.report
    return RunSummary(
        seed=result.config.seed,
        scheme=result.config.scheme,
        latency=rep.leaf_median_latency,
        jitter=rep.leaf_median_jitter,
        pdr=rep.mean_pdr,
        height=rep.height,
        utilization=rep.utilization,
    )


def write_run(result: SimResult, directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    write_trace(directory / "trace.csv", result.trace)
    write_series(directory / "series.csv", result.report.series)
    write_snapshots(directory / "snapshots", result.snapshots)


def _job(args) -> RunSummary:
    cfg, out_dir = args
    result = run_simulation(cfg)
    if out_dir is not None:
        write_run(result, Path(out_dir) / f"seed{cfg.seed}" / cfg.scheme.lower())
    return summarize(result)


def orderings(runs: Sequence[RunSummary], seeds: Sequence[int]) -> dict[str, int]:
    idx = {(r.seed, r.scheme): r for r in runs}
    counts = {"height": 0, "latency": 0, "jitter": 0, "pdr": 0}
    for s in seeds:
        f, b, q = idx[s, "FYBRR"], idx[s, "BINARY"], idx[s, "QUAD"]
        counts["height"] += q.height <= f.height <= b.height
        counts["latency"] += q.latency < f.latency < b.latency
        counts["jitter"] += f.jitter < b.jitter < q.jitter
        counts["pdr"] += q.pdr < f.pdr <= b.pdr
    return counts


def compare(base: SimConfig, seeds: Sequence[int], out_dir: Optional[str | Path] = None, jobs: int = 1) -> Comparison:
    """Every scheme on every seed.  With ``out_dir``, per-run CSVs and summaries are written."""
    seeds = list(seeds)
    work = [(base.replace(seed=s, scheme=sch), None if out_dir is None else str(out_dir)) for s in seeds for sch in SCHEMES]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            runs = list(pool.map(_job, work))
    else:
        runs = [_job(w) for w in work]
    cmp = Comparison(runs=runs, seeds=seeds, ordering=orderings(runs, seeds))
    if out_dir is not None:
        out = Path(out_dir)
        write_summary(out / "summary.csv", (r.row() for r in runs))
        write_atomic(out / "table.csv", csv_text(TABLE_HEADER, ([repr(v) if isinstance(v, float) else v for v in row] for row in cmp.table())))
        write_atomic(out / "verdict.txt", cmp.verdict_text())
        write_atomic(out / "config.yaml", dump_config(base))
    return cmp
