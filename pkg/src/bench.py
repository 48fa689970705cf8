"""Evaluation metrics, flip diagnostics and the benchmark harness"""
import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from json import dump
from math import floor
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple
import numpy as np
from tqdm import tqdm
from errors import ValidationError
from instances import IpInstance, Sense
from lpbox_admm import AdmmParams, Solution, solve
from earlyfix import Policy, RunConfig, run

logger = logging.getLogger(__name__)

CSV_FIELDS = ["instance", "mode", "n", "m", "obj1", "obj2", "gap", "time1", "time2", "speedup",
              "iters1", "iters2", "iter_speedup", "sol_diff", "accuracy", "infeasible", "termination", "fixed"]
SWEEP_FIELDS = ["delta", "mode", "instances", "infeasible", "gap", "iter_speedup", "accuracy", "fixed"]
FLIP_FIELDS = ["bin_start", "bin_end", "count", "percent"]


def flip_count(trace) -> int:
    """Adjacent pairs strictly on opposite sides of 0.5; a value of exactly 0.5 never flips"""
    centred = np.asarray(trace, dtype=np.float64) - 0.5
    return int(np.count_nonzero(centred[:-1] * centred[1:] < 0))


class FlipHistogram:
    """Flip counts binned as [k*w, (k+1)*w)"""
    def __init__(self, bin_width: int, bins: List[int], total: int, zero_flip: int):
        self.bin_width = bin_width
        self.bins = bins
        self.total = total
        self.zero_flip = zero_flip
        return

    @classmethod
    def from_counts(cls, flips, bin_width: int = 5) -> "FlipHistogram":
        if bin_width < 1:
            raise ValidationError(f"bin width must be positive, got {bin_width}")
        flips = np.asarray(flips, dtype=np.int64)
        if flips.size == 0:
            return cls(bin_width, [], 0, 0)
        bins = np.bincount(flips // bin_width)
        return cls(bin_width, [int(c) for c in bins], int(flips.size), int(np.count_nonzero(flips == 0)))

    @property
    def percentages(self) -> List[float]:
        return [100.0 * c / self.total for c in self.bins] if self.total else []

    @property
    def zero_flip_fraction(self) -> float:
        return self.zero_flip / self.total if self.total else 0.0

    @property
    def modal_bin(self) -> int:
        return int(np.argmax(self.bins)) if self.bins else 0

    def to_rows(self) -> List[Dict[str, Any]]:
        return [{"bin_start": k * self.bin_width, "bin_end": (k + 1) * self.bin_width, "count": count,
                 "percent": _fmt(pct)} for k, (count, pct) in enumerate(zip(self.bins, self.percentages))]


def flip_histogram(traces, bin_width: int = 5) -> FlipHistogram:
    """Histogram over variables of full-run traces (one row per variable)"""
    return FlipHistogram.from_counts([flip_count(row) for row in np.atleast_2d(traces)], bin_width)


def objective_gap(obj1: float, obj2: float, sense: Sense = Sense.MAXIMIZE) -> float:
    """Gap of obj2 (early fixing) relative to |obj1| (baseline); negative means obj2 is better"""
    if obj1 == 0:
        raise ValidationError("objective gap undefined for a zero baseline objective")
    if Sense(sense) is Sense.MAXIMIZE:
        return (obj1 - obj2) / abs(obj1)
    return (obj2 - obj1) / abs(obj1)


def accuracy(n: int, sol_diff: float) -> float:
    """Percentage of variables agreeing with the baseline"""
    if n < 1:
        raise ValidationError(f"n must be positive, got {n}")
    return 100.0 * (n - sol_diff) / n


def speedup(time1: float, time2: float) -> float:
    if time2 <= 0:
        raise ValidationError(f"speedup needs a positive accelerated time, got {time2}")
    return time1 / time2


def format_speedup(ratio: float) -> str:
    """Ratio truncated to one decimal, e.g. 12.67 -> '12.6x'"""
    return f"{floor(ratio * 10 + 1e-9) / 10:.1f}x"


def count_infeasible(inst: IpInstance, x) -> int:
    return inst.constraint_violations(x)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return format(value, ".10g")
    return str(value)


class Metrics:
    """One instance under one mode compared with the plain solver of the same seed"""
    def __init__(self, inst: IpInstance, baseline: Solution, accelerated: Solution,
                 termination: str = "", fixed: int = 0):
        self.n = inst.n
        self.m = inst.m
        self.obj1 = baseline.objective
        self.obj2 = accelerated.objective
        self.gap = objective_gap(self.obj1, self.obj2, inst.sense) if self.obj1 != 0 else None
        self.time1 = baseline.wall_time
        self.time2 = accelerated.wall_time
        self.speedup = speedup(self.time1, self.time2) if self.time2 > 0 else None
        self.iters1 = baseline.iterations
        self.iters2 = accelerated.iterations
        self.iter_speedup = self.iters1 / self.iters2 if self.iters2 > 0 else None
        self.sol_diff = int(np.count_nonzero(baseline.x_binary != accelerated.x_binary))
        self.accuracy = accuracy(self.n, self.sol_diff)
        self.infeasible = count_infeasible(inst, accelerated.x_binary)
        self.termination = termination
        self.fixed = fixed
        return

    def to_row(self, instance: str, mode: str, timing: bool = True) -> Dict[str, Any]:
        row = {"instance": instance, "mode": mode, "n": self.n, "m": self.m, "obj1": self.obj1, "obj2": self.obj2,
               "gap": self.gap, "time1": self.time1, "time2": self.time2, "speedup": self.speedup,
               "iters1": self.iters1, "iters2": self.iters2, "iter_speedup": self.iter_speedup,
               "sol_diff": self.sol_diff, "accuracy": self.accuracy, "infeasible": self.infeasible,
               "termination": self.termination, "fixed": self.fixed}
        if not timing:
            row.update(time1=None, time2=None, speedup=None)
        return row


def _mean_row(rows: List[Dict[str, Any]], mode: str) -> Dict[str, Any]:
    summary = {"instance": "mean", "mode": mode, "termination": ""}
    for field in CSV_FIELDS[2:]:
        values = [r[field] for r in rows if isinstance(r.get(field), (int, float)) and not isinstance(r[field], bool)]
        if field != "termination":
            summary[field] = float(np.mean(values)) if values else None
    return summary


class BenchReport:
    def __init__(self, rows: List[Dict[str, Any]], summary: List[Dict[str, Any]], provenance: Dict[str, Any]):
        self.rows = rows
        self.summary = summary
        self.provenance = provenance
        self.sweep: List[Dict[str, Any]] = []
        self.flips: Dict[str, List[Dict[str, Any]]] = {}
        return

    def mean(self, mode: str) -> Dict[str, Any]:
        for row in self.summary:
            if row["mode"] == mode:
                return row
        raise KeyError(mode)

    def write(self, out_dir, stem: str = "bench") -> Tuple[Path, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        csv_path = out_dir / f"{stem}.csv"
        write_csv(csv_path, CSV_FIELDS, self.rows + self.summary)
        json_path = out_dir / f"{stem}.json"
        with open(json_path, "w") as f:
            dump({"config": self.provenance, "rows": self.rows, "summary": self.summary,
                  "delta_sweep": self.sweep, "flip_histograms": self.flips}, f, indent=2, sort_keys=True)
        if self.sweep:
            write_csv(out_dir / f"{stem}_delta_sweep.csv", SWEEP_FIELDS, self.sweep)
        return csv_path, json_path


def write_csv(path, fields: Sequence[str], rows: Sequence[Dict[str, Any]]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(fields), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(row.get(k)) for k in fields})
    return


def _map(function, items, threads: int, desc: str, progress: bool) -> list:
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        return list(tqdm(pool.map(function, items), total=len(items), desc=desc, disable=not progress))


def bench_run(instances: Sequence[Tuple[str, IpInstance]], modes: Dict[str, Optional[Policy]],
              admm_params: AdmmParams, beta: int = 100, delta: float = 0.9, T_prime: Optional[int] = None,
              timing: bool = True, flips: bool = False, threads: int = 1, progress: bool = False) -> BenchReport:
    """
    Compare every mode against the plain solver on every instance

    Args:
        instances: (name, instance) pairs
        modes: mode name -> policy (None for plain)
        admm_params: shared solver parameters and seed
        beta, delta, T_prime: early fixing configuration (T_prime defaults to admm_params.T)
        timing: False blanks wall-clock columns so reruns are byte-identical
        flips: attach the flip histogram of every plain run
        threads: instances solved in parallel
    """
    T_prime = admm_params.T if T_prime is None else T_prime
    configs = {mode: RunConfig(beta, delta, T_prime, policy) for mode, policy in modes.items()}

    def evaluate(item):
        name, inst = item
        baseline = solve(inst, admm_params, beta=beta)
        results = {}
        for mode, cfg in configs.items():
            if cfg.policy is None:
                results[mode] = Metrics(inst, baseline, baseline, "converged" if baseline.converged else "budget")
                continue
            solution, log = run(inst, cfg, admm_params)
            results[mode] = Metrics(inst, baseline, solution, log.termination.value, log.total_fixed)
        histogram = FlipHistogram.from_counts(baseline.trace.flips) if flips else None
        return name, results, histogram

    outcomes = _map(evaluate, list(instances), threads, "bench", progress)
    rows = []
    report_flips = {}
    for name, results, histogram in outcomes:
        for mode, metrics in results.items():
            rows.append(metrics.to_row(name, mode, timing))
        if histogram is not None:
            report_flips[name] = histogram.to_rows()
    summary = [_mean_row([r for r in rows if r["mode"] == mode], mode) for mode in configs]
    provenance = {"admm": admm_params.to_dict(), "beta": beta, "delta": delta, "T_prime": T_prime,
                  "modes": list(configs), "instances": [name for name, _ in instances], "timing": timing}
    report = BenchReport(rows, summary, provenance)
    report.flips = report_flips
    return report


def delta_sweep(instances: Sequence[Tuple[str, IpInstance]], mode: str, policy: Policy, deltas: Sequence[float],
                admm_params: AdmmParams, beta: int = 100, threads: int = 1,
                progress: bool = False) -> Tuple[List[Dict[str, Any]], bool]:
    """
    Mean infeasible-constraint count and quality per fixing threshold

    Returns:
        One row per delta and whether the infeasible count is non-increasing in delta
        (reported, not enforced).
    """
    rows = []
    for delta in sorted(deltas):
        report = bench_run(instances, {mode: policy}, admm_params, beta, delta,
                           timing=False, threads=threads, progress=progress)
        mean = report.mean(mode)
        rows.append({"delta": delta, "mode": mode, "instances": len(instances), "infeasible": mean["infeasible"],
                     "gap": mean["gap"], "iter_speedup": mean["iter_speedup"], "accuracy": mean["accuracy"],
                     "fixed": mean["fixed"]})
    infeasible = [r["infeasible"] for r in rows]
    trend = all(later <= earlier for earlier, later in zip(infeasible, infeasible[1:]))
    logger.info("delta sweep (%s): infeasible %s, non-increasing=%s", mode, infeasible, trend)
    return rows, trend
