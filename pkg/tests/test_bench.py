import numpy as np
import pytest
from scipy import sparse
from errors import ValidationError
from instances import ConstraintBlock, GeneratorConfig, IpInstance, Relation, Sense, generate_auction
from lpbox_admm import AdmmParams
from policy import HeuristicPolicy
from bench import (CSV_FIELDS, FlipHistogram, accuracy, bench_run, count_infeasible, delta_sweep, flip_count,
                   flip_histogram, format_speedup, objective_gap, speedup)


def small_instances(count=3):
    return [(f"auction_{k}", generate_auction(GeneratorConfig(n=30, items=8, seed=k))) for k in range(count)]


class TestMetrics:
    def test_accuracy(self):
        assert accuracy(10000, 9.1) == pytest.approx(99.909)
        assert accuracy(10, 0) == 100.0

    def test_speedup_display(self):
        assert format_speedup(speedup(11.4, 0.9)) == "12.6x"
        assert format_speedup(4.0) == "4.0x"

    def test_gap(self):
        gap = objective_gap(9665.8, 9691.6)
        assert abs(100 * gap - (-0.26)) <= 0.01
        assert objective_gap(10.0, 9.0, Sense.MAXIMIZE) == pytest.approx(0.1)
        assert objective_gap(10.0, 11.0, Sense.MINIMIZE) == pytest.approx(0.1)

    def test_gap_with_negative_baseline(self):
        assert objective_gap(-11.54, -12.54, Sense.MINIMIZE) == pytest.approx(-1.0 / 11.54)
        assert objective_gap(-11.54, -10.54, Sense.MINIMIZE) == pytest.approx(1.0 / 11.54)
        assert objective_gap(-10.0, -9.0, Sense.MAXIMIZE) == pytest.approx(-0.1)

    def test_undefined_values(self):
        with pytest.raises(ValidationError):
            objective_gap(0.0, 1.0)
        with pytest.raises(ValidationError):
            speedup(1.0, 0.0)

    def test_count_infeasible(self):
        C = sparse.csr_matrix([[1.0, 1.0, 0.0], [0.0, 1.0, 1.0], [1.0, 0.0, 1.0]])
        inst = IpInstance(3, [1.0, 1.0, 1.0], constraints=ConstraintBlock(C, np.ones(3), Relation.LE))
        assert count_infeasible(inst, [1, 1, 0]) == 1
        assert count_infeasible(inst, [1, 1, 1]) == 3
        assert count_infeasible(inst, [0, 0, 1]) == 0


class TestFlips:
    def test_examples(self):
        assert flip_count([0.6, 0.6, 0.6]) == 0
        assert flip_count([0.9, 0.3, 0.9]) == 2
        assert flip_count([0.5, 0.5, 0.9]) == 0
        assert flip_count([0.7]) == 0

    def test_constant_traces(self):
        histogram = flip_histogram(np.full((4, 50), 0.8))
        assert histogram.bins == [4]
        assert histogram.percentages == [100.0]
        assert histogram.zero_flip_fraction == 1.0

    def test_seven_flips_land_in_second_bin(self):
        traces = np.array([np.tile([0.9, 0.1], 4), np.full(8, 0.2)])
        histogram = flip_histogram(traces)
        assert histogram.bins == [1, 1]
        assert histogram.modal_bin == 0
        assert sum(histogram.bins) == histogram.total == 2

    def test_from_counts(self):
        histogram = FlipHistogram.from_counts([0, 3, 5, 12, 14], bin_width=5)
        assert histogram.bins == [2, 1, 2]
        assert histogram.zero_flip == 1
        rows = histogram.to_rows()
        assert [(r["bin_start"], r["bin_end"], r["count"]) for r in rows] == [(0, 5, 2), (5, 10, 1), (10, 15, 2)]

    def test_empty(self):
        assert FlipHistogram.from_counts([]).bins == []


class TestBenchRun:
    def test_rows(self):
        instances = small_instances()
        modes = {"plain": None, "heuristic": HeuristicPolicy()}
        report = bench_run(instances, modes, AdmmParams(T=300), beta=10, delta=0.9, timing=False)
        assert len(report.rows) == 6
        assert [row["mode"] for row in report.summary] == ["plain", "heuristic"]
        for row in report.rows:
            assert 0 <= row["sol_diff"] <= row["n"]
            assert row["accuracy"] == pytest.approx(100.0 * (row["n"] - row["sol_diff"]) / row["n"])
            assert row["time1"] is None and row["speedup"] is None
            if row["mode"] == "plain":
                assert row["sol_diff"] == 0 and row["fixed"] == 0 and row["iter_speedup"] == 1.0

    def test_written_files_are_reproducible(self, tmp_path):
        instances = small_instances(2)
        outputs = []
        for run in ("a", "b"):
            report = bench_run(instances, {"heuristic": HeuristicPolicy()}, AdmmParams(T=200), beta=10,
                               timing=False, flips=True)
            csv_path, json_path = report.write(tmp_path / run)
            outputs.append((csv_path.read_bytes(), json_path.read_bytes()))
        assert outputs[0] == outputs[1]
        header = outputs[0][0].decode().splitlines()[0]
        assert header == ",".join(CSV_FIELDS)

    def test_threads_keep_order(self):
        instances = small_instances(4)
        modes = {"heuristic": HeuristicPolicy()}
        serial = bench_run(instances, modes, AdmmParams(T=200), beta=10, timing=False)
        threaded = bench_run(instances, modes, AdmmParams(T=200), beta=10, timing=False, threads=4)
        assert serial.rows == threaded.rows


class TestDeltaSweep:
    def test_rows_per_delta(self):
        rows, trend = delta_sweep(small_instances(2), "heuristic", HeuristicPolicy(), [1.0, 0.5, 0.8],
                                  AdmmParams(T=200), beta=10)
        assert [row["delta"] for row in rows] == [0.5, 0.8, 1.0]
        assert rows[-1]["fixed"] == 0
        assert isinstance(trend, bool)
        assert trend == all(b["infeasible"] <= a["infeasible"] for a, b in zip(rows, rows[1:]))


@pytest.mark.slow
class TestFlipDiagnostic:
    def test_modal_bin_is_first(self):
        from lpbox_admm import solve
        counts = []
        for seed in range(5):
            inst = generate_auction(GeneratorConfig(n=500, items=100, seed=seed))
            counts.append(solve(inst, AdmmParams(seed=seed)).trace.flips)
        histogram = FlipHistogram.from_counts(np.concatenate(counts))
        assert histogram.modal_bin == 0
        assert histogram.percentages[0] >= 30.0
