from json import dumps, loads
from main import EXIT_IO, EXIT_OK, EXIT_VALIDATION, Application
from instances import read_instance


def ipfix(tmp_path, *argv):
    return Application(["--quiet", "--out-dir", str(tmp_path), *argv]).run()


class TestGenerate:
    def test_auction_seeds(self, tmp_path):
        assert ipfix(tmp_path, "--seed", "3", "generate", "--n", "20", "--items", "5", "--count", "2") == EXIT_OK
        first = read_instance(tmp_path / "auction_20_5_3.json")
        second = read_instance(tmp_path / "auction_20_5_4.json")
        assert first.n == second.n == 20
        assert first != second

    def test_grid(self, tmp_path):
        assert ipfix(tmp_path, "generate", "--kind", "grid", "--width", "4", "--height", "3") == EXIT_OK
        assert read_instance(tmp_path / "grid_4x3_0.json").n == 12

    def test_unknown_preset(self, tmp_path):
        assert ipfix(tmp_path, "generate", "--preset", "dataset_9") == EXIT_VALIDATION


class TestSolve:
    def test_deterministic_output(self, tmp_path):
        ipfix(tmp_path, "generate", "--n", "20", "--items", "5")
        instance = str(tmp_path / "auction_20_5_0.json")
        for out in ("a", "b"):
            code = ipfix(tmp_path, "solve", "--instance", instance, "--mode", "heuristic", "--beta", "10",
                         "--T", "300", "--deterministic", "--out", f"{out}.json", "--log", f"{out}_log.json")
            assert code == EXIT_OK
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
        assert (tmp_path / "a_log.json").read_bytes() == (tmp_path / "b_log.json").read_bytes()
        solution = loads((tmp_path / "a.json").read_text())
        assert set(solution) == {"x", "objective", "iterations", "converged", "wall_ms"}
        assert solution["wall_ms"] is None

    def test_exit_codes(self, tmp_path):
        ipfix(tmp_path, "generate", "--n", "10", "--items", "3")
        instance = str(tmp_path / "auction_10_3_0.json")
        assert ipfix(tmp_path, "solve", "--instance", instance, "--delta", "0.3") == EXIT_VALIDATION
        assert ipfix(tmp_path, "solve", "--instance", instance, "--mode", "learned") == EXIT_VALIDATION
        assert ipfix(tmp_path, "solve", "--instance", str(tmp_path / "missing.json")) == EXIT_IO

    def test_malformed_instance(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(dumps({"n": 2, "sense": "max", "b": [1, 1], "offset": "abc"}))
        assert ipfix(tmp_path, "solve", "--instance", str(path)) == EXIT_VALIDATION


class TestPipeline:
    def test_collect_train_solve_bench(self, tmp_path):
        data = tmp_path / "data"
        ipfix(data, "--seed", "0", "generate", "--n", "20", "--items", "5", "--count", "2")
        assert ipfix(tmp_path, "collect", str(data), "--beta", "10", "--gamma", "2", "--T", "100",
                     "--out", "dataset.bin") == EXIT_OK
        assert ipfix(tmp_path, "train", "--dataset", str(tmp_path / "dataset.bin"), "--epochs", "1",
                     "--out", "model.bin") == EXIT_OK
        model = str(tmp_path / "model.bin")
        instance = str(data / "auction_20_5_0.json")
        assert ipfix(tmp_path, "solve", "--instance", instance, "--mode", "learned", "--model", model,
                     "--T", "200") == EXIT_OK
        for stem in ("first", "second"):
            assert ipfix(tmp_path, "bench", str(data), "--modes", "plain,heuristic,learned", "--model", model,
                         "--beta", "10", "--T", "200", "--deterministic", "--stem", stem) == EXIT_OK
        assert (tmp_path / "first.csv").read_bytes() == (tmp_path / "second.csv").read_bytes()
        assert len((tmp_path / "first.csv").read_text().splitlines()) == 1 + 2 * 3 + 3

    def test_flipstats(self, tmp_path):
        ipfix(tmp_path, "generate", "--n", "20", "--items", "5")
        assert ipfix(tmp_path, "flipstats", str(tmp_path / "auction_20_5_0.json"), "--T", "200") == EXIT_OK
        lines = (tmp_path / "flips.csv").read_text().splitlines()
        assert lines[0] == "bin_start,bin_end,count,percent"
        assert sum(int(line.split(",")[2]) for line in lines[1:]) == 20
