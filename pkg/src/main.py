import argparse
import logging
import sys
from json import dump
from pathlib import Path
from typing import List, Optional, Sequence, Tuple
import numpy as np
from errors import IpfixError, ValidationError
from settings import Settings
from instances import GeneratorConfig, IpInstance, generate_auction, generate_grid_mrf, read_instance, write_instance
from lpbox_admm import AdmmParams, solve
from policy import PolicyConfig, save_policy
from training import Dataset, TrainConfig, collect_dataset, train
from earlyfix import MODES, RunConfig, make_policy, run
from bench import FLIP_FIELDS, FlipHistogram, bench_run, delta_sweep, format_speedup, write_csv

logger = logging.getLogger("ipfix")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_VALIDATION = 2
EXIT_IO = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ipfix", description="l2-box ADMM for binary integer programs with early fixing")
    parser.add_argument("--seed", type=int, default=None, help="seed for generation, solver initialisation and training")
    parser.add_argument("--threads", type=int, default=1, help="instances processed in parallel")
    parser.add_argument("--out-dir", type=Path, default=Path("."), help="directory for every output file")
    parser.add_argument("--settings", type=Path, default=None, help="settings JSON (default: src/settings.json)")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("--verbose", action="store_true")
    verbosity.add_argument("--quiet", action="store_true")
    commands = parser.add_subparsers(dest="command", required=True)

    generate = commands.add_parser("generate", help="write random instance files")
    generate.add_argument("--kind", choices=("auction", "grid"), default="auction")
    generate.add_argument("--n", type=int, default=None, help="bids of an auction instance")
    generate.add_argument("--items", type=int, default=None)
    generate.add_argument("--density", type=float, default=None)
    generate.add_argument("--xi", type=float, default=None)
    generate.add_argument("--width", type=int, default=None, help="grid width")
    generate.add_argument("--height", type=int, default=None, help="grid height")
    generate.add_argument("--preset", default=None, help="size preset from the settings (dataset_1, dataset_2, grid)")
    generate.add_argument("--count", type=int, default=1, help="instances per size, seeds seed..seed+count-1")

    solve_cmd = commands.add_parser("solve", help="solve one instance")
    solve_cmd.add_argument("--instance", type=Path, required=True)
    solve_cmd.add_argument("--mode", choices=MODES, default="plain")
    solve_cmd.add_argument("--model", type=Path, default=None)
    solve_cmd.add_argument("--beta", type=int, default=None)
    solve_cmd.add_argument("--delta", type=float, default=None)
    solve_cmd.add_argument("--T", type=int, default=None, help="iteration budget")
    solve_cmd.add_argument("--params", type=Path, default=None, help="JSON file of ADMM parameters")
    solve_cmd.add_argument("--out", type=Path, default=Path("solution.json"))
    solve_cmd.add_argument("--log", type=Path, default=None, help="write the episode log as JSON")
    solve_cmd.add_argument("--deterministic", action="store_true", help="omit wall-clock times")

    collect = commands.add_parser("collect", help="harvest behaviour cloning samples from plain runs")
    collect.add_argument("instances", nargs="+", type=Path, help="instance files or directories")
    collect.add_argument("--beta", type=int, default=None)
    collect.add_argument("--gamma", type=int, default=None)
    collect.add_argument("--T", type=int, default=None)
    collect.add_argument("--params", type=Path, default=None)
    collect.add_argument("--mrf", action="store_true", help="use the grid MRF defaults")
    collect.add_argument("--out", type=Path, default=Path("dataset.bin"))

    train_cmd = commands.add_parser("train", help="train the fixing policy")
    train_cmd.add_argument("--dataset", type=Path, required=True)
    train_cmd.add_argument("--epochs", type=int, default=None)
    train_cmd.add_argument("--lr", type=float, default=None)
    train_cmd.add_argument("--batch-size", type=int, default=None)
    train_cmd.add_argument("--no-attention", action="store_true", help="train the ablation without attention")
    train_cmd.add_argument("--unweighted", action="store_true", help="unit sample weights")
    train_cmd.add_argument("--mrf", action="store_true", help="use the grid MRF defaults")
    train_cmd.add_argument("--out", type=Path, default=Path("model.bin"))

    bench = commands.add_parser("bench", help="compare modes against plain ADMM")
    bench.add_argument("instances", nargs="+", type=Path, help="instance files or directories")
    bench.add_argument("--modes", default="plain,heuristic", help="comma separated subset of " + ",".join(MODES))
    bench.add_argument("--model", type=Path, default=None)
    bench.add_argument("--beta", type=int, default=None)
    bench.add_argument("--delta", type=float, default=None)
    bench.add_argument("--T", type=int, default=None)
    bench.add_argument("--params", type=Path, default=None)
    bench.add_argument("--sweep", action="store_true", help="also sweep delta over the configured values")
    bench.add_argument("--flips", action="store_true", help="attach flip histograms of the plain runs")
    bench.add_argument("--deterministic", action="store_true", help="blank wall-clock columns")
    bench.add_argument("--stem", default="bench", help="output file name stem")

    flipstats = commands.add_parser("flipstats", help="flip histogram of plain ADMM runs")
    flipstats.add_argument("instances", nargs="+", type=Path, help="instance files or directories")
    flipstats.add_argument("--bin-width", type=int, default=None)
    flipstats.add_argument("--T", type=int, default=None)
    flipstats.add_argument("--params", type=Path, default=None)
    flipstats.add_argument("--out", type=Path, default=Path("flips.csv"))
    return parser


def instance_paths(targets: Sequence[Path]) -> List[Path]:
    """Files as given, directories expanded to their sorted *.json files"""
    paths = []
    for target in targets:
        if target.is_dir():
            paths.extend(sorted(target.glob("*.json")))
        else:
            paths.append(target)
    if not paths:
        raise ValidationError("no instance files found")
    return paths


def load_instances(targets: Sequence[Path]) -> List[Tuple[str, IpInstance]]:
    return [(path.stem, read_instance(path)) for path in instance_paths(targets)]


class Application():
    def __init__(self, argv: Optional[Sequence[str]] = None):
        self.args = build_parser().parse_args(argv)
        self._configure_logging()
        self.settings = Settings(self.args.settings)
        self.out_dir = self.args.out_dir
        return

    def _configure_logging(self) -> None:
        level = logging.INFO
        if self.args.verbose:
            level = logging.DEBUG
        elif self.args.quiet:
            level = logging.WARNING
        logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
        return

    @property
    def progress(self) -> bool:
        return not self.args.quiet

    def run(self) -> int:
        try:
            match self.args.command:
                case "generate":
                    self.generate()
                case "solve":
                    self.solve()
                case "collect":
                    self.collect()
                case "train":
                    self.train()
                case "bench":
                    self.bench()
                case "flipstats":
                    self.flipstats()
        except ValidationError as e:
            logger.error("%s", e)
            return EXIT_VALIDATION
        except OSError as e:
            logger.error("%s", e)
            return EXIT_IO
        except IpfixError as e:
            logger.error("%s", e)
            return EXIT_FAILURE
        return EXIT_OK

    def _output(self, path: Path) -> Path:
        path = path if path.is_absolute() else self.out_dir / path
        path.parent.mkdir(parents=True, exist_ok=True)
        return path

    def _admm_params(self) -> AdmmParams:
        return AdmmParams.from_settings(self.settings, self.args.params, seed=self.args.seed,
                                        T=getattr(self.args, "T", None))

    def _run_config(self, policy) -> RunConfig:
        values = self.settings.category("run")
        beta = self.args.beta if self.args.beta is not None else getattr(policy, "beta", None) or values["beta"]
        delta = self.args.delta if self.args.delta is not None else values["delta"]
        T_prime = self.args.T if self.args.T is not None else values["T_prime"]
        return RunConfig(beta, delta, T_prime, policy)

    def generate(self) -> None:
        seed = self.args.seed or 0
        generator = self.settings.category("generator")
        if self.args.preset is not None:
            sizes = self.settings.category("presets").get(self.args.preset)
            if sizes is None:
                raise ValidationError(f"unknown preset {self.args.preset!r}")
        elif self.args.kind == "grid":
            sizes = [[self.args.width or generator["grid_width"], self.args.height or generator["grid_height"]]]
        else:
            sizes = [[self.args.n or generator["n"], self.args.items or generator["items"]]]
        kind = "grid" if self.args.preset == "grid" else self.args.kind
        for first, second in sizes:
            for k in range(self.args.count):
                if kind == "grid":
                    inst = generate_grid_mrf(first, second, generator["unary_strength"], generator["coupling"],
                                             seed + k, generator["noise"])
                    name = f"grid_{first}x{second}_{seed + k}.json"
                else:
                    cfg = GeneratorConfig.from_settings(self.settings, n=first, items=second, seed=seed + k,
                                                        density=self.args.density, xi=self.args.xi)
                    inst = generate_auction(cfg)
                    name = f"auction_{first}_{second}_{seed + k}.json"
                path = self._output(Path(name))
                write_instance(inst, path)
                print(f"{path}: n={inst.n}, m={inst.m}")
        return

    def solve(self) -> None:
        inst = read_instance(self.args.instance)
        params = self._admm_params()
        cfg = self._run_config(make_policy(self.args.mode, self.args.model))
        solution, episode = run(inst, cfg, params)
        timing = not self.args.deterministic
        out = self._output(self.args.out)
        with open(out, "w") as f:
            dump(solution.to_dict(timing), f, indent=2)
        if self.args.log is not None:
            log_path = self._output(self.args.log)
            with open(log_path, "w") as f:
                dump({"config": cfg.to_dict(), "admm": params.to_dict(), **episode.to_dict(timing)}, f, indent=2)
        print(f"{out}: objective {solution.objective:.6g}, {solution.iterations} iterations, "
              f"{episode.termination.value}, {episode.total_fixed} of {inst.n} fixed early")
        return

    def collect(self) -> None:
        instances = [inst for _, inst in load_instances(self.args.instances)]
        training = self.settings.category("training", "training_mrf" if self.args.mrf else None)
        policy = self.settings.category("policy", "policy_mrf" if self.args.mrf else None)
        beta = self.args.beta if self.args.beta is not None else policy["beta"]
        gamma = self.args.gamma if self.args.gamma is not None else training["gamma"]
        dataset = collect_dataset(instances, self._admm_params(), beta, gamma, self.args.threads, self.progress)
        out = self._output(self.args.out)
        dataset.save(out)
        print(f"{out}: {len(dataset)} samples, beta={beta}, gamma={gamma}")
        return

    def train(self) -> None:
        dataset = Dataset.load(self.args.dataset)
        mrf = self.args.mrf
        policy_cfg = PolicyConfig.from_settings(self.settings, mrf, beta=dataset.beta, seed=self.args.seed,
                                                use_attention=False if self.args.no_attention else None)
        cfg = TrainConfig.from_settings(self.settings, mrf, epochs=self.args.epochs, learning_rate=self.args.lr,
                                        batch_size=self.args.batch_size, seed=self.args.seed,
                                        weighted_loss=False if self.args.unweighted else None)
        model, losses = train(dataset, cfg, policy_cfg, self.progress)
        out = self._output(self.args.out)
        save_policy(model, out)
        final = f", final loss {losses[-1]:.6f}" if losses else ""
        print(f"{out}: {'attention' if policy_cfg.use_attention else 'no-attention'} policy, "
              f"{len(losses)} epochs{final}")
        return

    def bench(self) -> None:
        instances = load_instances(self.args.instances)
        params = self._admm_params()
        modes = {}
        for mode in (m.strip() for m in self.args.modes.split(",") if m.strip()):
            policy = make_policy(mode, self.args.model)
            modes[getattr(policy, "name", mode)] = policy
        run_values = self.settings.category("run")
        betas = {p.beta for p in modes.values() if getattr(p, "beta", None) is not None}
        beta = self.args.beta if self.args.beta is not None else (betas.pop() if len(betas) == 1 else run_values["beta"])
        delta = self.args.delta if self.args.delta is not None else run_values["delta"]
        T_prime = self.args.T if self.args.T is not None else run_values["T_prime"]
        timing = not self.args.deterministic
        report = bench_run(instances, modes, params, beta, delta, T_prime, timing, self.args.flips,
                           self.args.threads, self.progress)
        if self.args.sweep:
            for mode, policy in modes.items():
                if policy is None:
                    continue
                rows, trend = delta_sweep(instances, mode, policy, self.settings.category("bench")["deltas"],
                                          params, beta, self.args.threads, self.progress)
                report.sweep.extend(rows)
                report.provenance.setdefault("sweep_non_increasing", {})[mode] = trend
        self.out_dir.mkdir(parents=True, exist_ok=True)
        csv_path, json_path = report.write(self.out_dir, self.args.stem)
        for row in report.summary:
            ratio = format_speedup(row["speedup"]) if row.get("speedup") else "-"
            gap = f"{100.0 * row['gap']:+.2f}%" if row.get("gap") is not None else "-"
            print(f"{row['mode']}: gap {gap}, speedup {ratio}, accuracy {row['accuracy']:.3f}%, "
                  f"infeasible {row['infeasible']:.2f}")
        print(f"{csv_path}, {json_path}")
        return

    def flipstats(self) -> None:
        params = self._admm_params()
        bin_width = self.args.bin_width or self.settings.category("bench")["bin_width"]
        flips = []
        for name, inst in load_instances(self.args.instances):
            solution = solve(inst, params)
            flips.append(solution.trace.flips)
            logger.info("%s: %d iterations", name, solution.iterations)
        histogram = FlipHistogram.from_counts(np.concatenate(flips), bin_width)
        out = self._output(self.args.out)
        write_csv(out, FLIP_FIELDS, histogram.to_rows())
        share = histogram.percentages[0] if histogram.bins else 0.0
        print(f"{out}: {histogram.total} variables, {share:.1f}% in [0,{bin_width}), "
              f"{100.0 * histogram.zero_flip_fraction:.1f}% without a flip, modal bin {histogram.modal_bin}")
        return


if __name__ == '__main__':
    sys.exit(Application().run())
