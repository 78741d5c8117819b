"""Command-line entry point: ``graphmetric <subcommand> [flags]``.

Every run writes its outputs plus ``config.txt`` (the fully resolved flags,
usable again via ``--config``) and ``manifest.txt`` (config, derived seeds,
library versions and a dataset digest) into ``--out``. A failed run leaves a
``FAILED`` marker next to whatever it managed to write.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import platform
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .bench import METHODS, BenchSpec, bench_scaling
from .data import FEATURE_MODES, FeatureRecipe, tud_load
from .embed import init_params, load_params, save_params
from .engine import DISTANCES
from .evaluate import (EvalProtocol, distance_matrix, kernel_matrix, run_protocol,
                       write_square_matrix)
from .proptest import run_suite
from .train import DATASET_OVERRIDES, LOSSES, TrainConfig, train

log = logging.getLogger("graphmetric")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
# flags that never enter the config snapshot: they do not change results
_UNRECORDED = {"out", "config", "verbose", "command"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> tuple:
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _str_list(text: str) -> tuple:
    return tuple(v.strip() for v in text.split(",") if v.strip())


def _common(p: argparse.ArgumentParser):
    p.add_argument("--out", default="out", help="output directory (default: out)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="flat key=value file; explicit flags take precedence")
    p.add_argument("--verbose", action="store_true")


def _dataset(p: argparse.ArgumentParser):
    p.add_argument("--dataset", required=True, help="TUD dataset directory")
    p.add_argument("--recipe", choices=FEATURE_MODES, default="one-hot-labels")
    p.add_argument("--degree-cap", type=int)
    p.add_argument("--standardize", action="store_true")


def _model(p: argparse.ArgumentParser, depth: bool = True):
    p.add_argument("--distance", choices=DISTANCES, default="rpw2")
    if depth:
        p.add_argument("--depth", type=int, default=1, help="propagation steps r")
    p.add_argument("--normalize-adjacency", action="store_true")
    p.add_argument("--output-dim", type=int, help="embedding dimension p (default min(5, q))")
    p.add_argument("--num-projections", type=int, default=50)


def _training(p: argparse.ArgumentParser):
    p.add_argument("--loss", choices=LOSSES, default="nccml")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="graphmetric", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="learn the embedding matrix on a whole dataset")
    _common(p), _dataset(p), _model(p), _training(p)

    p = sub.add_parser("evaluate", help="repeated split / CV / k-NN protocol")
    _common(p), _dataset(p), _model(p, depth=False), _training(p)
    p.add_argument("--runs", type=int, default=10)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--r-grid", type=_int_list, help="depths to select from (default 1..4, 1..7 for MUTAG)")
    p.add_argument("--k-grid", type=_int_list, default=(1, 2, 3, 5, 7))
    p.add_argument("--untrained", action="store_true", help="score the initial embedding (ablation)")

    for name, text in (("distances", "pairwise graph distance matrix"),
                       ("kernel", "exp(-lambda d) kernel matrices for external SVMs")):
        p = sub.add_parser(name, help=text)
        _common(p), _dataset(p), _model(p)
        p.add_argument("--theta", help="checkpoint from `train`; default is the seeded initial embedding")
        p.add_argument("--impl", choices=("sequential", "quadratic"),
                       help="route rpw2 through one reference implementation")
        if name == "kernel":
            p.add_argument("--lambda", dest="lam", type=float, help="single lambda (default: whole grid)")

    p = sub.add_parser("bench", help="runtime scaling benchmark")
    _common(p)
    p.add_argument("--sizes", type=_int_list, default=BenchSpec.sizes)
    p.add_argument("--dim", type=int, default=5)
    p.add_argument("--repetitions", type=int, default=3)
    p.add_argument("--methods", type=_str_list, default=BenchSpec.methods)
    p.add_argument("--num-projections", type=int, default=50)
    p.add_argument("--memory-budget-gb", type=float, default=8.0)
    p.add_argument("--parallel", action="store_true", help="do not pin BLAS to one thread")

    p = sub.add_parser("proptest", help="distance and embedding invariant suite")
    _common(p)
    p.add_argument("--scale", type=float, default=1.0, help="fraction of the full instance counts")
    return parser


def read_config(path) -> dict:
    """``key = value`` lines; blank lines and ``#`` comments ignored."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("_", "-")] = value
    return out


def _config_argv(config: dict, subparser: argparse.ArgumentParser) -> list[str]:
    """Turn config entries into flag tokens placed before the real argv."""
    flags = {a.dest.replace("_", "-"): a for a in subparser._actions if a.option_strings}
    flags["lambda"] = flags.get("lam")
    argv = []
    for key, value in config.items():
        action = flags.get(key)
        if action is None or key in _UNRECORDED:
            raise UsageError(f"unknown config key {key!r}")
        opt = action.option_strings[-1]
        if action.nargs == 0:
            if value.lower() in ("1", "true", "yes"):
                argv.append(opt)
            elif value.lower() not in ("0", "false", "no", ""):
                raise UsageError(f"config key {key!r} expects true/false, got {value!r}")
        elif value.lower() != "none":
            argv.append(f"{opt}={value}")
    return argv


def parse_args(argv: list[str]) -> argparse.Namespace:
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    pre.add_argument("command", nargs="?")
    known, _ = pre.parse_known_args(argv)
    subparsers = parser._subparsers._group_actions[0].choices
    if known.config and known.command in subparsers:
        try:
            prefix = _config_argv(read_config(known.config), subparsers[known.command])
        except OSError as exc:
            parser.error(f"cannot read config: {exc}")
        except UsageError as exc:
            parser.error(str(exc))
        idx = argv.index(known.command) + 1
        argv = argv[:idx] + prefix + argv[idx:]
    return parser.parse_args(argv)


def _fmt(value) -> str:
    if isinstance(value, (tuple, list)):
        return ",".join(str(v) for v in value)
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def _dataset_digest(path) -> str:
    h = hashlib.sha256()
    for f in sorted(Path(path).glob("*.txt")):
        h.update(f.name.encode())
        h.update(f.read_bytes())
    return h.hexdigest()


class Run:
    """Output directory bookkeeping for one subcommand invocation."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.out = Path(args.out)
        self.written: list[str] = []
        self.seeds: dict = {"seed": args.seed}
        self.resolved: dict = {}

    def prepare(self):
        self.out.mkdir(parents=True, exist_ok=True)
        (self.out / "FAILED").unlink(missing_ok=True)

    def path(self, name: str) -> Path:
        self.written.append(name)
        return self.out / name

    def write_text(self, name: str, text: str):
        self.path(name).write_text(text)

    def config_lines(self) -> list[str]:
        values = {k: v for k, v in vars(self.args).items() if k not in _UNRECORDED}
        values.update(self.resolved)
        return [f"{k.replace('_', '-')} = {_fmt(values[k])}" for k in sorted(values)]

    def finish(self):
        config = self.config_lines()
        (self.out / "config.txt").write_text("\n".join(config) + "\n")
        lines = [f"command = {self.args.command}", f"graphmetric = {__version__}",
                 f"python = {platform.python_version()}", f"numpy = {np.__version__}",
                 f"scipy = {scipy.__version__}"]
        if getattr(self.args, "dataset", None):
            lines.append(f"dataset-sha256 = {_dataset_digest(self.args.dataset)}")
        lines += [f"seed.{k} = {_fmt(v)}" for k, v in self.seeds.items()]
        lines += [f"config.{c}" for c in config]
        lines += [f"output = {name}" for name in self.written]
        (self.out / "manifest.txt").write_text("\n".join(lines) + "\n")

    def fail(self, message: str):
        try:
            self.out.mkdir(parents=True, exist_ok=True)
            partial = "".join(f"partial output: {n}\n" for n in self.written)
            (self.out / "FAILED").write_text(f"{message}\n{partial}")
        except OSError:
            pass


def _recipe(args) -> FeatureRecipe:
    return FeatureRecipe(args.recipe, args.degree_cap, args.standardize)


def _train_config(args, name: str, run: Run) -> TrainConfig:
    values = {"learning_rate": 0.999e-2, "epochs": 10, "batch_size": 8}
    values.update(DATASET_OVERRIDES.get(name, {}))
    for key, flag in (("learning_rate", "lr"), ("epochs", "epochs"), ("batch_size", "batch")):
        if getattr(args, flag) is not None:
            values[key] = getattr(args, flag)
    run.resolved.update({"lr": values["learning_rate"], "epochs": values["epochs"],
                         "batch": values["batch_size"]})
    return TrainConfig(loss=args.loss, distance=args.distance, seed=args.seed,
                       num_projections=args.num_projections, **values)


def _load(args, run: Run):
    dataset = tud_load(args.dataset, _recipe(args))
    log.info("loaded %s: %d graphs, q=%d", dataset.name, len(dataset.graphs), dataset.num_features)
    return dataset


def _params_for(args, dataset):
    if args.theta:
        params = load_params(args.theta)
        if params.input_dim != dataset.num_features:
            raise ValueError(f"checkpoint expects q={params.input_dim}, dataset has q={dataset.num_features}")
        return params
    return init_params(dataset.num_features, args.output_dim, args.depth, args.seed,
                       args.normalize_adjacency)


def cmd_train(args, run: Run):
    dataset = _load(args, run)
    cfg = _train_config(args, dataset.name, run)
    params = init_params(dataset.num_features, args.output_dim, args.depth, args.seed,
                         args.normalize_adjacency)
    result = train(dataset, np.arange(len(dataset.graphs)), params, cfg)
    save_params(run.path("theta.txt"), result.params)
    run.write_text("history.csv", result.history_csv())
    print(f"final batch loss {result.history[-1][2]:.6f}; checkpoint {run.out / 'theta.txt'}")


def cmd_evaluate(args, run: Run):
    dataset = _load(args, run)
    cfg = _train_config(args, dataset.name, run)
    kw = {"runs": args.runs, "folds": args.folds, "k_grid": args.k_grid, "seed": args.seed}
    if args.r_grid:
        kw["r_grid"] = args.r_grid
    protocol = EvalProtocol.for_dataset(dataset.name, **kw)
    run.resolved["r_grid"] = protocol.r_grid
    state = np.random.SeedSequence(protocol.seed).generate_state(4 * protocol.runs)
    run.seeds["per-run"] = state.tolist()
    report = run_protocol(dataset, protocol, cfg, args.output_dim, args.normalize_adjacency,
                          untrained=args.untrained,
                          progress=lambda i, r: log.info("run %d depth %d done", i, r))
    run.write_text("report.csv", report.to_csv())
    summary = f"{dataset.name} {args.distance}+{args.loss}: {100 * report.mean:.2f} +- {100 * report.std:.2f}\n"
    run.write_text("summary.txt", summary)
    print(summary, end="")


def _matrix(args, run: Run):
    dataset = _load(args, run)
    params = _params_for(args, dataset)
    run.resolved.update({"depth": params.depth, "normalize_adjacency": params.normalize_adjacency})
    return distance_matrix(dataset, range(len(dataset.graphs)), params, args.distance,
                           args.num_projections, args.seed, impl=args.impl)


def cmd_distances(args, run: Run):
    dm = _matrix(args, run)
    write_square_matrix(run.path("distances.txt"), dm.values)
    print(f"{len(dm)} x {len(dm)} distances written to {run.out / 'distances.txt'}")


def cmd_kernel(args, run: Run):
    if args.lam is not None and not args.lam > 0:
        raise UsageError("--lambda must be > 0")
    dm = _matrix(args, run)
    protocol = EvalProtocol()
    lams = (args.lam,) if args.lam is not None else protocol.lambda_grid
    for i, lam in enumerate(lams):
        write_square_matrix(run.path(f"kernel_{i}.txt"), kernel_matrix(dm, lam))
    grid = ["kind,index,value"]
    grid += [f"lambda,{i},{lam!r}" for i, lam in enumerate(lams)]
    grid += [f"C,{i},{c!r}" for i, c in enumerate(protocol.c_grid)]
    run.write_text("grids.csv", "\n".join(grid) + "\n")
    print(f"{len(lams)} kernel matrices written to {run.out}")


def cmd_bench(args, run: Run):
    spec = BenchSpec(sizes=args.sizes, dim=args.dim, repetitions=args.repetitions,
                     methods=args.methods, seed=args.seed, num_projections=args.num_projections,
                     memory_budget_bytes=args.memory_budget_gb * 1e9, parallel=args.parallel)
    result = bench_scaling(spec, progress=lambda r: log.info("%s n=%d %s", r.method, r.n,
                                                             r.median_seconds))
    run.write_text("bench.csv", result.to_csv())
    run.write_text("summary.csv", result.summary())
    print(result.summary(), end="")


def cmd_proptest(args, run: Run):
    if not args.scale > 0:
        raise UsageError("--scale must be > 0")
    results = run_suite(args.scale, args.seed)
    text = "".join(r.line() + "\n" for r in results)
    run.write_text("proptest.txt", text)
    print(text, end="")
    return all(r.passed for r in results)


COMMANDS = {"train": cmd_train, "evaluate": cmd_evaluate, "distances": cmd_distances,
            "kernel": cmd_kernel, "bench": cmd_bench, "proptest": cmd_proptest}


def _validate(args):
    for name in ("depth", "epochs", "batch", "runs", "folds", "repetitions", "dim", "num_projections"):
        value = getattr(args, name, None)
        if value is not None and value < (2 if name in ("batch", "folds") else 0 if name == "depth" else 1):
            raise UsageError(f"--{name.replace('_', '-')} out of range: {value}")
    if getattr(args, "lr", None) is not None and not args.lr > 0:
        raise UsageError("--lr must be > 0")
    if getattr(args, "methods", None):
        unknown = set(args.methods) - set(METHODS)
        if unknown:
            raise UsageError(f"unknown bench methods {sorted(unknown)}; choose from {METHODS}")
    if getattr(args, "impl", None) and args.distance != "rpw2":
        raise UsageError("--impl only applies to --distance rpw2")


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _validate(args)
    except UsageError as exc:
        print(f"graphmetric: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    run = Run(args)
    try:
        run.prepare()
        ok = COMMANDS[args.command](args, run)
        run.finish()
    except UsageError as exc:
        run.fail(str(exc))
        print(f"graphmetric: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # any module error is a runtime failure
        log.debug("failure", exc_info=True)
        run.fail(f"{type(exc).__name__}: {exc}")
        print(f"graphmetric: {args.command} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    if ok is False:
        run.fail("one or more invariant checks failed")
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
