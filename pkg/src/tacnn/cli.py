"""Command-line entry point: ``tacnn fetch | train | eval | bench | gradcheck``."""
import argparse
import configparser
import csv
import sys
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import data_io
from .checkpoint import load_checkpoint
from .errors import (
    CheckpointError,
    ConfigError,
    FetchError,
    NumericError,
    ParseError,
    SummaryError,
    TacnnError,
)
from .gradcheck import SCALES, run_all
from .layers import Model, cnn_spec, parameter_count, tacnn_spec
from .training import AdamState, TrainConfig, evaluate, fit, multi_seed_summary, stream

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

PUBLISHED_GRID = (
    [("tacnn", (2 ** m,)) for m in range(12)]
    + [("cnn", (2 ** m,)) for m in range(12)]
    + [("tacnn", (n, n)) for n in (16, 32, 64)]
)


def _int_list(text):
    try:
        values = [int(v) for v in str(text).replace(" ", "").split(",") if v]
    except ValueError as exc:
        raise ConfigError(f"expected a comma-separated list of integers, got {text!r}") from exc
    if not values:
        raise ConfigError("empty integer list")
    return values


@dataclass
class RunConfig:
    model: str = "tacnn"
    layers: int = 1
    kernels: str = "1"
    epochs: int = 20
    batch_size: int = 100
    lr: float = 2e-4
    seeds: str = "0"
    data_dir: str = "data/fashion"
    out_dir: str = "runs"
    run_name: str = ""
    workers: int = 1
    deterministic: bool = True
    precision: str = "f32"
    train_limit: int = 0
    test_limit: int = 0

    def validate(self):
        if self.model not in ("tacnn", "cnn"):
            raise ConfigError(f"model must be tacnn or cnn, got {self.model!r}")
        if self.precision not in ("f32", "f64"):
            raise ConfigError(f"precision must be f32 or f64, got {self.precision!r}")
        if self.layers not in (1, 2):
            raise ConfigError(f"layers must be 1 or 2, got {self.layers}")
        kernels = self.kernel_list
        if len(kernels) != self.layers:
            raise ConfigError(f"{self.layers} layer(s) but {len(kernels)} kernel count(s): {self.kernels!r}")
        if min(kernels) < 1:
            raise ConfigError("kernel counts must be >= 1")
        if not self.seed_list:
            raise ConfigError("at least one seed is required")
        if self.batch_size < 1 or self.workers < 1:
            raise ConfigError("batch size and workers must be positive")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        return self

    @property
    def kernel_list(self):
        return _int_list(self.kernels)

    @property
    def seed_list(self):
        return _int_list(self.seeds)

    @property
    def name(self):
        return self.run_name or f"{self.model}-{'x'.join(str(k) for k in self.kernel_list)}"

    def spec(self):
        build = tacnn_spec if self.model == "tacnn" else cnn_spec
        return build(tuple(self.kernel_list))

    def train_config(self, seed):
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            seed=seed,
            lr=self.lr,
            precision=self.precision,
            deterministic=self.deterministic,
            workers=self.workers,
        )

    def write(self, path):
        parser = configparser.ConfigParser()
        parser["run"] = {k: str(v) for k, v in asdict(self).items()}
        with open(path, "w") as fh:
            fh.write("# fully resolved configuration; rerun with `tacnn train --config <this file>`\n")
            parser.write(fh)


def read_config_file(path):
    parser = configparser.ConfigParser()
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    values = {}
    types = {f.name: f.type for f in fields(RunConfig)}
    for section in parser.sections():
        for key, raw in parser[section].items():
            key = key.replace("-", "_")
            if key not in types:
                raise ConfigError(f"unknown config key {key!r} in [{section}] of {path}")
            values[key] = raw
    return values


def _coerce(key, value):
    kind = {f.name: f.type for f in fields(RunConfig)}[key]
    if kind in (bool, "bool"):
        if isinstance(value, bool):
            return value
        if str(value).lower() in ("1", "true", "yes", "on"):
            return True
        if str(value).lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {value!r}")
    try:
        if kind in (int, "int"):
            return int(value)
        if kind in (float, "float"):
            return float(value)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {value!r}") from exc
    return str(value)


def resolve_config(args):
    """Defaults, then the ``--config`` file, then explicit flags."""
    values = {}
    if getattr(args, "config", None):
        values.update(read_config_file(args.config))
    for f in fields(RunConfig):
        flag = getattr(args, f.name, None)
        if flag is not None:
            values[f.name] = flag
    cfg = RunConfig(**{k: _coerce(k, v) for k, v in values.items()})
    return cfg


def _log(msg):
    print(msg, flush=True)


def _load_data(cfg):
    if not data_io.dataset_present(cfg.data_dir):
        raise FileNotFoundError(
            f"Fashion-MNIST not found in {cfg.data_dir!r}; run `tacnn fetch --data-dir {cfg.data_dir}` first"
        )
    dtype = np.float64 if cfg.precision == "f64" else np.float32
    (tx, ty), (vx, vy) = data_io.load_dataset(cfg.data_dir, dtype)
    if cfg.train_limit:
        tx, ty = tx[: cfg.train_limit], ty[: cfg.train_limit]
    if cfg.test_limit:
        vx, vy = vx[: cfg.test_limit], vy[: cfg.test_limit]
    return (tx, ty), (vx, vy)


def train_seeds(cfg, spec, train, test, run_dir, log=_log):
    """Train one model per seed; returns ``[(seed, best_acc, best_epoch), ...]``."""
    results = []
    for seed in cfg.seed_list:
        tc = cfg.train_config(seed)
        model = Model(spec, rng=stream(seed, "init"), dtype=tc.dtype)
        opt = AdamState.for_params(model.flat_params(), lr=cfg.lr)
        if log:
            log(f"[{cfg.name}] seed {seed}: {parameter_count(spec).total} parameters")
        out = None if run_dir is None else Path(run_dir) / f"seed{seed}"
        res = fit(model, opt, train, test, tc, out, log)
        results.append((seed, res.best_acc, res.best_epoch))
    return results


def cmd_fetch(args):
    cfg = resolve_config(args)
    for path, status in data_io.fetch(cfg.data_dir, args.base_url, log=None):
        _log(f"{path}: {'already present' if status == 'present' else 'downloaded'} (valid)")
    return EXIT_OK


def cmd_train(args):
    cfg = resolve_config(args).validate()
    if cfg.epochs < 1:
        raise SummaryError("epochs must be >= 1: an empty history has no best epoch")
    spec = cfg.spec()
    train, test = _load_data(cfg)
    run_dir = Path(cfg.out_dir) / cfg.name
    run_dir.mkdir(parents=True, exist_ok=True)
    cfg.write(run_dir / "config.ini")
    results = train_seeds(cfg, spec, train, test, run_dir)
    with open(run_dir / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["seed", "best_test_acc", "best_epoch"])
        for seed, acc, epoch in results:
            w.writerow([seed, f"{acc:.6f}", epoch])
        accs = [r[1] for r in results]
        if len(accs) >= 2:
            mean, std = multi_seed_summary(accs)
            w.writerow(["mean", f"{mean:.6f}", ""])
            w.writerow(["std", f"{std:.6f}", ""])
    if len(results) >= 2:
        mean, std = multi_seed_summary([r[1] for r in results])
        _log(f"summary {cfg.name}: best test accuracy {100 * mean:.2f}% +- {100 * std:.2f}% over {len(results)} seeds")
    else:
        seed, acc, epoch = results[0]
        _log(f"summary {cfg.name}: best test accuracy {100 * acc:.2f}% at epoch {epoch} (seed {seed})")
    return EXIT_OK


def cmd_eval(args):
    cfg = resolve_config(args)
    expected = None
    if args.model is not None or args.kernels is not None or args.layers is not None:
        expected = cfg.validate().spec()
    dtype = np.float64 if cfg.precision == "f64" else np.float32
    model = load_checkpoint(args.checkpoint, expected, dtype)
    if not data_io.dataset_present(cfg.data_dir):
        raise FileNotFoundError(
            f"Fashion-MNIST not found in {cfg.data_dir!r}; run `tacnn fetch --data-dir {cfg.data_dir}` first"
        )
    x, y = data_io.to_feature_planes(data_io.load_split(cfg.data_dir, args.split), dtype)
    acc, loss = evaluate(model, x, y)
    _log(f"{args.split} accuracy {acc:.6f} loss {loss:.6f} ({len(y)} samples)")
    return EXIT_OK


def bench_grid(args, cfg):
    if args.grid == "published":
        return list(PUBLISHED_GRID)
    models = ["tacnn", "cnn"] if args.model in (None, "both") else [args.model]
    if cfg.layers == 1:
        return [(m, (k,)) for m in models for k in cfg.kernel_list]
    return [(m, tuple(cfg.kernel_list)) for m in models]


def cmd_bench(args):
    model_flag = args.model
    if args.model == "both":
        args.model = None
    if args.kernels is not None and args.layers is None and args.grid != "published":
        args.layers = 1
    cfg = resolve_config(args)
    args.model = model_flag
    grid = bench_grid(args, cfg)
    data = None
    if not args.params_only:
        if cfg.epochs < 1:
            raise SummaryError("epochs must be >= 1 for a training sweep (use --params-only for accounting)")
        data = _load_data(cfg)
    out = Path(cfg.out_dir) / (cfg.run_name or "bench")
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for model, kernels in grid:
        label = "x".join(str(k) for k in kernels)
        spec = (tacnn_spec if model == "tacnn" else cnn_spec)(kernels)
        row = dict(model=model, layers=len(kernels), kernels=label, parameters=parameter_count(spec).total,
                   accuracies="", mean="", std="", seconds="", error="")
        if not args.params_only:
            start = time.perf_counter()
            try:
                sub = RunConfig(**{**asdict(cfg), "model": model, "layers": len(kernels), "kernels": label,
                                   "run_name": f"{model}-{label}"})
                results = train_seeds(sub, spec, *data, out / sub.name, log=None)
                accs = [r[1] for r in results]
                row["accuracies"] = ";".join(f"{a:.6f}" for a in accs)
                row["mean"] = f"{np.mean(accs):.6f}"
                row["std"] = f"{multi_seed_summary(accs)[1]:.6f}" if len(accs) > 1 else ""
            except (TacnnError, ArithmeticError, MemoryError) as exc:
                row["error"] = str(exc)
            row["seconds"] = f"{time.perf_counter() - start:.1f}"
        rows.append(row)
        _log(_table_line(row))
    cols = list(rows[0])
    with open(out / "bench.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, cols, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    with open(out / "plot_data.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "layers", "kernel_count", "parameters", "mean_acc", "std_acc"])
        for r in rows:
            count = int(np.prod([int(k) for k in r["kernels"].split("x")]))
            w.writerow([r["model"], r["layers"], count, r["parameters"], r["mean"], r["std"]])
    _log(f"wrote {out / 'bench.csv'} and {out / 'plot_data.csv'}")
    return EXIT_OK


def _table_line(row):
    return (
        f"{row['model']:<6s} {row['kernels']:>7s} {row['parameters']:>12,d}  "
        f"{row['mean'] or '-':>9s} {row['std'] or '-':>9s}  {row['error']}"
    )


def cmd_gradcheck(args):
    reports = run_all(args.scale, args.seed, log=_log)
    failed = [r for r in reports if not r.passed]
    _log(f"{len(reports) - len(failed)}/{len(reports)} suites passed")
    return EXIT_OK if not failed else EXIT_NUMERIC


def build_parser():
    parser = argparse.ArgumentParser(prog="tacnn", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def run_flags(p, models=("tacnn", "cnn")):
        p.add_argument("--config", help="key = value config file (flags override it)")
        p.add_argument("--model", choices=list(models))
        p.add_argument("--layers", type=int)
        p.add_argument("--kernels", help="kernel count per layer, comma separated")
        p.add_argument("--epochs", type=int)
        p.add_argument("--batch-size", dest="batch_size", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--seeds", help="comma-separated seeds")
        p.add_argument("--data-dir", dest="data_dir")
        p.add_argument("--out-dir", dest="out_dir")
        p.add_argument("--run-name", dest="run_name")
        p.add_argument("--workers", type=int)
        p.add_argument("--deterministic", action=argparse.BooleanOptionalAction, default=None)
        p.add_argument("--precision", choices=["f32", "f64"])
        p.add_argument("--train-limit", dest="train_limit", type=int, help="use only the first N training images")
        p.add_argument("--test-limit", dest="test_limit", type=int, help="use only the first N test images")

    p = sub.add_parser("fetch", help="download Fashion-MNIST")
    p.add_argument("--config")
    p.add_argument("--data-dir", dest="data_dir")
    p.add_argument("--base-url", dest="base_url", default=data_io.DEFAULT_BASE_URL)
    p.set_defaults(func=cmd_fetch)

    p = sub.add_parser("train", help="train one configuration over one or more seeds")
    run_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    run_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=["train", "test"], default="test")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="sweep kernel counts and report accuracy and parameters")
    run_flags(p, models=("tacnn", "cnn", "both"))
    p.add_argument("--grid", choices=["published"], help="use the full published kernel-count grid")
    p.add_argument("--params-only", dest="params_only", action="store_true",
                   help="only report parameter totals, no training")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("gradcheck", help="run oracle and finite-difference suites")
    p.add_argument("--scale", choices=list(SCALES), default="default")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, ParseError, FetchError, CheckpointError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, FloatingPointError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except TacnnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
