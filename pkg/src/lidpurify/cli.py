"""Command line: config parsing, experiment runs, artifact export."""
import argparse
import dataclasses
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .metrics import LidReport, lid_auc, purification_stats, read_lid_report, top_k_average, write_lid_report
from .nn import save_checkpoint
from .noiselab import NOISE_KINDS, inject_noise, make_split, save_dataset
from .trainer import MODES, TrainConfig, Trainer

METRICS_COLUMNS = ("epoch", "split", "accuracy", "loss_clean", "loss_hard", "loss_noisy",
                   "updated", "update_precision", "lid_auc", "wall_ms")


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    n_train: int = 2000
    n_test: int = 1000
    d: int = 16
    n_c: int = 4
    spread: float = 0.4
    noise: str = "symmetric"
    ratio: float = 0.4

    def validate(self):
        if self.noise not in NOISE_KINDS:
            raise ConfigError(f"dataset.noise: expected one of {', '.join(NOISE_KINDS)}")
        if not 0.0 <= self.ratio < 1.0:
            raise ConfigError("dataset.ratio: must lie in [0, 1)")
        if self.n_c < 2:
            raise ConfigError("dataset.n_c: need at least 2 classes")
        if self.n_train < self.n_c or self.n_test < 1:
            raise ConfigError("dataset.n_train: need n_train >= n_c and n_test >= 1")
        if self.d < 2:
            raise ConfigError("dataset.d: need d >= 2")
        if self.spread <= 0:
            raise ConfigError("dataset.spread: must be positive")
        return self


@dataclass
class ExperimentSpec:
    dataset: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    out: str = "runs/default"
    mode: str = "colafier"

    @property
    def seed(self):
        return self.train.seed


def _fill(cls, block, where):
    if not isinstance(block, dict):
        raise ConfigError(f"{where}: expected an object")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(block) - set(names))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    for key, value in block.items():
        default = getattr(cls(), key)
        if isinstance(default, tuple):
            if not isinstance(value, list):
                raise ConfigError(f"{where}.{key}: expected a list")
            value = tuple(value)
        elif isinstance(default, bool):
            if not isinstance(value, bool):
                raise ConfigError(f"{where}.{key}: expected true or false")
        elif isinstance(default, int):
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"{where}.{key}: expected an integer")
        elif isinstance(default, float):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{where}.{key}: expected a number")
            value = float(value)
        elif isinstance(default, str) and not isinstance(value, str):
            raise ConfigError(f"{where}.{key}: expected a string")
        kwargs[key] = value
    return cls(**kwargs)


def spec_from_dict(raw):
    if not isinstance(raw, dict):
        raise ConfigError("config: top level must be an object")
    unknown = sorted(set(raw) - {"dataset", "train", "out", "mode"})
    if unknown:
        raise ConfigError(f"config: unknown key(s) {', '.join(unknown)}")
    spec = ExperimentSpec(
        dataset=_fill(DataConfig, raw.get("dataset", {}), "dataset"),
        train=_fill(TrainConfig, raw.get("train", {}), "train"),
        out=raw.get("out", ExperimentSpec.out),
        mode=raw.get("mode", ExperimentSpec.mode),
    )
    if not isinstance(spec.out, str):
        raise ConfigError("out: expected a string")
    if spec.mode not in MODES:
        raise ConfigError(f"mode: expected one of {', '.join(MODES)}")
    spec.dataset.validate()
    try:
        spec.train.validate()
    except ValueError as err:
        raise ConfigError(f"train.{err}") from None
    if spec.dataset.n_train < spec.train.batch_size:
        raise ConfigError("train.batch_size: larger than dataset.n_train")
    return spec


def parse_config(path):
    """Read a JSON experiment file; omitted fields take their defaults."""
    text = Path(path).read_text()
    try:
        raw = json.loads(text) if text.strip() else {}
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}:{err.lineno}:{err.colno}: {err.msg}") from None
    return spec_from_dict(raw)


def data_rng(seed):
    # data gets its own stream so label noise and weight init are independent
    return np.random.Generator(np.random.PCG64([int(seed), 1]))


def build_data(spec):
    c = spec.dataset
    rng = data_rng(spec.seed)
    train, test = make_split(c.n_train, c.n_test, c.d, c.n_c, c.spread, rng)
    return inject_noise(train, c.noise, c.ratio, rng), test


def _fmt(v):
    if v is None:
        return "na"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_metrics(path, reports):
    with open(path, "w") as fh:
        fh.write(",".join(METRICS_COLUMNS) + "\n")
        for r in reports:
            row = [r.epoch, "test", r.accuracy, r.loss_clean, r.loss_hard, r.loss_noisy,
                   r.updated, r.update_precision, r.lid_auc, r.wall_ms]
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def summary_line(mode, trainer):
    acc = top_k_average([r.accuracy for r in trainer.reports], 3)
    count, precision, residual = purification_stats(trainer.train_set, trainer.update_log)
    prec = "na" if precision is None else f"{precision:.4f}"
    return (f"summary mode={mode} top3_accuracy={acc:.4f} updated={count} update_precision={prec} "
            f"residual_noise={residual:.4f} initial_noise={trainer.initial_noise_rate:.4f}")


def run_experiment(spec, log=None):
    """Train one configuration and write metrics, LID report, checkpoint, summary."""
    out = Path(spec.out)
    out.mkdir(parents=True, exist_ok=True)
    train, test = build_data(spec)
    trainer = Trainer(train, test, spec.train, mode=spec.mode)

    def progress(r):
        if log is not None:
            log(f"epoch {r.epoch:3d} {r.phase:6s} acc={r.accuracy:.4f} updated={r.updated}")

    trainer.run(callback=progress)
    write_metrics(out / "metrics.csv", trainer.reports)
    write_lid_report(out / "lid_report.txt", LidReport.concat(trainer.lid_reports))
    save_checkpoint(out / "checkpoint.bin", {**trainer.gen.state_arrays("ge/"), **trainer.dis.state_arrays("ld/")})
    line = summary_line(spec.mode, trainer)
    (out / "summary.txt").write_text(line + "\n")
    return trainer, line


def _apply_overrides(spec, args):
    if args.seed is not None:
        spec.train = dataclasses.replace(spec.train, seed=args.seed)
    if args.out is not None:
        spec.out = args.out
    return spec


def _load_spec(args):
    spec = parse_config(args.config) if args.config else spec_from_dict({})
    return _apply_overrides(spec, args)


def cmd_gen_data(args):
    spec = _load_spec(args)
    out = Path(spec.out)
    out.mkdir(parents=True, exist_ok=True)
    train, test = build_data(spec)
    save_dataset(out / "train.txt", train)
    save_dataset(out / "test.txt", test)
    print(f"wrote {len(train)} train / {len(test)} test rows to {out} (noise rate {train.noise_rate():.4f})")


def cmd_train(args):
    spec = _load_spec(args)
    if args.mode:
        spec.mode = args.mode
    _, line = run_experiment(spec, log=None if args.quiet else print)
    print(line)


def cmd_lid_report(args):
    path = Path(args.path) if args.path else Path(args.out or _load_spec(args).out) / "lid_report.txt"
    report = read_lid_report(path)
    print("epoch,n_true,n_false,mean_lid_true,mean_lid_false,auc")
    for e in np.unique(report.epoch):
        r = report.at_epoch(e)
        s = (r.lid_v1 + r.lid_v2) / 2
        f = r.is_false
        try:
            a = f"{lid_auc(r):.4f}"
        except ValueError:
            a = "na"
        mt = f"{s[~f].mean():.4f}" if (~f).any() else "na"
        mf = f"{s[f].mean():.4f}" if f.any() else "na"
        print(f"{e},{int((~f).sum())},{int(f.sum())},{mt},{mf},{a}")


def cmd_compare(args):
    spec = _load_spec(args)
    base = Path(spec.out)
    rows = []
    for mode in MODES:
        sub = dataclasses.replace(spec, mode=mode, out=str(base / mode))
        trainer, line = run_experiment(sub)
        print(line)
        rows.append((mode, top_k_average([r.accuracy for r in trainer.reports], 3)))
    ref = dict(rows)["plain-ce"]
    print(f"{'mode':10s} {'top3_acc':>9s} {'vs_ce':>7s}")
    for mode, acc in rows:
        print(f"{mode:10s} {acc:9.4f} {100 * (acc - ref):+7.2f}")


def build_parser():
    p = argparse.ArgumentParser(prog="lidpurify", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", metavar="PATH", help="JSON experiment file")
        sp.add_argument("--seed", type=int, metavar="N", help="override train.seed")
        sp.add_argument("--out", metavar="DIR", help="override the output directory")

    sp = sub.add_parser("gen-data", help="write the noisy train and clean test sets as text")
    common(sp)
    sp.set_defaults(func=cmd_gen_data)

    sp = sub.add_parser("train", help="run one experiment")
    common(sp)
    sp.add_argument("--mode", choices=MODES, help="override the config mode")
    sp.add_argument("--quiet", action="store_true", help="no per-epoch progress")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("lid-report", help="per-epoch false-label AUC from a saved LID report")
    common(sp)
    sp.add_argument("path", nargs="?", help="lid_report.txt (default: <out>/lid_report.txt)")
    sp.set_defaults(func=cmd_lid_report)

    sp = sub.add_parser("compare", help="run all modes on the same data and print a delta table")
    common(sp)
    sp.set_defaults(func=cmd_compare)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (ValueError, OSError, FloatingPointError, RuntimeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
