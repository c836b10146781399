"""Command-line entry point: ``infometer {generate,train,estimate,perturb,benchmark,report}``.

Configs are JSON documents with a ``version`` field; command-line flags
override config fields. Exit codes: 0 success, 1 runtime failure, 2 usage or
config error (with a JSON error object on stderr).

The default seed is 0, or ``$INFOMETER_SEED`` when set; ``--seed`` overrides
both. The effective seed and its origin are echoed into every report.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from . import __version__
from .adapt import CONCAT_MODES, AffineRecord, dataset_stats
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .entropy import EntropyEstimate, TrainConfig, TrainingDivergedError, train_branch, write_training_curve
from .harness import BenchmarkConfig, PerturbationSpec, apply_perturbation, make_source, run_benchmark, write_report_csv
from .meter import Branches, InfoMeterConfig, MIEstimate, estimate_mi
from .sources import DatasetFormatError, load_dataset, save_dataset

__all__ = ["RunConfig", "ConfigError", "main", "resolve_seed", "plot_report"]

CONFIG_VERSION = 1
SEED_ENV = "INFOMETER_SEED"
BRANCH_DIRS = {"x": "branch_x", "y": "branch_y", "joint": "branch_joint"}

log = logging.getLogger("infometer")


class ConfigError(ValueError):
    """Invalid command line or config file; exit code 2."""


@dataclass
class RunConfig:
    """Versioned run configuration shared by all subcommands."""

    generator: dict = field(default_factory=lambda: {
        "id": "gaussian_pair", "params": {"rho": 0.6}, "shape": [32, 32], "n_samples": 2000})
    adaptation: dict = field(default_factory=lambda: {"concat_mode": "quilt"})
    transform: dict = field(default_factory=lambda: {"levels": 2, "taps": 3})
    density: dict = field(default_factory=lambda: {"type": "ar", "context": 3, "v_min": -256, "v_max": 511})
    training: dict = field(default_factory=dict)
    paths: dict = field(default_factory=dict)
    perturbation: dict | None = None
    benchmark: dict | None = None
    version: int = CONFIG_VERSION

    @classmethod
    def load(cls, path) -> "RunConfig":
        if path is None:
            return cls()
        try:
            d = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if d.get("version") != CONFIG_VERSION:
            raise ConfigError(f"unsupported config version {d.get('version')!r}")
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        base = cls()
        for k, v in d.items():
            if isinstance(getattr(base, k), dict) and isinstance(v, dict):
                getattr(base, k).update(v)
            else:
                setattr(base, k, v)
        return base

    def train_config(self, seed: int) -> TrainConfig:
        allowed = {f.name for f in fields(TrainConfig)}
        t = dict(self.training)
        bad = set(t) - allowed
        if bad:
            raise ConfigError(f"unknown training fields: {sorted(bad)}")
        t.setdefault("seed", seed)
        t.update(levels=self.transform.get("levels", 2), taps=self.transform.get("taps", 3),
                 density=self.density.get("type", "ar"), context=self.density.get("context", 3),
                 v_min=self.density.get("v_min", -256), v_max=self.density.get("v_max", 511))
        try:
            return TrainConfig(**t).validate()
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def meter_config(self, seed: int) -> InfoMeterConfig:
        mode = self.adaptation.get("concat_mode", "quilt")
        if mode not in CONCAT_MODES:
            raise ConfigError(f"concat_mode must be one of {CONCAT_MODES}")
        return InfoMeterConfig(mode, self.train_config(seed))

    def to_json(self) -> dict:
        return asdict(self)


def resolve_seed(flag: int | None) -> tuple[int, str]:
    """Effective seed and where it came from: flag, environment or default."""
    if flag is not None:
        return flag, "flag"
    env = os.environ.get(SEED_ENV)
    if env not in (None, ""):
        try:
            return int(env), "env"
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env!r}") from exc
    return 0, "default"


def _dump(obj, path=None) -> str:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text


# --- subcommands --------------------------------------------------------------

def cmd_generate(args, cfg: RunConfig, seed, seed_source):
    out = args.output or cfg.paths.get("dataset")
    if not out:
        raise ConfigError("generate needs an output path (--output or paths.dataset)")
    gen = dict(cfg.generator)
    if args.seed is not None or "seed" not in gen:
        gen["seed"] = seed
    try:
        ds = make_source(gen)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid generator spec: {exc}") from exc
    save_dataset(ds, out)
    sys.stdout.write(_dump(ds.manifest.to_json()))
    return 0


def cmd_train(args, cfg: RunConfig, seed, seed_source):
    out = Path(args.output or cfg.paths.get("checkpoints") or "")
    if not str(out) or str(out) == ".":
        raise ConfigError("train needs an output directory (--output or paths.checkpoints)")
    if args.epochs is not None:
        cfg.training["epochs"] = args.epochs
    if args.concat_mode:
        cfg.adaptation["concat_mode"] = args.concat_mode
    meter = cfg.meter_config(seed)
    ds = load_dataset(args.dataset)
    stats = {n: AffineRecord.from_stats(dataset_stats(ds, n)) for n in ("x", "y")}
    out.mkdir(parents=True, exist_ok=True)
    status = 0
    for bid, sub in BRANCH_DIRS.items():
        try:
            branch = train_branch(ds, bid, meter.train, concat_mode=meter.concat_mode, stats=stats)
        except TrainingDivergedError as exc:
            log.error("%s", exc)
            _write_curve(exc.curve, out / f"curve_{bid}.csv")
            status = 1
            continue
        save_checkpoint(branch, out / sub)
        write_training_curve(branch, out / f"curve_{bid}.csv")
    _dump({"command": "train", "config": cfg.to_json(), "dataset_id": ds.dataset_id,
           "seed": seed, "seed_source": seed_source, "status": status}, out / "train_manifest.json")
    return status


def _write_curve(curve, path):
    with open(path, "w") as f:
        f.write("epoch,mean_bits_per_element\n")
        for i, v in enumerate(curve, 1):
            f.write(f"{i},{float(v)!r}\n")


def _mi_report(est: MIEstimate, seed, seed_source, **extra) -> dict:
    return {"kind": "mi_report", "format_version": 1, "seed": seed, "seed_source": seed_source,
            "mi": est.to_json(), **extra}


def cmd_estimate(args, cfg: RunConfig, seed, seed_source):
    if args.from_entropies:
        hx, hy, hxy = (EntropyEstimate.from_rate(v, 1) for v in args.from_entropies)
        est = MIEstimate.from_entropies(hx, hy, hxy, args.concat_mode, warn=False)
        text = _dump(_mi_report(est, seed, seed_source, source="constituents"), args.output)
        sys.stdout.write(text)
        return 0
    if not (args.checkpoints and args.dataset):
        raise ConfigError("estimate needs --checkpoints and --dataset (or --from-entropies)")
    ck = Path(args.checkpoints)
    try:
        branches = Branches(*(load_checkpoint(ck / BRANCH_DIRS[b]) for b in ("x", "y", "joint")))
    except CheckpointError as exc:
        raise ConfigError(str(exc)) from exc
    if args.concat_mode and args.concat_mode != branches.joint.concat_mode:
        raise ConfigError(
            f"requested concat_mode {args.concat_mode!r} but the joint checkpoint "
            f"was trained with {branches.joint.concat_mode!r}")
    ds = load_dataset(args.dataset)
    if tuple(ds.shape) != tuple(branches.x.map_shape):
        raise ConfigError(f"dataset shape {ds.shape} does not match checkpoints {branches.x.map_shape}")
    est = estimate_mi(branches, ds)
    report = _mi_report(est, seed, seed_source, source="checkpoints",
                        dataset=ds.manifest.to_json(),
                        checkpoints={b.branch_id: {"config": asdict(b.config),
                                                   "affine_records": {k: r.to_json() for k, r in sorted(b.records.items())}}
                                     for b in branches})
    sys.stdout.write(_dump(report, args.output))
    return 0


def cmd_perturb(args, cfg: RunConfig, seed, seed_source):
    spec_d = json.loads(args.spec) if args.spec else cfg.perturbation
    if not spec_d:
        raise ConfigError("perturb needs --spec or a 'perturbation' config section")
    spec_d = dict(spec_d)
    if args.seed is not None or "seed" not in spec_d:
        spec_d["seed"] = seed
    try:
        spec = PerturbationSpec.from_json(spec_d)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"invalid perturbation spec: {exc}") from exc
    ds = apply_perturbation(load_dataset(args.dataset), spec)
    save_dataset(ds, args.output)
    sys.stdout.write(_dump(ds.manifest.to_json()))
    return 0


def cmd_benchmark(args, cfg: RunConfig, seed, seed_source):
    if not cfg.benchmark:
        raise ConfigError("benchmark needs a 'benchmark' config section")
    b = dict(cfg.benchmark)
    b.setdefault("source", dict(cfg.generator, seed=seed))
    est = b.setdefault("estimator", {})
    est.setdefault("concat_mode", cfg.adaptation.get("concat_mode", "quilt"))
    est.setdefault("train", asdict(cfg.train_config(seed)))
    if args.epochs is not None:
        est["train"]["epochs"] = args.epochs
    try:
        bcfg = BenchmarkConfig.from_json(b).validate()
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid benchmark config: {exc}") from exc
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    report = run_benchmark(bcfg)
    doc = dict(report.to_json(), seed=seed, seed_source=seed_source, kind="benchmark_report")
    _dump(doc, out / "report.json")
    write_report_csv(doc, out / "report.csv")
    if args.plot:
        plot_report(doc, out / "report.svg")
    return 1 if report.failed else 0


def cmd_report(args, cfg: RunConfig, seed, seed_source):
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    for inp in args.inputs:
        doc = json.loads(Path(inp).read_text())
        stem = Path(inp).stem
        if doc.get("kind") == "benchmark_report":
            write_report_csv(doc, out / f"{stem}.csv")
            plot_report(doc, out / f"{stem}.svg")
        elif doc.get("kind") == "mi_report":
            conds = {"conditions": [{"label": stem, "mi": doc["mi"], "error": None}]}
            write_report_csv(conds, out / f"{stem}.csv")
        else:
            raise ConfigError(f"{inp} is not a report produced by this tool")
    return 0


def plot_report(doc: dict, path) -> None:
    """MI per condition (estimator and oracle) as SVG, reproducible from the JSON alone."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    ok = [c for c in doc["conditions"] if not c.get("error")]
    labels = [c["label"] for c in ok]
    with matplotlib.rc_context({"svg.hashsalt": "infometer", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        xs = range(len(ok))
        ax.plot(xs, [c["mi"]["i_bits_per_x_element"] for c in ok], "o-", label="estimate")
        ax.plot(xs, [c["oracle_mi"] for c in ok], "s--", label="binned plug-in")
        analytic = [c.get("analytic_mi") for c in ok]
        if all(a is not None for a in analytic) and ok:
            ax.plot(xs, analytic, "k:", label="analytic (unperturbed)")
        ax.set_xticks(list(xs))
        ax.set_xticklabels(labels, rotation=20)
        ax.set_ylabel("MI (bits per x element)")
        ax.legend()
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)


# --- argument parsing ---------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="infometer", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("--seed", type=int, default=None, help=f"global seed (default ${SEED_ENV} or 0)")
    p.add_argument("--config", default=None, help="JSON run config")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic dataset")
    g.add_argument("--output", "-o", required=True)

    t = sub.add_parser("train", help="train the three branches on a dataset")
    t.add_argument("--dataset", required=True)
    t.add_argument("--output", "-o", required=True)
    t.add_argument("--epochs", type=int)
    t.add_argument("--concat-mode", choices=CONCAT_MODES)

    e = sub.add_parser("estimate", help="MI report from checkpoints and a dataset")
    e.add_argument("--checkpoints")
    e.add_argument("--dataset")
    e.add_argument("--output", "-o")
    e.add_argument("--concat-mode", choices=CONCAT_MODES)
    e.add_argument("--from-entropies", nargs=3, type=float, metavar=("HX", "HY", "HXY"),
                   help="assemble a report from per-element entropies, no model needed")

    q = sub.add_parser("perturb", help="apply one perturbation to a dataset")
    q.add_argument("--dataset", required=True)
    q.add_argument("--output", "-o", required=True)
    q.add_argument("--spec", help="perturbation spec as JSON text")

    b = sub.add_parser("benchmark", help="run a benchmark sweep")
    b.add_argument("--output", "-o", required=True)
    b.add_argument("--epochs", type=int)
    b.add_argument("--plot", action="store_true")

    r = sub.add_parser("report", help="CSV and plots from JSON reports")
    r.add_argument("inputs", nargs="+")
    r.add_argument("--output", "-o", required=True)
    return p


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "estimate": cmd_estimate,
    "perturb": cmd_perturb,
    "benchmark": cmd_benchmark,
    "report": cmd_report,
}


def _fail(code: int, exc: BaseException) -> int:
    sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code},
                                sort_keys=True) + "\n")
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        seed, seed_source = resolve_seed(args.seed)
        cfg = RunConfig.load(args.config)
        return COMMANDS[args.command](args, cfg, seed, seed_source)
    except (ConfigError, DatasetFormatError) as exc:
        return _fail(2, exc)
    except Exception as exc:  # runtime failure, reported as JSON
        log.debug("command failed", exc_info=True)
        return _fail(1, exc)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
