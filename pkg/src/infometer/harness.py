"""Controlled dataset manipulations and benchmark sweeps.

Desk-scale counterparts of the four manipulation schemes used to vary the
dependence between two modalities:

* :func:`split_by_statistic` -- sort samples by a per-sample statistic and
  cut them into equal-size groups (clutter split).
* :func:`region_replace` -- overwrite random rectangles of one source with
  values resampled from that source's marginal (a stand-in for masking and
  inpainting; the other source is left untouched).
* :func:`add_noise_snr` -- additive Gaussian noise at a target SNR (rain).

:func:`run_benchmark` fits the estimator on each condition and reports it next
to a binned plug-in oracle.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import traceback
from dataclasses import asdict, dataclass, field
from typing import Any, Mapping

import numpy as np
from scipy import ndimage

from . import sources
from .entropy import TrainConfig
from .meter import InfoMeterConfig, estimate_mi, fit_infometer
from .oracles import binned_mi
from .sources import Dataset, sample_rng

__all__ = [
    "PerturbationSpec",
    "Condition",
    "BenchmarkConfig",
    "BenchmarkReport",
    "add_noise_snr",
    "region_replace",
    "split_by_statistic",
    "sample_statistic",
    "apply_perturbation",
    "make_source",
    "run_benchmark",
]

log = logging.getLogger(__name__)

TARGETS = ("x", "y", "both")
_NOISE_STREAM = 21
_REGION_STREAM = 22


@dataclass(frozen=True)
class PerturbationSpec:
    kind: str
    params: dict
    target: str = "x"
    seed: int = 0

    def __post_init__(self):
        if self.target not in TARGETS:
            raise ValueError(f"target must be one of {TARGETS}, got {self.target!r}")
        if self.kind == "noise_snr":
            if not math.isfinite(float(self.params.get("snr_db", math.nan))):
                raise ValueError("noise_snr needs a finite snr_db")
        elif self.kind == "region_replace":
            frac = float(self.params.get("mask_frac", -1))
            if not 0.0 <= frac <= 1.0:
                raise ValueError(f"mask_frac must be in [0, 1], got {frac}")
        elif self.kind == "split_by_stat":
            if int(self.params.get("n_bins", 0)) < 2:
                raise ValueError("split_by_stat needs n_bins >= 2")
        else:
            raise ValueError(f"unknown perturbation kind {self.kind!r}")

    @classmethod
    def from_json(cls, d: Mapping[str, Any]) -> "PerturbationSpec":
        return cls(d["kind"], dict(d.get("params", {})), d.get("target", "x"), int(d.get("seed", 0)))

    def to_json(self) -> dict:
        return {"kind": self.kind, "params": self.params, "target": self.target, "seed": self.seed}


def _targets(target: str) -> tuple[str, ...]:
    if target not in TARGETS:
        raise ValueError(f"target must be one of {TARGETS}, got {target!r}")
    return ("x", "y") if target == "both" else (target,)


def add_noise_snr(dataset: Dataset, snr_db: float, target: str = "both", seed: int = 0) -> Dataset:
    """Add zero-mean Gaussian noise with variance ``P_signal / 10**(snr_db / 10)``.

    Signal power is the mean square of the target source over the whole
    dataset. The achieved SNR per source is recorded in the manifest.
    """
    if not math.isfinite(snr_db):
        raise ValueError("snr_db must be finite")
    arrays = {"x": dataset.x, "y": dataset.y}
    achieved = {}
    for k, name in enumerate(_targets(target)):
        sig = arrays[name].astype(np.float64)
        power = float(np.mean(sig ** 2))
        if power <= 0:
            raise ValueError(f"source {name} has zero signal power")
        std = math.sqrt(power / 10 ** (snr_db / 10))
        noise = np.empty_like(sig)
        for i in range(len(sig)):
            noise[i] = sample_rng(seed, _NOISE_STREAM * 10 + k, i).standard_normal(sig.shape[1:])
        noise *= std
        arrays[name] = sig + noise
        achieved[name] = 10 * math.log10(power / float(np.mean(noise ** 2)))
    history = dataset.manifest.extra.get("perturbations", []) + [
        {"kind": "noise_snr", "snr_db": snr_db, "target": target, "seed": seed,
         "achieved_snr_db": achieved}
    ]
    return dataset.with_arrays(arrays["x"], arrays["y"], perturbations=history)


def _cover(h: int, w: int, frac: float, rng: np.random.Generator) -> np.ndarray:
    """Union of random axis-aligned rectangles covering ``round(frac*h*w)`` cells."""
    need = int(round(frac * h * w))
    mask = np.zeros((h, w), dtype=bool)
    if need >= h * w:
        mask[:] = True
        return mask
    hmax, wmax = max(1, h // 4), max(1, w // 4)
    covered = 0
    for _ in range(100 * h * w):
        left = need - covered
        if left <= 0:
            break
        rh = int(rng.integers(1, min(hmax, left) + 1))
        rw = int(rng.integers(1, min(wmax, max(1, left // rh)) + 1))
        r0 = int(rng.integers(0, h - rh + 1))
        c0 = int(rng.integers(0, w - rw + 1))
        mask[r0: r0 + rh, c0: c0 + rw] = True
        covered = int(mask.sum())
    return mask


def region_replace(dataset: Dataset, mask_frac: float, target: str = "x", seed: int = 0) -> Dataset:
    """Replace random rectangles covering ``mask_frac`` of each target map.

    Replacement values are drawn with replacement from all values of the
    target source in the dataset (its empirical marginal).
    """
    if not 0.0 <= mask_frac <= 1.0:
        raise ValueError(f"mask_frac must be in [0, 1], got {mask_frac}")
    arrays = {"x": dataset.x, "y": dataset.y}
    fractions = {}
    h, w = dataset.shape
    for k, name in enumerate(_targets(target)):
        src = arrays[name]
        pool = src.ravel()
        out = src.copy()
        replaced = 0
        for i in range(len(src)):
            rng = sample_rng(seed, _REGION_STREAM * 10 + k, i)
            mask = _cover(h, w, mask_frac, rng)
            n = int(mask.sum())
            out[i][mask] = pool[rng.integers(0, pool.size, n)]
            replaced += n
        arrays[name] = out
        fractions[name] = replaced / src.size
    history = dataset.manifest.extra.get("perturbations", []) + [
        {"kind": "region_replace", "mask_frac": mask_frac, "target": target, "seed": seed,
         "replaced_fraction": fractions}
    ]
    return dataset.with_arrays(arrays["x"], arrays["y"], perturbations=history)


def sample_statistic(dataset: Dataset, stat_id: str, branch: str = "x", threshold: float | None = None) -> np.ndarray:
    """Per-sample statistic: ``variance`` or ``blob_count``.

    ``blob_count`` counts 4-connected regions above ``threshold`` (default:
    dataset mean plus one standard deviation of the branch).
    """
    arr = getattr(dataset, branch).astype(np.float64)
    if stat_id == "variance":
        return arr.reshape(len(arr), -1).var(axis=1)
    if stat_id == "blob_count":
        thr = arr.mean() + arr.std() if threshold is None else threshold
        return np.array([ndimage.label(a > thr)[1] for a in arr], dtype=np.float64)
    raise ValueError(f"unknown statistic {stat_id!r}")


def split_by_statistic(dataset: Dataset, stat_id: str, n_bins: int, branch: str = "x",
                       threshold: float | None = None) -> list[Dataset]:
    """Sort by a statistic (stable) and cut into ``n_bins`` contiguous groups.

    Groups have ``len(dataset) // n_bins`` samples; the remainder goes to the last.
    """
    if n_bins < 2:
        raise ValueError("n_bins must be >= 2")
    if len(dataset) < n_bins:
        raise ValueError(f"{len(dataset)} samples cannot fill {n_bins} bins")
    stat = sample_statistic(dataset, stat_id, branch, threshold)
    order = np.argsort(stat, kind="stable")
    size = len(dataset) // n_bins
    out = []
    for b in range(n_bins):
        idx = order[b * size: (b + 1) * size if b < n_bins - 1 else len(order)]
        out.append(dataset.subset(idx, split={"stat": stat_id, "bin": b, "n_bins": n_bins,
                                              "stat_range": [float(stat[idx].min()), float(stat[idx].max())]}))
    return out


def apply_perturbation(dataset: Dataset, spec: PerturbationSpec):
    """Apply one spec; ``split_by_stat`` returns the bin named by ``params['bin']``."""
    p = spec.params
    if spec.kind == "noise_snr":
        return add_noise_snr(dataset, float(p["snr_db"]), spec.target, spec.seed)
    if spec.kind == "region_replace":
        return region_replace(dataset, float(p["mask_frac"]), spec.target, spec.seed)
    bins = split_by_statistic(dataset, p.get("stat_id", "variance"), int(p["n_bins"]),
                              p.get("branch", "x"), p.get("threshold"))
    return bins[int(p.get("bin", 0))]


_GENERATORS = {
    "independent": lambda p, H, W, n, s: sources.gen_independent(p["marginal"], H, W, n, s),
    "identical": lambda p, H, W, n, s: sources.gen_identical(p["marginal"], H, W, n, s),
    "gaussian_pair": lambda p, H, W, n, s: sources.gen_gaussian_pair(float(p["rho"]), H, W, n, s),
    "discrete_iid": lambda p, H, W, n, s: sources.gen_discrete_iid(p["pmf"], H, W, n, s, p.get("support")),
}


def make_source(spec: Mapping[str, Any]) -> Dataset:
    """Build a dataset from ``{"id", "params", "shape", "n_samples", "seed"}``."""
    gid = spec.get("id")
    if gid not in _GENERATORS:
        raise ValueError(f"unknown generator {gid!r}; expected one of {sorted(_GENERATORS)}")
    H, W = spec.get("shape", (32, 32))
    return _GENERATORS[gid](spec.get("params", {}), int(H), int(W), int(spec.get("n_samples", 2000)),
                            int(spec.get("seed", 0)))


@dataclass
class Condition:
    label: str
    perturbations: list = field(default_factory=list)
    source: dict | None = None

    @classmethod
    def from_json(cls, d) -> "Condition":
        return cls(d["label"], [PerturbationSpec.from_json(p) for p in d.get("perturbations", [])],
                   d.get("source"))


@dataclass
class BenchmarkConfig:
    source: dict
    conditions: list
    estimator: InfoMeterConfig = field(default_factory=InfoMeterConfig)
    oracle_bins: int = 16

    def validate(self) -> "BenchmarkConfig":
        if not self.conditions:
            raise ValueError("benchmark needs at least one condition")
        labels = [c.label for c in self.conditions]
        if len(set(labels)) != len(labels):
            raise ValueError("condition labels must be unique")
        self.estimator.validate()
        return self

    @classmethod
    def from_json(cls, d) -> "BenchmarkConfig":
        est = d.get("estimator", {})
        return cls(
            source=dict(d["source"]),
            conditions=[Condition.from_json(c) for c in d.get("conditions", [])],
            estimator=InfoMeterConfig(est.get("concat_mode", "quilt"), TrainConfig(**est.get("train", {}))),
            oracle_bins=int(d.get("oracle_bins", 16)),
        )

    def to_json(self) -> dict:
        return {
            "source": self.source,
            "conditions": [{"label": c.label, "source": c.source,
                            "perturbations": [p.to_json() for p in c.perturbations]}
                           for c in self.conditions],
            "estimator": {"concat_mode": self.estimator.concat_mode,
                          "train": asdict(self.estimator.train)},
            "oracle_bins": self.oracle_bins,
        }


@dataclass
class BenchmarkReport:
    config: dict
    conditions: list  # one dict per condition
    pairs: list       # sign comparisons between successful conditions

    @property
    def failed(self) -> list:
        return [c for c in self.conditions if c.get("error")]

    def to_json(self) -> dict:
        return {"config": self.config, "conditions": self.conditions, "pairs": self.pairs}

    def write_json(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_json(), f, indent=2, sort_keys=True)
            f.write("\n")

    CSV_COLUMNS = ("condition", "h_x", "h_y", "h_xy", "i_total_bits", "i_bits_per_x_element",
                   "i_paper_convention", "oracle_mi", "analytic_mi", "sign_agree_vs_first", "error")

    def write_csv(self, path) -> None:
        write_report_csv(self.to_json(), path)


def write_report_csv(report: Mapping[str, Any], path) -> None:
    """Per-condition table; every number is copied from the JSON report.

    ``sign_agree_vs_first`` is the ``sign_agree`` of the pair formed with the
    first successful condition (blank for that condition itself).
    """
    ok = [c["label"] for c in report["conditions"] if not c.get("error")]
    agree = {p["b"]: p["sign_agree"] for p in report.get("pairs", []) if ok and p["a"] == ok[0]}
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(BenchmarkReport.CSV_COLUMNS)
        for c in report["conditions"]:
            mi = c.get("mi") or {}
            row = [c["label"]]
            row += [mi[k]["bits_per_element"] if k in mi else "" for k in ("h_x", "h_y", "h_xy")]
            row += [mi.get(k, "") for k in ("i_total_bits", "i_bits_per_x_element", "i_paper_convention")]
            row += [c.get("oracle_mi", ""), c.get("analytic_mi", ""), agree.get(c["label"], ""),
                    c.get("error") or ""]
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def _sign(v: float) -> int:
    return (v > 0) - (v < 0)


def run_benchmark(config: BenchmarkConfig) -> BenchmarkReport:
    """Generate, perturb, fit and estimate every condition; compare against the oracle.

    Failures are recorded per condition and the remaining conditions still run.
    ``pairs`` holds, for every pair of successful conditions, the estimator and
    oracle differences and whether their signs agree.
    """
    config.validate()
    results = []
    for cond in config.conditions:
        row = {"label": cond.label, "perturbations": [p.to_json() for p in cond.perturbations],
               "error": None}
        try:
            ds = make_source(cond.source or config.source)
            for spec in cond.perturbations:
                ds = apply_perturbation(ds, spec)
            branches = fit_infometer(ds, config.estimator)
            est = estimate_mi(branches, ds, warn=False)
            row["mi"] = est.to_json()
            row["oracle_mi"] = binned_mi(ds.x, ds.y, config.oracle_bins)
            row["analytic_mi"] = ds.manifest.analytic_mi_bits_per_element
            row["dataset_extra"] = ds.manifest.extra
            row["training_curves"] = {b.branch_id: b.training_curve for b in branches}
            row["selected_epochs"] = {b.branch_id: b.selected_epoch for b in branches}
        except Exception as exc:  # recorded, benchmark continues
            log.warning("condition %s failed: %s", cond.label, exc)
            row["error"] = f"{type(exc).__name__}: {exc}"
            row["traceback"] = traceback.format_exc()
        results.append(row)

    ok = [r for r in results if not r["error"]]
    pairs = []
    for i in range(len(ok)):
        for j in range(i + 1, len(ok)):
            a, b = ok[i], ok[j]
            d_est = b["mi"]["i_bits_per_x_element"] - a["mi"]["i_bits_per_x_element"]
            d_orc = b["oracle_mi"] - a["oracle_mi"]
            pairs.append({"a": a["label"], "b": b["label"], "delta_estimate": d_est,
                          "delta_oracle": d_orc, "sign_agree": _sign(d_est) == _sign(d_orc)})
    return BenchmarkReport(config.to_json(), results, pairs)
