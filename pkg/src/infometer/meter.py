"""Three-branch mutual information estimate.

``I(X;Y) = H(X) + H(Y) - H(X,Y)``: each entropy comes from its own trained
branch (transform + entropy model), the joint one from the concatenated map.
The joint map holds twice as many elements as either source, so the
per-element rates do not combine directly; three conventions are reported:

``i_total_bits``
    ``Hx.total + Hy.total - Hxy.total``. The consistent quantity.
``i_bits_per_x_element``
    ``i_total_bits`` divided by the number of x elements.
``i_paper_convention``
    ``Hx.bpe + Hy.bpe - Hxy.bpe``, the arithmetic used by published tables
    that list per-element rates (6.0 + 5.8 - 6.1 = 5.7).
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

from .adapt import AffineRecord, CONCAT_MODES, dataset_stats
from .entropy import BranchModel, EntropyEstimate, TrainConfig, estimate_entropy, train_branch

__all__ = [
    "InfoMeterConfig",
    "Branches",
    "MIEstimate",
    "NegativeMIWarning",
    "CONVENTIONS",
    "fit_infometer",
    "estimate_mi",
    "compare_runs",
    "write_comparison_csv",
]

CONVENTIONS = ("i_total_bits", "i_bits_per_x_element", "i_paper_convention")


class NegativeMIWarning(UserWarning):
    """The assembled estimate is negative: a visible sign of estimator bias."""


@dataclass
class InfoMeterConfig:
    concat_mode: str = "quilt"
    train: TrainConfig = field(default_factory=TrainConfig)

    def validate(self) -> "InfoMeterConfig":
        if self.concat_mode not in CONCAT_MODES:
            raise ValueError(f"concat_mode must be one of {CONCAT_MODES}, got {self.concat_mode!r}")
        self.train.validate()
        return self

    @classmethod
    def paper_profile(cls, **train_overrides) -> "InfoMeterConfig":
        """Tiled joint map, as in the camera-LiDAR study."""
        return cls("tile", TrainConfig(**train_overrides))


@dataclass
class Branches:
    x: BranchModel
    y: BranchModel
    joint: BranchModel

    def __iter__(self):
        return iter((self.x, self.y, self.joint))


@dataclass(frozen=True)
class MIEstimate:
    h_x: EntropyEstimate
    h_y: EntropyEstimate
    h_xy: EntropyEstimate
    i_total_bits: float
    i_bits_per_x_element: float
    i_paper_convention: float
    concat_mode: str | None = None
    dataset_id: str = ""
    negative: bool = False

    @classmethod
    def from_entropies(cls, h_x, h_y, h_xy, concat_mode=None, dataset_id="", warn=True) -> "MIEstimate":
        """Assemble all conventions from three entropy estimates (pure arithmetic)."""
        total = math.fsum([h_x.total_bits, h_y.total_bits, -h_xy.total_bits])
        paper = math.fsum([h_x.bits_per_element, h_y.bits_per_element, -h_xy.bits_per_element])
        negative = total < 0 or paper < 0
        if negative and warn:
            warnings.warn(
                f"negative MI estimate (total {total:.6g} bits); reported unclipped",
                NegativeMIWarning,
                stacklevel=2,
            )
        return cls(h_x, h_y, h_xy, total, total / h_x.element_count, paper,
                   concat_mode, dataset_id, negative)

    def value(self, convention: str) -> float:
        if convention not in CONVENTIONS:
            raise ValueError(f"unknown convention {convention!r}; expected one of {CONVENTIONS}")
        return getattr(self, convention)

    def to_json(self) -> dict:
        return {
            "concat_mode": self.concat_mode,
            "dataset_id": self.dataset_id,
            "h_x": self.h_x.to_json(),
            "h_y": self.h_y.to_json(),
            "h_xy": self.h_xy.to_json(),
            "i_total_bits": self.i_total_bits,
            "i_bits_per_x_element": self.i_bits_per_x_element,
            "i_paper_convention": self.i_paper_convention,
            "negative_bias_warning": self.negative,
        }

    @classmethod
    def from_json(cls, d) -> "MIEstimate":
        h = {k: EntropyEstimate(**d[k]) for k in ("h_x", "h_y", "h_xy")}
        return cls(h["h_x"], h["h_y"], h["h_xy"], d["i_total_bits"], d["i_bits_per_x_element"],
                   d["i_paper_convention"], d.get("concat_mode"), d.get("dataset_id", ""),
                   d.get("negative_bias_warning", False))


def fit_infometer(dataset, config: InfoMeterConfig | None = None) -> Branches:
    """Train the x, y and joint branches on one dataset with shared rescaling stats."""
    config = (config or InfoMeterConfig()).validate()
    stats = {n: AffineRecord.from_stats(dataset_stats(dataset, n)) for n in ("x", "y")}
    return Branches(
        train_branch(dataset, "x", config.train, stats=stats),
        train_branch(dataset, "y", config.train, stats=stats),
        train_branch(dataset, "joint", config.train, concat_mode=config.concat_mode, stats=stats),
    )


def estimate_mi(branches: Branches, dataset, warn: bool = True) -> MIEstimate:
    bx, by, bj = branches
    if bx.records["x"] != bj.records["x"] or by.records["y"] != bj.records["y"]:
        raise ValueError("branches were trained with different rescaling stats")
    h_x = estimate_entropy(bx, dataset)
    h_y = estimate_entropy(by, dataset)
    h_xy = estimate_entropy(bj, dataset)
    return MIEstimate.from_entropies(h_x, h_y, h_xy, bj.concat_mode, dataset.dataset_id, warn=warn)


def compare_runs(estimates: Sequence[tuple[str, MIEstimate]], convention="i_total_bits",
                 allow_mixed: bool = False) -> list[dict]:
    """Rows sorted by ascending MI with deltas to the previous and to the lowest row.

    ``convention`` is one name or one name per estimate; distinct names in
    one table need ``allow_mixed=True``.
    """
    if len(estimates) < 2:
        raise ValueError("comparison needs at least two estimates")
    conv = [convention] * len(estimates) if isinstance(convention, str) else list(convention)
    if len(conv) != len(estimates):
        raise ValueError("one convention per estimate is required")
    if len(set(conv)) > 1 and not allow_mixed:
        raise ValueError(f"mixed conventions {sorted(set(conv))} need allow_mixed=True")
    rows = [
        {"label": label, "convention": c, "mi": est.value(c),
         "h_x": est.h_x.bits_per_element, "h_y": est.h_y.bits_per_element,
         "h_xy": est.h_xy.bits_per_element}
        for (label, est), c in zip(estimates, conv)
    ]
    rows.sort(key=lambda r: r["mi"])
    for i, r in enumerate(rows):
        r["delta_prev"] = 0.0 if i == 0 else math.fsum([r["mi"], -rows[i - 1]["mi"]])
        r["delta_min"] = math.fsum([r["mi"], -rows[0]["mi"]])
    return rows


def write_comparison_csv(rows: list[dict], path) -> None:
    cols = ["label", "convention", "mi", "delta_prev", "delta_min", "h_x", "h_y", "h_xy"]
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: r[k] for k in cols})
