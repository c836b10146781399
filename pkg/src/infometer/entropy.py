"""Entropy models over integer coefficient maps, and per-branch training.

An entropy estimate is the average negative log2-likelihood of the
coefficients under a trained model, i.e. a cross-entropy, which upper-bounds
the true entropy up to sampling error.

Two density families are provided:

* :class:`FactorizedModel` -- one learned PMF per position class. The PMF is
  the increment of a monotone piecewise-linear cumulative function, so the
  likelihood of a noisy (relaxed) value interpolates between adjacent bins.
* :class:`ARContextModel` -- a discretized logistic per element whose mean is
  linear in a causal raster-order context and whose scale is per position
  class. Values outside ``[v_min, v_max]`` fall in open-ended tail bins.

Training (:func:`train_branch`) minimizes a relaxed loss with additive
``U(-1/2, 1/2)`` noise. By default the transform rounds in the forward pass
(straight-through gradient) and the noise goes on the coefficients; the
alternative puts the noise on the input of the rounding-free transform.
Evaluation (:func:`estimate_entropy`) uses the exact integer transform.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .adapt import AffineRecord, concat, dataset_stats, quantize_array
from .transform import LiftingTransform, lattice_classes

__all__ = [
    "FactorizedModel",
    "ARContextModel",
    "TrainConfig",
    "BranchModel",
    "EntropyEstimate",
    "TrainingDivergedError",
    "BRANCH_IDS",
    "position_classes",
    "causal_offsets",
    "nll_bits",
    "branch_maps",
    "make_branch",
    "train_branch",
    "estimate_entropy",
    "write_training_curve",
]

log = logging.getLogger(__name__)

BRANCH_IDS = ("x", "y", "joint")
LN2 = math.log(2.0)
# finite stand-in for an infinite bin edge; keeps gradients free of inf * 0
_EDGE = 1e30


class TrainingDivergedError(RuntimeError):
    def __init__(self, message, curve):
        super().__init__(message)
        self.curve = list(curve)


def position_classes(h: int, w: int, levels: int, layout: str = "single") -> tuple[np.ndarray, int]:
    """Class id of every element and the number of classes.

    Classes are the lattice phase of the lifting transform, split further by
    source for joint maps: column parity for ``quilt``, left/right half for
    ``tile``.
    """
    lattice = lattice_classes(h, w, levels)
    n_lattice = 4 ** levels
    cols = np.arange(w)[None, :]
    if layout == "single":
        return lattice, n_lattice
    if layout == "quilt":
        region = np.broadcast_to(cols % 2, (h, w))
    elif layout == "tile":
        region = np.broadcast_to((cols >= w // 2).astype(np.int64), (h, w))
    else:
        raise ValueError(f"unknown layout {layout!r}")
    return region * n_lattice + lattice, 2 * n_lattice


def causal_offsets(context: int) -> list[tuple[int, int]]:
    """Offsets inside a ``context x context`` window that precede the centre in raster order."""
    if context < 1 or context % 2 == 0:
        raise ValueError(f"context window must be a positive odd size, got {context}")
    r = context // 2
    return [(dr, dc) for dr in range(-r, 1) for dc in range(-r, r + 1) if dr < 0 or dc < 0]


def _log1mexp(x):
    """log(1 - exp(x)) for x <= 0, stable at both ends."""
    x = torch.clamp(x, max=-1e-300)
    near = x > -LN2
    a = torch.log(-torch.expm1(torch.where(near, x, torch.full_like(x, -1.0))))
    b = torch.log1p(-torch.exp(torch.where(near, torch.full_like(x, -1.0), x)))
    return torch.where(near, a, b)


def _log_interval(lo, hi):
    """log(sigmoid(hi) - sigmoid(lo)) for lo < hi, using the tail on the smaller side."""
    flip = lo > 0
    lo2 = torch.where(flip, -hi, lo)
    hi2 = torch.where(flip, -lo, hi)
    lhi = F.logsigmoid(hi2)
    return lhi + _log1mexp(F.logsigmoid(lo2) - lhi)


class _Density(nn.Module):
    """Shared plumbing: support bounds and a per-position class map."""

    def __init__(self, class_map: np.ndarray, n_classes: int, v_min: int, v_max: int):
        super().__init__()
        if v_max <= v_min:
            raise ValueError("support needs v_max > v_min")
        self.v_min, self.v_max = int(v_min), int(v_max)
        self.n_classes = int(n_classes)
        self.register_buffer("class_map", torch.as_tensor(np.asarray(class_map), dtype=torch.long))

    @property
    def map_shape(self) -> tuple[int, int]:
        return tuple(self.class_map.shape)

    def _check(self, v):
        if tuple(v.shape[-2:]) != self.map_shape:
            raise ValueError(f"map shape {tuple(v.shape[-2:])} does not match model {self.map_shape}")

    def log2_prob_int(self, v: torch.Tensor) -> torch.Tensor:  # pragma: no cover - abstract
        raise NotImplementedError

    def log2_likelihood(self, y: torch.Tensor, context=None) -> torch.Tensor:  # pragma: no cover - abstract
        raise NotImplementedError


class FactorizedModel(_Density):
    """Per-class PMF over ``v_min..v_max``; the edge bins absorb the tails."""

    def __init__(self, class_map, n_classes, v_min=-256, v_max=511):
        super().__init__(class_map, n_classes, v_min, v_max)
        k = self.v_max - self.v_min + 1
        self.logits = nn.Parameter(torch.zeros(self.n_classes, k, dtype=torch.float64))

    def pmf(self) -> torch.Tensor:
        return torch.softmax(self.logits, dim=-1)

    def cdf(self) -> torch.Tensor:
        """Cumulative function at bin edges ``v_min - 1/2, ..., v_max + 1/2``."""
        c = torch.cumsum(self.pmf(), dim=-1)
        return torch.cat([torch.zeros_like(c[:, :1]), c], dim=-1)

    def init_from_data(self, maps: np.ndarray, alpha: float | None = None):
        """Set each class PMF to the smoothed histogram of ``maps``.

        ``alpha`` is the pseudo-count added to every bin; the default spreads a
        single count over the whole support.
        """
        maps = np.asarray(maps)
        k = self.logits.shape[1]
        alpha = 1.0 / k if alpha is None else alpha
        idx = np.clip(maps - self.v_min, 0, k - 1)
        cls = np.broadcast_to(self.class_map.numpy(), maps.shape)
        counts = np.bincount((cls * k + idx).ravel(), minlength=self.n_classes * k)
        counts = counts.reshape(self.n_classes, k).astype(np.float64) + alpha
        with torch.no_grad():
            self.logits.copy_(torch.from_numpy(np.log(counts)))

    def log2_prob_int(self, v):
        self._check(v)
        k = self.logits.shape[1]
        idx = torch.clamp(v - self.v_min, 0, k - 1)
        logp = torch.log_softmax(self.logits, dim=-1)
        cls = self.class_map.expand_as(idx)
        return logp[cls, idx] / LN2

    def log2_likelihood(self, y, context=None):
        self._check(y)
        k = self.logits.shape[1]
        t = torch.clamp(y - self.v_min, 0, k - 1)
        lo = torch.clamp(torch.floor(t).long(), max=k - 2)
        frac = t - lo
        p = self.pmf()
        cls = self.class_map.expand_as(lo)
        mass = (1 - frac) * p[cls, lo] + frac * p[cls, lo + 1]
        return torch.log(torch.clamp(mass, min=1e-300)) / LN2


class ARContextModel(_Density):
    """Discretized logistic conditioned on a causal raster-order context.

    ``mean = bias[c] + weight[c] . context`` and ``scale = scale_min + softplus(raw[c])``
    for position class ``c``. Context elements outside the map read as zero.
    """

    def __init__(self, class_map, n_classes, context=3, v_min=-256, v_max=511, scale_min=0.02):
        super().__init__(class_map, n_classes, v_min, v_max)
        self.context = int(context)
        self.offsets = causal_offsets(self.context)
        self.scale_min = float(scale_min)
        j = len(self.offsets)
        self.weight = nn.Parameter(torch.zeros(self.n_classes, j, dtype=torch.float64))
        self.bias = nn.Parameter(torch.full((self.n_classes,), 128.0, dtype=torch.float64))
        self.scale_raw = nn.Parameter(torch.full((self.n_classes,), 64.0, dtype=torch.float64))

    def contexts(self, v: torch.Tensor) -> torch.Tensor:
        """Stack of causal neighbours, shape ``(..., H, W, J)``."""
        r = self.context // 2
        h, w = v.shape[-2:]
        padded = F.pad(v.to(torch.float64), (r, r, r, 0))
        return torch.stack(
            [padded[..., r + dr: r + dr + h, r + dc: r + dc + w] for dr, dc in self.offsets], dim=-1
        )

    def mean_scale(self, v: torch.Tensor):
        ctx = self.contexts(v)
        cls = self.class_map
        mean = self.bias[cls] + (ctx * self.weight[cls]).sum(-1)
        scale = self.scale_min + F.softplus(self.scale_raw[cls])
        return mean, scale.expand_as(mean)

    def _log2_mass(self, y, mean, scale, lower_tail, upper_tail):
        lo = torch.where(lower_tail, torch.full_like(y, -_EDGE), (y - 0.5 - mean) / scale)
        hi = torch.where(upper_tail, torch.full_like(y, _EDGE), (y + 0.5 - mean) / scale)
        return _log_interval(lo, hi) / LN2

    def log2_prob_int(self, v):
        self._check(v)
        mean, scale = self.mean_scale(v)
        vc = torch.clamp(v, self.v_min, self.v_max).to(torch.float64)
        return self._log2_mass(vc, mean, scale, vc <= self.v_min, vc >= self.v_max)

    def log2_likelihood(self, y, context=None):
        """Relaxed log2-likelihood of ``y``; neighbours are read from ``context`` (default ``y``)."""
        self._check(y)
        mean, scale = self.mean_scale(y if context is None else context)
        yc = torch.clamp(y, self.v_min, self.v_max)
        return self._log2_mass(yc, mean, scale, yc <= self.v_min, yc >= self.v_max)

    def init_from_data(self, maps: np.ndarray):
        """Per-class least-squares fit of the mean; scale from the residual spread."""
        v = torch.as_tensor(np.asarray(maps), dtype=torch.float64)
        ctx = self.contexts(v).reshape(-1, len(self.offsets)).numpy()
        target = v.reshape(-1).numpy()
        cls = np.broadcast_to(self.class_map.numpy(), v.shape).reshape(-1)
        weight = self.weight.detach().numpy().copy()
        bias = self.bias.detach().numpy().copy()
        raw = self.scale_raw.detach().numpy().copy()
        for c in range(self.n_classes):
            sel = cls == c
            if sel.sum() < len(self.offsets) + 2:
                continue
            a = np.column_stack([ctx[sel], np.ones(sel.sum())])
            coef, *_ = np.linalg.lstsq(a, target[sel], rcond=None)
            resid = target[sel] - a @ coef
            # logistic scale with the residual's standard deviation
            s = max(float(resid.std()) * math.sqrt(3.0) / math.pi - self.scale_min, 1e-9)
            weight[c], bias[c] = coef[:-1], coef[-1]
            raw[c] = max(s + math.log(-math.expm1(-s)), -30.0) if s < 30 else s
        with torch.no_grad():
            self.weight.copy_(torch.from_numpy(weight))
            self.bias.copy_(torch.from_numpy(bias))
            self.scale_raw.copy_(torch.from_numpy(raw))


def nll_bits(model: _Density, coeff_map) -> tuple[float, float]:
    """``(total_bits, bits_per_element)`` of an integer map under ``model``."""
    a = np.asarray(getattr(coeff_map, "values", coeff_map))
    if not np.issubdtype(a.dtype, np.integer):
        if not np.array_equal(a, np.round(a)):
            raise ValueError("nll_bits evaluates integer maps only")
        a = a.astype(np.int64)
    with torch.no_grad():
        total = float(-model.log2_prob_int(torch.as_tensor(a, dtype=torch.long)).sum())
    return total, total / a.size


@dataclass
class TrainConfig:
    """Optimization and model settings for one branch.

    Defaults follow the reference protocol: Adam for 50 epochs, step size
    1e-4 for the first 25 epochs and 1e-5 afterwards, batches of 16 maps.
    """

    epochs: int = 50
    lr_initial: float = 1e-4
    lr_late: float = 1e-5
    switch_epoch: int = 25
    batch_size: int = 16
    seed: int = 0
    levels: int = 2
    taps: int = 3
    density: str = "ar"
    context: int = 3
    v_min: int = -256
    v_max: int = 511
    init: str = "data"
    init_samples: int = 256
    noise: bool = True
    proxy: str = "coefficient"
    select: bool = True

    def validate(self) -> "TrainConfig":
        if self.epochs < 0 or self.batch_size < 1 or self.switch_epoch < 0:
            raise ValueError("epochs, switch_epoch must be >= 0 and batch_size >= 1")
        if not (self.lr_initial > 0 and self.lr_late > 0):
            raise ValueError("learning rates must be positive")
        if self.density not in ("ar", "factorized"):
            raise ValueError(f"unknown density {self.density!r}")
        if self.proxy not in ("coefficient", "input"):
            raise ValueError(f"unknown proxy {self.proxy!r}")
        if self.init not in ("data", "uniform"):
            raise ValueError(f"unknown init {self.init!r}")
        if self.levels < 0 or self.taps < 1:
            raise ValueError("levels must be >= 0 and taps >= 1")
        causal_offsets(self.context)
        return self

    def lr_at(self, epoch: int) -> float:
        """Step size for 0-based ``epoch``."""
        return self.lr_initial if epoch < self.switch_epoch else self.lr_late


@dataclass(frozen=True)
class EntropyEstimate:
    total_bits: float
    element_count: int
    bits_per_element: float
    dataset_id: str = ""
    branch_id: str = ""

    @classmethod
    def from_total(cls, total_bits, element_count, **kw) -> "EntropyEstimate":
        return cls(float(total_bits), int(element_count), float(total_bits) / int(element_count), **kw)

    @classmethod
    def from_rate(cls, bits_per_element, element_count=1, **kw) -> "EntropyEstimate":
        """Build from a per-element rate, e.g. a published table entry."""
        return cls(float(bits_per_element) * int(element_count), int(element_count),
                   float(bits_per_element), **kw)

    def to_json(self) -> dict:
        return asdict(self)


@dataclass(eq=False)
class BranchModel:
    branch_id: str
    transform: LiftingTransform
    density: _Density
    records: dict  # source name -> AffineRecord
    concat_mode: str | None
    config: TrainConfig
    map_shape: tuple[int, int]
    training_curve: list = field(default_factory=list)
    selection_curve: list = field(default_factory=list)
    selected_epoch: int = 0

    def parameters_dict(self) -> dict[str, np.ndarray]:
        """Named parameters in a fixed order (transform first)."""
        out = {}
        for prefix, mod in (("transform", self.transform), ("density", self.density)):
            for name, p in mod.named_parameters():
                out[f"{prefix}.{name}"] = p.detach().numpy().copy()
        return out

    def freeze(self):
        """Snap parameters to float32 precision and stop gradients."""
        for mod in (self.transform, self.density):
            for p in mod.parameters():
                with torch.no_grad():
                    p.copy_(p.to(torch.float32).to(torch.float64))
                p.requires_grad_(False)
        return self


def _layout(branch_id: str, concat_mode: str | None) -> str:
    return "single" if branch_id != "joint" else concat_mode


def branch_maps(dataset, branch_id: str, records: dict, concat_mode: str | None = None) -> np.ndarray:
    """Integer input maps of one branch, ``(n, H, W')``."""
    if branch_id not in BRANCH_IDS:
        raise ValueError(f"branch_id must be one of {BRANCH_IDS}, got {branch_id!r}")
    if branch_id in ("x", "y"):
        q, _ = quantize_array(getattr(dataset, branch_id), records[branch_id])
        return q
    xq, _ = quantize_array(dataset.x, records["x"])
    yq, _ = quantize_array(dataset.y, records["y"])
    return concat(xq, yq, concat_mode).values


def make_branch(branch_id, map_shape, config: TrainConfig, records, concat_mode=None) -> BranchModel:
    """Untrained branch: zero-tap transform and a density at its default init."""
    config.validate()
    if branch_id == "joint" and concat_mode not in ("tile", "quilt"):
        raise ValueError(f"joint branch needs concat_mode 'tile' or 'quilt', got {concat_mode!r}")
    h, w = map_shape
    transform = LiftingTransform(config.levels, config.taps)
    transform.check_shape(map_shape)
    class_map, n_classes = position_classes(h, w, config.levels, _layout(branch_id, concat_mode))
    if config.density == "factorized":
        density = FactorizedModel(class_map, n_classes, config.v_min, config.v_max)
    else:
        density = ARContextModel(class_map, n_classes, config.context, config.v_min, config.v_max)
    return BranchModel(branch_id, transform, density, dict(records),
                       concat_mode if branch_id == "joint" else None, config, (h, w))


def _records_for(dataset, branch_id, stats) -> dict:
    stats = stats or {}
    names = ("x", "y") if branch_id == "joint" else (branch_id,)
    return {
        n: stats[n] if isinstance(stats.get(n), AffineRecord)
        else AffineRecord.from_stats(stats.get(n) or dataset_stats(dataset, n))
        for n in names
    }


def _exact_bits(branch: BranchModel, maps: np.ndarray) -> float:
    """Mean bits/element of integer maps on the evaluation path."""
    with torch.no_grad():
        coeffs = torch.from_numpy(branch.transform.forward_int(maps).values)
        return float(-branch.density.log2_prob_int(coeffs).mean())


def _snapshot(branch: BranchModel) -> list:
    return [p.detach().clone() for m in (branch.transform, branch.density) for p in m.parameters()]


def _restore(branch: BranchModel, values: list) -> None:
    with torch.no_grad():
        for p, v in zip((p for m in (branch.transform, branch.density) for p in m.parameters()), values):
            p.copy_(v)


def _relaxed_log2_likelihood(branch: BranchModel, batch, config: TrainConfig, gen):
    """Training-time likelihood of a batch of integer maps.

    ``proxy="coefficient"``: straight-through integer transform, noise added to
    the coefficients, context read from the noise-free coefficients. The
    forward values are exactly those seen at evaluation.
    ``proxy="input"``: noise added to the input of the rounding-free transform.
    """
    noise = lambda shape: torch.rand(shape, generator=gen, dtype=torch.float64) - 0.5
    if config.proxy == "coefficient":
        coeffs = branch.transform(batch, straight_through=True)
        if not config.noise:
            return branch.density.log2_likelihood(coeffs)
        return branch.density.log2_likelihood(coeffs + noise(coeffs.shape), context=coeffs)
    if config.noise:
        batch = batch + noise(batch.shape)
    return branch.density.log2_likelihood(branch.transform(batch))


def train_branch(dataset, branch_id: str, config: TrainConfig | None = None,
                 concat_mode: str | None = None, stats: dict | None = None) -> BranchModel:
    """Jointly fit transform and density of one branch on ``dataset``.

    ``stats`` maps source name to ``(min, max)`` or an :class:`AffineRecord`;
    missing entries are computed from ``dataset``. Returns a frozen branch whose
    ``training_curve`` holds the mean relaxed loss (bits/element) per epoch.

    With ``config.select`` (default) the exact-path loss on the fixed
    initialisation subset is recorded before training and after every epoch
    (``selection_curve``), and the parameters of the lowest entry are kept
    (``selected_epoch``, 0 meaning the initialisation). Straight-through
    gradients do not see the rounding flips a drifting filter tap causes, and
    on near-deterministic data a single flip costs tens of bits.
    """
    config = (config or TrainConfig()).validate()
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    records = _records_for(dataset, branch_id, stats)
    maps = branch_maps(dataset, branch_id, records, concat_mode)
    branch = make_branch(branch_id, maps.shape[1:], config, records, concat_mode)
    rng = np.random.default_rng([config.seed, BRANCH_IDS.index(branch_id)])
    gen = torch.Generator().manual_seed(int(rng.integers(2 ** 62)))

    pick = np.sort(rng.permutation(len(maps))[: config.init_samples])
    subset = maps[pick]
    if config.init == "data":
        branch.density.init_from_data(branch.transform.forward_int(subset).values)

    best = None
    if config.select:
        best = (_exact_bits(branch, subset), 0, _snapshot(branch))
        branch.selection_curve.append(best[0])

    params = list(branch.transform.parameters()) + list(branch.density.parameters())
    opt = torch.optim.Adam(params, lr=config.lr_at(0))
    data = torch.as_tensor(maps, dtype=torch.float64)
    n = len(data)
    for epoch in range(config.epochs):
        for group in opt.param_groups:
            group["lr"] = config.lr_at(epoch)
        order = rng.permutation(n)
        total, count = 0.0, 0
        for start in range(0, n, config.batch_size):
            batch = data[order[start: start + config.batch_size]]
            loss = -_relaxed_log2_likelihood(branch, batch, config, gen).mean()
            if not torch.isfinite(loss):
                raise TrainingDivergedError(
                    f"{branch_id} branch loss became non-finite at epoch {epoch + 1}, "
                    f"batch starting at {start}", branch.training_curve,
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += float(loss.detach()) * batch.numel()
            count += batch.numel()
        branch.training_curve.append(total / count)
        log.debug("%s epoch %d: %.5f bits/element", branch_id, epoch + 1, total / count)
        if config.select:
            bits = _exact_bits(branch, subset)
            branch.selection_curve.append(bits)
            if bits < best[0]:
                best = (bits, epoch + 1, _snapshot(branch))
    if best is not None:
        _restore(branch, best[2])
        branch.selected_epoch = best[1]
    else:
        branch.selected_epoch = config.epochs
    return branch.freeze()


def estimate_entropy(branch: BranchModel, dataset, batch_size: int = 64) -> EntropyEstimate:
    """Cross-entropy of ``dataset`` under a trained branch (exact integer path)."""
    maps = branch_maps(dataset, branch.branch_id, branch.records, branch.concat_mode)
    if tuple(maps.shape[1:]) != tuple(branch.map_shape):
        raise ValueError(
            f"dataset maps of shape {maps.shape[1:]} do not fit a branch trained on {branch.map_shape}"
        )
    total = 0.0
    with torch.no_grad():
        for start in range(0, len(maps), batch_size):
            coeffs = branch.transform.forward_int(maps[start: start + batch_size]).values
            bits = -branch.density.log2_prob_int(torch.from_numpy(coeffs))
            total += float(bits.sum())
    return EntropyEstimate.from_total(total, maps.size, dataset_id=dataset.dataset_id,
                                      branch_id=branch.branch_id)


def write_training_curve(branch: BranchModel, path) -> None:
    """CSV of the relaxed loss per epoch, plus the exact-path selection loss when recorded."""
    exact = branch.selection_curve[1:]
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["epoch", "mean_bits_per_element"] + (["exact_bits_per_element"] if exact else []))
        for i, v in enumerate(branch.training_curve, 1):
            w.writerow([i, repr(float(v))] + ([repr(float(exact[i - 1]))] if exact else []))
