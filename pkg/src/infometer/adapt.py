"""Feature adaptation: real grids to 8-bit integer maps, and joint-map layouts.

Rescaling uses dataset-global minimum and maximum per source, so every sample
of a source shares one affine map ``q = floor(255 * (v - min) / (max - min) + 0.5)``
(round half up), clamped to ``[0, 255]``.

Two joint layouts are supported. ``tile`` places the maps side by side
(``1x600x256`` twice gives ``1x600x512``). ``quilt`` interleaves columns as
``x0, y0, x1, y1, ...`` so that corresponding elements are horizontal
neighbours, which a small causal context can exploit.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

__all__ = [
    "AffineRecord",
    "AdaptedMap",
    "JointMap",
    "DegenerateRangeWarning",
    "CONCAT_MODES",
    "dataset_stats",
    "rescale_quantize",
    "quantize_array",
    "concat_tile",
    "concat_quilt",
    "concat",
    "split_joint",
    "adapt_dataset",
]

CONCAT_MODES = ("tile", "quilt")


class DegenerateRangeWarning(UserWarning):
    """The rescaling range is empty (max == min); the map is set to zero."""


@dataclass(frozen=True)
class AffineRecord:
    offset: float
    scale: float
    clamp_count: int = 0
    degenerate: bool = False

    @classmethod
    def from_stats(cls, stats) -> "AffineRecord":
        lo, hi = float(stats[0]), float(stats[1])
        if not hi > lo:
            return cls(lo, 1.0, 0, True)
        return cls(lo, 255.0 / (hi - lo))

    def to_json(self) -> dict:
        return {
            "offset": self.offset,
            "scale": self.scale,
            "clamp_count": self.clamp_count,
            "degenerate": self.degenerate,
        }

    @classmethod
    def from_json(cls, d) -> "AffineRecord":
        return cls(float(d["offset"]), float(d["scale"]), int(d.get("clamp_count", 0)),
                   bool(d.get("degenerate", False)))


@dataclass(frozen=True)
class AdaptedMap:
    values: np.ndarray  # int64, (1, H, W) for one map or (n, H, W) for a stack
    affine_record: AffineRecord


@dataclass(frozen=True)
class JointMap:
    values: np.ndarray
    concat_mode: str
    x_width: int


def dataset_stats(dataset, branch: str = "x") -> tuple[float, float]:
    """Global ``(min, max)`` over every sample of one source."""
    if branch not in ("x", "y"):
        raise ValueError(f"branch must be 'x' or 'y', got {branch!r}")
    arr = dataset.x if branch == "x" else dataset.y
    if arr.size == 0:
        raise ValueError("dataset is empty")
    return float(arr.min()), float(arr.max())


def quantize_array(values: np.ndarray, record: AffineRecord) -> tuple[np.ndarray, int]:
    """Apply ``record`` to an array of any shape; returns ``(int64 array, clamp count)``."""
    v = np.asarray(values, dtype=np.float64)
    if record.degenerate:
        return np.zeros(v.shape, dtype=np.int64), 0
    q = np.floor((v - record.offset) * record.scale + 0.5)
    clamped = int(np.count_nonzero((q < 0) | (q > 255)))
    return np.clip(q, 0, 255).astype(np.int64), clamped


def rescale_quantize(values: np.ndarray, stats) -> AdaptedMap:
    """Rescale to ``[0, 255]`` with global ``stats = (min, max)`` and round half up.

    Values outside ``stats`` are clamped and counted in ``clamp_count``. A
    degenerate range gives an all-zero map and a :class:`DegenerateRangeWarning`.
    """
    record = AffineRecord.from_stats(stats)
    if record.degenerate:
        warnings.warn(
            f"degenerate rescaling range {tuple(stats)}; map set to zero",
            DegenerateRangeWarning,
            stacklevel=2,
        )
    q, clamped = quantize_array(values, record)
    if q.ndim == 2:
        q = q[None]
    return AdaptedMap(q, AffineRecord(record.offset, record.scale, clamped, record.degenerate))


def _values(m) -> np.ndarray:
    return m.values if isinstance(m, (AdaptedMap, JointMap)) else np.asarray(m)


def concat_tile(xq, yq) -> JointMap:
    x, y = _values(xq), _values(yq)
    if x.shape[:-1] != y.shape[:-1]:
        raise ValueError(f"tiling needs equal heights, got {x.shape} and {y.shape}")
    return JointMap(np.concatenate([x, y], axis=-1), "tile", x.shape[-1])


def concat_quilt(xq, yq) -> JointMap:
    x, y = _values(xq), _values(yq)
    if x.shape != y.shape:
        raise ValueError(f"quilting needs equal shapes, got {x.shape} and {y.shape}")
    out = np.empty(x.shape[:-1] + (2 * x.shape[-1],), dtype=np.result_type(x, y))
    out[..., 0::2] = x
    out[..., 1::2] = y
    return JointMap(out, "quilt", x.shape[-1])


def concat(xq, yq, mode: str) -> JointMap:
    if mode == "tile":
        return concat_tile(xq, yq)
    if mode == "quilt":
        return concat_quilt(xq, yq)
    raise ValueError(f"unknown concat mode {mode!r}; expected one of {CONCAT_MODES}")


def split_joint(joint: JointMap) -> tuple[np.ndarray, np.ndarray]:
    """Recover ``(x, y)`` from a joint map."""
    v = joint.values
    if joint.concat_mode == "tile":
        return v[..., : joint.x_width], v[..., joint.x_width:]
    if joint.concat_mode == "quilt":
        return v[..., 0::2], v[..., 1::2]
    raise ValueError(f"unknown concat mode {joint.concat_mode!r}")


def adapt_dataset(dataset, stats_x=None, stats_y=None) -> tuple[AdaptedMap, AdaptedMap]:
    """Quantize both sources of a dataset; stats default to the dataset's own."""
    stats_x = dataset_stats(dataset, "x") if stats_x is None else stats_x
    stats_y = dataset_stats(dataset, "y") if stats_y is None else stats_y
    return rescale_quantize(dataset.x, stats_x), rescale_quantize(dataset.y, stats_y)
