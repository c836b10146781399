"""Synthetic paired sources with known dependence, and their on-disk format.

Every generator draws sample ``i`` from its own PCG64 stream seeded with
``SeedSequence((seed, stream_tag, i))``, so any subset of samples can be
regenerated independently and in any order with bit-identical results.

A dataset directory holds two files:

``manifest.json``
    generator id, parameters, shape, seed, analytic values and the payload
    checksum.
``payload.bin``
    ``uint64`` little-endian count of float32 values, then the values
    (float32 little-endian, sample-major; within a sample the x grid then the
    y grid, each row-major), then a ``uint32`` little-endian CRC32 of the
    value bytes.
"""

from __future__ import annotations

import json
import math
import struct
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

__all__ = [
    "SourceSample",
    "DatasetManifest",
    "Dataset",
    "DatasetFormatError",
    "sample_rng",
    "gen_independent",
    "gen_identical",
    "gen_gaussian_pair",
    "gen_discrete_iid",
    "marginal_entropy_bits",
    "save_dataset",
    "load_dataset",
]

FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"
PAYLOAD_NAME = "payload.bin"

# stream tags keep generators from sharing random streams for equal seeds
_STREAM_TAGS = {
    "independent": 11,
    "identical": 12,
    "gaussian_pair": 13,
    "discrete_iid": 14,
}


class DatasetFormatError(ValueError):
    """Raised when a dataset directory is malformed or corrupted."""


@dataclass(frozen=True)
class SourceSample:
    """One paired observation; ``x`` and ``y`` are ``(1, H, W)`` grids."""

    x: np.ndarray
    y: np.ndarray
    sample_id: int


@dataclass(frozen=True)
class DatasetManifest:
    generator_id: str
    params: dict
    n_samples: int
    shape: tuple[int, int]
    seed: int
    analytic_mi_bits_per_element: float | None = None
    analytic_entropy_bits_per_element: float | None = None
    extra: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "generator_id": self.generator_id,
            "params": self.params,
            "n_samples": self.n_samples,
            "shape": list(self.shape),
            "seed": self.seed,
            "analytic_mi_bits_per_element": self.analytic_mi_bits_per_element,
            "analytic_entropy_bits_per_element": self.analytic_entropy_bits_per_element,
            "extra": self.extra,
        }

    @classmethod
    def from_json(cls, d: Mapping[str, Any]) -> "DatasetManifest":
        if d.get("format_version") != FORMAT_VERSION:
            raise DatasetFormatError(
                f"unsupported dataset format version {d.get('format_version')!r}"
            )
        return cls(
            generator_id=d["generator_id"],
            params=d["params"],
            n_samples=int(d["n_samples"]),
            shape=tuple(int(s) for s in d["shape"]),
            seed=int(d["seed"]),
            analytic_mi_bits_per_element=d.get("analytic_mi_bits_per_element"),
            analytic_entropy_bits_per_element=d.get("analytic_entropy_bits_per_element"),
            extra=d.get("extra", {}),
        )


@dataclass(frozen=True, eq=False)
class Dataset:
    """Paired grids ``x`` and ``y`` of shape ``(n, H, W)``, stored as float32."""

    x: np.ndarray
    y: np.ndarray
    manifest: DatasetManifest

    def __post_init__(self):
        x = np.ascontiguousarray(self.x, dtype=np.float32)
        y = np.ascontiguousarray(self.y, dtype=np.float32)
        if x.ndim != 3 or x.shape != y.shape:
            raise ValueError(f"x and y must share an (n, H, W) shape, got {x.shape} and {y.shape}")
        if x.shape[1:] != tuple(self.manifest.shape) or x.shape[0] != self.manifest.n_samples:
            raise DatasetFormatError(
                f"arrays of shape {x.shape} do not match manifest "
                f"(n={self.manifest.n_samples}, shape={self.manifest.shape})"
            )
        if not (np.isfinite(x).all() and np.isfinite(y).all()):
            raise ValueError("dataset values must be finite")
        x.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    def __len__(self) -> int:
        return self.x.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return tuple(self.x.shape[1:])

    def sample(self, i: int) -> SourceSample:
        return SourceSample(self.x[i][None], self.y[i][None], int(i))

    def payload_bytes(self) -> bytes:
        both = np.stack([self.x, self.y], axis=1)  # (n, 2, H, W)
        return both.astype("<f4", copy=False).tobytes(order="C")

    @property
    def dataset_id(self) -> str:
        """Content hash: CRC32 of the payload, as 8 hex digits."""
        cached = self.__dict__.get("_dataset_id")
        if cached is None:
            cached = f"{zlib.crc32(self.payload_bytes()):08x}"
            object.__setattr__(self, "_dataset_id", cached)
        return cached

    def subset(self, indices: Sequence[int], **extra) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        manifest = replace(
            self.manifest,
            n_samples=len(idx),
            extra={**self.manifest.extra, **extra},
        )
        return Dataset(self.x[idx], self.y[idx], manifest)

    def with_arrays(self, x: np.ndarray, y: np.ndarray, **extra) -> "Dataset":
        manifest = replace(self.manifest, extra={**self.manifest.extra, **extra})
        return Dataset(x, y, manifest)

    def equals(self, other: "Dataset") -> bool:
        return (
            self.manifest == other.manifest
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
        )


def sample_rng(seed: int, stream: int, sample_id: int) -> np.random.Generator:
    """PCG64 generator for one sample, keyed by ``(seed, stream, sample_id)``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, stream, sample_id])))


# --- marginals -------------------------------------------------------------

def _check_marginal(spec: Mapping[str, Any]) -> str:
    kind = spec.get("id") if isinstance(spec, Mapping) else None
    if kind not in ("gaussian", "uniform_int", "bernoulli", "pmf"):
        raise ValueError(f"unknown marginal spec {spec!r}")
    if kind == "pmf":
        _check_pmf(spec["pmf"], spec.get("support"))
    return kind


def _draw_marginal(spec: Mapping[str, Any], rng: np.random.Generator, size) -> np.ndarray:
    kind = spec["id"]
    if kind == "gaussian":
        return rng.normal(spec.get("mean", 0.0), spec.get("std", 1.0), size)
    if kind == "uniform_int":
        return rng.integers(spec["low"], spec["high"], size, endpoint=True).astype(np.float64)
    if kind == "bernoulli":
        lo, hi = spec.get("values", (0, 1))
        return np.where(rng.random(size) < spec.get("p", 0.5), hi, lo).astype(np.float64)
    pmf = np.asarray(spec["pmf"], dtype=np.float64)
    support = np.asarray(spec.get("support", np.arange(len(pmf))), dtype=np.float64)
    return support[_draw_index(pmf, rng, size)]


def _draw_index(pmf: np.ndarray, rng: np.random.Generator, size) -> np.ndarray:
    cdf = np.cumsum(pmf)
    cdf[-1] = 1.0
    return np.searchsorted(cdf, rng.random(size), side="right")


def marginal_entropy_bits(spec: Mapping[str, Any]) -> float | None:
    """Shannon entropy of a discrete marginal in bits; ``None`` for continuous ones."""
    kind = _check_marginal(spec)
    if kind == "gaussian":
        return None
    if kind == "uniform_int":
        return math.log2(spec["high"] - spec["low"] + 1)
    if kind == "bernoulli":
        p = spec.get("p", 0.5)
        return _entropy_bits([p, 1.0 - p])
    return _entropy_bits(spec["pmf"])


def _entropy_bits(pmf) -> float:
    p = np.asarray(pmf, dtype=np.float64)
    p = p[p > 0]
    return float(-(p * np.log2(p)).sum()) + 0.0


def _check_pmf(pmf, support=None) -> np.ndarray:
    p = np.asarray(pmf, dtype=np.float64)
    if p.ndim != 1 or p.size == 0 or (p < 0).any() or abs(p.sum() - 1.0) > 1e-9:
        raise ValueError(f"invalid pmf {pmf!r}: must be non-negative and sum to 1")
    if p.size > 256:
        raise ValueError("pmf support must lie in the integers 0..255")
    if support is not None:
        s = np.asarray(support)
        if s.shape != p.shape or (s < 0).any() or (s > 255).any() or not np.all(s == np.round(s)):
            raise ValueError("pmf support must be integers in [0, 255], one per probability")
    return p


def _check_dims(H: int, W: int, n: int):
    if min(H, W, n) < 1:
        raise ValueError(f"H, W and n must be >= 1, got {(H, W, n)}")


# --- generators -------------------------------------------------------------

def _generate(draw, generator_id, params, H, W, n, seed, **analytic) -> Dataset:
    tag = _STREAM_TAGS[generator_id]
    x = np.empty((n, H, W), dtype=np.float32)
    y = np.empty((n, H, W), dtype=np.float32)
    for i in range(n):
        x[i], y[i] = draw(sample_rng(seed, tag, i))
    manifest = DatasetManifest(generator_id, dict(params), n, (H, W), int(seed), **analytic)
    return Dataset(x, y, manifest)


def gen_independent(marginal_spec: Mapping[str, Any], H: int, W: int, n: int, seed: int) -> Dataset:
    """``x`` and ``y`` drawn independently, element by element, from one marginal."""
    _check_marginal(marginal_spec)
    _check_dims(H, W, n)

    def draw(rng):
        return _draw_marginal(marginal_spec, rng, (H, W)), _draw_marginal(marginal_spec, rng, (H, W))

    return _generate(
        draw, "independent", {"marginal": dict(marginal_spec)}, H, W, n, seed,
        analytic_mi_bits_per_element=0.0,
        analytic_entropy_bits_per_element=marginal_entropy_bits(marginal_spec),
    )


def gen_identical(marginal_spec: Mapping[str, Any], H: int, W: int, n: int, seed: int) -> Dataset:
    """``y`` is an exact copy of ``x``; the analytic MI is the marginal entropy when discrete."""
    _check_marginal(marginal_spec)
    _check_dims(H, W, n)
    h = marginal_entropy_bits(marginal_spec)

    def draw(rng):
        x = _draw_marginal(marginal_spec, rng, (H, W))
        return x, x

    return _generate(
        draw, "identical", {"marginal": dict(marginal_spec)}, H, W, n, seed,
        analytic_mi_bits_per_element=h,
        analytic_entropy_bits_per_element=h,
    )


def gen_gaussian_pair(rho: float, H: int, W: int, n: int, seed: int) -> Dataset:
    """Element pairs i.i.d. from a standard bivariate Gaussian with correlation ``rho``.

    The manifest records the continuous MI, ``-0.5 * log2(1 - rho**2)`` bits per element.
    """
    if not -1.0 < rho < 1.0:
        raise ValueError(f"rho must satisfy |rho| < 1, got {rho}")
    _check_dims(H, W, n)
    c = math.sqrt(1.0 - rho * rho)

    def draw(rng):
        z = rng.standard_normal((2, H, W))
        return z[0], rho * z[0] + c * z[1]

    return _generate(
        draw, "gaussian_pair", {"rho": float(rho)}, H, W, n, seed,
        analytic_mi_bits_per_element=-0.5 * math.log2(1.0 - rho * rho) + 0.0,
    )


def gen_discrete_iid(pmf, H: int, W: int, n: int, seed: int, support=None) -> Dataset:
    """``x`` i.i.d. from ``pmf`` over ``support`` (default ``0..len(pmf)-1``); ``y`` an independent copy."""
    p = _check_pmf(pmf, support)
    _check_dims(H, W, n)
    spec = {"id": "pmf", "pmf": p.tolist()}
    if support is not None:
        spec["support"] = [int(s) for s in support]

    def draw(rng):
        return _draw_marginal(spec, rng, (H, W)), _draw_marginal(spec, rng, (H, W))

    return _generate(
        draw, "discrete_iid", {"marginal": spec}, H, W, n, seed,
        analytic_mi_bits_per_element=0.0,
        analytic_entropy_bits_per_element=_entropy_bits(p),
    )


# --- persistence ------------------------------------------------------------

def save_dataset(dataset: Dataset, path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    data = dataset.payload_bytes()
    crc = zlib.crc32(data)
    with open(path / PAYLOAD_NAME, "wb") as f:
        f.write(struct.pack("<Q", len(data) // 4))
        f.write(data)
        f.write(struct.pack("<I", crc))
    manifest = dataset.manifest.to_json()
    manifest["payload_crc32"] = crc
    (path / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_dataset(path) -> Dataset:
    path = Path(path)
    try:
        meta = json.loads((path / MANIFEST_NAME).read_text())
        raw = (path / PAYLOAD_NAME).read_bytes()
    except FileNotFoundError as exc:
        raise DatasetFormatError(f"not a dataset directory: {path}") from exc
    manifest = DatasetManifest.from_json(meta)
    if len(raw) < 12:
        raise DatasetFormatError("payload too short")
    (count,) = struct.unpack_from("<Q", raw, 0)
    data = raw[8:-4]
    (crc,) = struct.unpack_from("<I", raw, len(raw) - 4)
    H, W = manifest.shape
    expected = manifest.n_samples * 2 * H * W
    if count != expected or len(data) != 4 * expected:
        raise DatasetFormatError(
            f"payload holds {len(data) // 4} values (header says {count}); "
            f"manifest shape implies {expected}"
        )
    if zlib.crc32(data) != crc or meta.get("payload_crc32", crc) != crc:
        raise DatasetFormatError("payload checksum mismatch")
    both = np.frombuffer(data, dtype="<f4").reshape(manifest.n_samples, 2, H, W)
    return Dataset(both[:, 0].astype(np.float32), both[:, 1].astype(np.float32), manifest)
