"""Learnable integer-to-integer lifting transform.

Each level splits the current lattice along columns into even/odd samples,
runs a predict step (``odd -= round(P(even))``) and an update step
(``even += round(U(odd))``), then repeats the same along rows. The next level
works on the even/even sub-lattice. Coefficients stay in place, so with all
filter taps at zero the transform is the identity, and the element count never
changes.

Because each step only adds a function of the *other* polyphase component,
the inverse replays the steps backwards and is exact for any filter values.
That is what makes entropy measured on coefficients an entropy of the input.

Tap layout for ``taps = 3``: predict tap ``t`` reads the even sample at
offset ``t - 1`` from the odd sample's left neighbour, so ``[0, 1, 0]`` is the
Haar predictor and ``[0, .5, .5]`` the 5/3 one. Update tap ``t`` reads the odd
sample at offset ``t - 1`` from the even sample's right neighbour, so Haar is
``[0, .5, 0]`` and 5/3 is ``[.25, .25, 0]``. Borders repeat the edge sample.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

__all__ = [
    "LiftingTransform",
    "Coefficients",
    "forward",
    "inverse",
    "forward_relaxed",
    "lattice_classes",
]


@dataclass(frozen=True)
class Coefficients:
    """Integer coefficient map plus the level count that produced it."""

    values: np.ndarray
    levels: int


def _offsets(taps: int) -> np.ndarray:
    return np.arange(taps) - (taps - 1) // 2


def _round(v):
    # round half up, identical on both sides of the transform
    if isinstance(v, torch.Tensor):
        return torch.floor(v + 0.5)
    return np.floor(v + 0.5)


def _filter(src, coef, n_out):
    """sum_t coef[t] * src[..., clip(j + offset_t)] for j = 0..n_out-1 (edge repeat)."""
    offs = _offsets(len(coef))
    lo, hi = max(0, -offs.min()), max(0, offs.max() + n_out - src.shape[-1])
    if isinstance(src, torch.Tensor):
        padded = torch.cat([src[..., :1]] * lo + [src] + [src[..., -1:]] * hi, dim=-1)
    else:
        padded = np.concatenate([src[..., :1]] * lo + [src] + [src[..., -1:]] * hi, axis=-1)
    out = 0.0
    for t, off in enumerate(offs):
        out = out + coef[t] * padded[..., lo + off: lo + off + n_out]
    return out


def _interleave(even, odd, n):
    shape = even.shape[:-1] + (n,)
    if isinstance(even, torch.Tensor):
        out = even.new_empty(shape)
    else:
        out = np.empty(shape, dtype=even.dtype)
    out[..., 0::2] = even
    out[..., 1::2] = odd
    return out


def _ste_round(v):
    # rounded forward value, identity gradient
    return v + (_round(v) - v).detach()


_STEP = {
    "integer": lambda v: _round(v).astype(np.int64),
    "relaxed": lambda v: v,
    "ste": _ste_round,
}


def _lift_last_axis(a, p, u, mode: str):
    n = a.shape[-1]
    even, odd = a[..., 0::2], a[..., 1::2]
    ne, no = even.shape[-1], odd.shape[-1]
    if no == 0:
        return a
    step = _STEP[mode]
    odd = odd - step(_filter(even, p, no))
    even = even + step(_filter(odd, u, ne))
    return _interleave(even, odd, n)


def _unlift_last_axis(a, p, u):
    n = a.shape[-1]
    even, odd = a[..., 0::2], a[..., 1::2]
    ne, no = even.shape[-1], odd.shape[-1]
    if no == 0:
        return a
    even = even - _round(_filter(odd, u, ne)).astype(np.int64)
    odd = odd + _round(_filter(even, p, no)).astype(np.int64)
    return _interleave(even, odd, n)


def _swap(a):
    return a.transpose(-1, -2) if isinstance(a, torch.Tensor) else np.swapaxes(a, -1, -2)


class LiftingTransform(nn.Module):
    """Separable lifting transform with learnable predict/update taps.

    Parameters
    ----------
    levels : int
        Decomposition depth; ``0`` gives the identity transform.
    taps : int
        Filter length for every predict/update step.
    predict, update : array-like, optional
        Initial coefficients of shape ``(levels, 2, taps)``; index 1 is the
        direction (0 = along columns, 1 = along rows). Default is all zeros.
    """

    def __init__(self, levels: int = 2, taps: int = 3, predict=None, update=None,
                 integer_mode: bool = True):
        super().__init__()
        if levels < 0 or taps < 1:
            raise ValueError(f"need levels >= 0 and taps >= 1, got {levels}, {taps}")
        self.levels = int(levels)
        self.taps = int(taps)
        self.integer_mode = bool(integer_mode)
        shape = (self.levels, 2, self.taps)
        init = lambda v: torch.zeros(shape, dtype=torch.float64) if v is None else \
            torch.as_tensor(np.asarray(v, dtype=np.float64).reshape(shape)).clone()
        self.predict = nn.Parameter(init(predict))
        self.update = nn.Parameter(init(update))

    @classmethod
    def haar(cls, levels: int = 1, taps: int = 3) -> "LiftingTransform":
        p = np.zeros((levels, 2, taps))
        u = np.zeros((levels, 2, taps))
        c = (taps - 1) // 2
        p[..., c] = 1.0
        u[..., c] = 0.5
        return cls(levels, taps, p, u)

    def filters(self) -> tuple[np.ndarray, np.ndarray]:
        return (self.predict.detach().cpu().numpy().copy(),
                self.update.detach().cpu().numpy().copy())

    def check_shape(self, shape) -> None:
        h, w = shape[-2:]
        if min(h, w) < 2 ** self.levels:
            raise ValueError(
                f"map of size {h}x{w} is too small for {self.levels} levels "
                f"(needs at least {2 ** self.levels} per side)"
            )

    def forward_int(self, m) -> Coefficients:
        """Exact integer forward transform of an integer map (any leading dims)."""
        values = getattr(m, "values", m)
        a = np.asarray(values)
        if not np.issubdtype(a.dtype, np.integer):
            if not np.array_equal(a, np.round(a)):
                raise ValueError("integer forward transform needs integer-valued input")
        a = a.astype(np.int64, copy=True)
        self.check_shape(a.shape)
        p, u = self.filters()
        for lvl in range(self.levels):
            s = 2 ** lvl
            sub = a[..., ::s, ::s]
            sub = _lift_last_axis(sub, p[lvl, 0], u[lvl, 0], "integer")
            sub = _swap(_lift_last_axis(_swap(sub), p[lvl, 1], u[lvl, 1], "integer"))
            a[..., ::s, ::s] = sub
        return Coefficients(a, self.levels)

    def inverse_int(self, coeffs) -> np.ndarray:
        """Exact inverse of :meth:`forward_int`."""
        if isinstance(coeffs, Coefficients):
            if coeffs.levels != self.levels:
                raise ValueError(
                    f"coefficients come from a {coeffs.levels}-level transform, "
                    f"this one has {self.levels}"
                )
            coeffs = coeffs.values
        a = np.asarray(coeffs).astype(np.int64, copy=True)
        self.check_shape(a.shape)
        p, u = self.filters()
        for lvl in reversed(range(self.levels)):
            s = 2 ** lvl
            sub = a[..., ::s, ::s]
            sub = _swap(_unlift_last_axis(_swap(sub), p[lvl, 1], u[lvl, 1]))
            sub = _unlift_last_axis(sub, p[lvl, 0], u[lvl, 0])
            a[..., ::s, ::s] = sub
        return a

    def forward(self, x: torch.Tensor, straight_through: bool = False) -> torch.Tensor:
        """Differentiable transform of a real tensor.

        By default the lifting steps do not round (the relaxed transform). With
        ``straight_through=True`` every step rounds as in :meth:`forward_int`,
        so integer input gives exactly the integer coefficients, while the
        gradient treats each rounding as the identity.
        """
        x = torch.as_tensor(x, dtype=self.predict.dtype)
        self.check_shape(x.shape)
        mode = "ste" if straight_through else "relaxed"
        for lvl in range(self.levels):
            s = 2 ** lvl
            sub = x[..., ::s, ::s]
            sub = _lift_last_axis(sub, self.predict[lvl, 0], self.update[lvl, 0], mode)
            sub = _swap(_lift_last_axis(_swap(sub), self.predict[lvl, 1], self.update[lvl, 1], mode))
            x = x.clone()
            x[..., ::s, ::s] = sub
        return x


def forward(t: LiftingTransform, m) -> Coefficients:
    return t.forward_int(m)


def inverse(t: LiftingTransform, coeffs) -> np.ndarray:
    return t.inverse_int(coeffs)


def forward_relaxed(t: LiftingTransform, x) -> torch.Tensor:
    return t(x)


def lattice_classes(h: int, w: int, levels: int) -> np.ndarray:
    """Position class of every coefficient: its phase on the ``2**levels`` lattice."""
    s = 2 ** levels
    r = np.arange(h)[:, None] % s
    c = np.arange(w)[None, :] % s
    return (r * s + c).astype(np.int64)
