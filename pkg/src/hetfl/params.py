"""Flat parameter vectors, binary masks and the model-reduction-noise measure.

Every model in the package stores its weights as one contiguous float64
vector with a named layer layout. Masks are dense 0/1 vectors over the same
layout; a reduced local model is ``theta * mask``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DimensionError, NumericError


@dataclass(frozen=True)
class LayerSlice:
    name: str
    offset: int
    length: int

    @property
    def stop(self) -> int:
        return self.offset + self.length

    def as_slice(self) -> slice:
        return slice(self.offset, self.stop)


Layout = tuple  # tuple[LayerSlice, ...]


def make_layout(shapes: Iterable[tuple[str, int]]) -> tuple[LayerSlice, ...]:
    """Build a contiguous layout from ``(name, length)`` pairs."""
    out = []
    offset = 0
    for name, length in shapes:
        length = int(length)
        if length < 0:
            raise DimensionError(f"layer {name!r} has negative length {length}")
        out.append(LayerSlice(name, offset, length))
        offset += length
    names = [s.name for s in out]
    if len(set(names)) != len(names):
        raise DimensionError(f"duplicate layer names in layout: {names}")
    return tuple(out)


def _layout_size(layout) -> int:
    return layout[-1].stop if layout else 0


def _check_layout(layout, size: int) -> None:
    offset = 0
    for s in layout:
        if s.offset != offset or s.length < 0:
            raise DimensionError(f"layout is not contiguous at layer {s.name!r}")
        offset = s.stop
    if offset != size:
        raise DimensionError(f"layout covers {offset} entries but vector has {size}")


def _nonfinite_layer(values: np.ndarray, layout) -> str | None:
    # sum() is a cheap screen: any NaN/Inf propagates into it
    if np.isfinite(values.sum()):
        return None
    for s in layout:
        if not np.all(np.isfinite(values[s.as_slice()])):
            return s.name
    return None


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class ParamVector:
    """Immutable float64 parameter vector with a named layer layout."""

    values: np.ndarray
    layout: tuple

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, copy=True).reshape(-1)
        layout = tuple(self.layout)
        _check_layout(layout, values.size)
        bad = _nonfinite_layer(values, layout)
        if bad is not None:
            raise NumericError(f"non-finite value in layer {bad!r}")
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "layout", layout)

    @classmethod
    def _trusted(cls, values: np.ndarray, layout) -> "ParamVector":
        # skips the copy; callers hand over a fresh array they no longer touch
        obj = object.__new__(cls)
        bad = _nonfinite_layer(values, layout)
        if bad is not None:
            raise NumericError(f"non-finite value in layer {bad!r}")
        object.__setattr__(obj, "values", _frozen(values))
        object.__setattr__(obj, "layout", layout)
        return obj

    @classmethod
    def zeros(cls, layout) -> "ParamVector":
        return cls._trusted(np.zeros(_layout_size(layout)), tuple(layout))

    def __len__(self) -> int:
        return self.values.size

    def __eq__(self, other) -> bool:
        if not isinstance(other, ParamVector):
            return NotImplemented
        return self.layout == other.layout and np.array_equal(self.values, other.values)

    def layer(self, name: str) -> np.ndarray:
        for s in self.layout:
            if s.name == name:
                return self.values[s.as_slice()]
        raise KeyError(name)

    def with_values(self, values) -> "ParamVector":
        return ParamVector(values, self.layout)

    def sqnorm(self) -> float:
        return float(np.dot(self.values, self.values))


@dataclass(frozen=True, eq=False)
class Mask:
    """Dense binary mask aligned to a ParamVector layout."""

    bits: np.ndarray
    layout: tuple
    _weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        raw = np.asarray(self.bits).reshape(-1)
        if raw.size and not np.all((raw == 0) | (raw == 1)):
            raise DimensionError("mask bits must be 0 or 1")
        bits = raw.astype(np.uint8)
        layout = tuple(self.layout)
        _check_layout(layout, bits.size)
        object.__setattr__(self, "bits", _frozen(bits))
        object.__setattr__(self, "layout", layout)
        object.__setattr__(self, "_weights", _frozen(bits.astype(np.float64)))

    @classmethod
    def ones(cls, layout) -> "Mask":
        return cls(np.ones(_layout_size(layout), dtype=np.uint8), layout)

    @classmethod
    def zeros(cls, layout) -> "Mask":
        return cls(np.zeros(_layout_size(layout), dtype=np.uint8), layout)

    def __len__(self) -> int:
        return self.bits.size

    def __eq__(self, other) -> bool:
        if not isinstance(other, Mask):
            return NotImplemented
        return self.layout == other.layout and np.array_equal(self.bits, other.bits)

    @property
    def weights(self) -> np.ndarray:
        """The mask as a read-only float64 0/1 array."""
        return self._weights

    @property
    def density(self) -> float:
        return float(self.bits.sum()) / self.bits.size if self.bits.size else 0.0

    def kept(self) -> int:
        return int(self.bits.sum())

    def layer(self, name: str) -> np.ndarray:
        for s in self.layout:
            if s.name == name:
                return self.bits[s.as_slice()]
        raise KeyError(name)


@dataclass(frozen=True)
class ReductionNoiseReport:
    per_client: Mapping[int, float]
    max_ratio: float
    bound: float | None = None
    flagged: tuple = ()
    degenerate: bool = False


def _check_lengths(*items) -> None:
    sizes = {len(x) for x in items}
    if len(sizes) != 1:
        raise DimensionError(f"length mismatch: {[len(x) for x in items]}")


def apply_mask(theta: ParamVector, m: Mask) -> ParamVector:
    _check_lengths(theta, m)
    return ParamVector._trusted(theta.values * m.weights, theta.layout)


def reduction_noise(theta: ParamVector, m: Mask) -> float:
    """Return ``||theta - theta*m||^2 / ||theta||^2``; 0 for a zero vector."""
    _check_lengths(theta, m)
    total = theta.sqnorm()
    if total == 0.0:
        return 0.0
    removed = theta.values[m.bits == 0]
    return float(np.dot(removed, removed)) / total


def masked_axpy(theta: ParamVector, g: ParamVector, m: Mask, step: float) -> ParamVector:
    """``theta - step * g * m``; coordinates with a zero mask bit are untouched."""
    _check_lengths(theta, g, m)
    bad = _nonfinite_layer(g.values, g.layout)
    if bad is not None:
        raise NumericError(f"non-finite gradient in layer {bad!r}")
    return ParamVector._trusted(theta.values - step * g.values * m.weights, theta.layout)


def noise_report(theta: ParamVector, masks: Mapping[int, Mask] | Sequence[Mask],
                 bound: float | None = None) -> ReductionNoiseReport:
    if not isinstance(masks, Mapping):
        masks = dict(enumerate(masks))
    ratios = {int(c): reduction_noise(theta, m) for c, m in masks.items()}
    worst = max(ratios.values(), default=0.0)
    flagged = ()
    if bound is not None:
        flagged = tuple(c for c, r in ratios.items() if r > bound)
    return ReductionNoiseReport(ratios, worst, bound, flagged, degenerate=theta.sqnorm() == 0.0)
