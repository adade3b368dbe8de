"""Coefficient fields a(x), b(x), p(x) and axis-aligned boxes."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import InputDomainError


@dataclass(frozen=True)
class Box:
    """Closed axis-aligned box [lo_1, hi_1] x ... x [lo_n, hi_n]."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __post_init__(self):
        if len(self.lo) != len(self.hi) or len(self.lo) == 0:
            raise InputDomainError("box bounds must be non-empty and of equal length")
        if any(h <= l for l, h in zip(self.lo, self.hi)):
            raise InputDomainError(f"degenerate box {self.lo} - {self.hi}")

    @classmethod
    def unit(cls, dim: int) -> "Box":
        return cls((0.0,) * dim, (1.0,) * dim)

    @property
    def dim(self) -> int:
        return len(self.lo)

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (np.asarray(self.lo) + np.asarray(self.hi))

    def contains(self, x: np.ndarray, tol: float = 1e-12) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        lo, hi = np.asarray(self.lo), np.asarray(self.hi)
        scale = tol * np.maximum(1.0, np.abs(hi - lo))
        return np.all((x >= lo - scale) & (x <= hi + scale), axis=-1)

    def corners(self) -> np.ndarray:
        grids = np.meshgrid(*[(l, h) for l, h in zip(self.lo, self.hi)], indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=-1)

    def scale_unit(self, u: np.ndarray) -> np.ndarray:
        """Map points of [0,1]^n affinely onto the box."""
        lo, hi = np.asarray(self.lo), np.asarray(self.hi)
        return lo + np.asarray(u) * (hi - lo)


class CoefficientKind(enum.Enum):
    CONSTANT = "constant"
    AFFINE = "affine"
    SMOOTH_PERIODIC = "periodic"


@dataclass(frozen=True)
class CoefficientField:
    """A scalar coefficient with its gradient.

    ``Constant``: value ``c``.  ``Affine``: ``c + slope . x``.  ``SmoothPeriodic``:
    ``c + amplitude * sin(2 pi wavevector . x + phase)``.  The slope and the
    wavevector are padded with zeros when evaluated in a higher dimension.
    """

    kind: CoefficientKind
    c: float
    slope: tuple[float, ...] = ()
    amplitude: float = 0.0
    wavevector: tuple[float, ...] = ()
    phase: float = 0.0
    name: str = ""

    @classmethod
    def constant(cls, c: float) -> "CoefficientField":
        return cls(CoefficientKind.CONSTANT, float(c))

    @classmethod
    def affine(cls, c: float, slope) -> "CoefficientField":
        return cls(CoefficientKind.AFFINE, float(c), slope=tuple(float(s) for s in slope))

    @classmethod
    def periodic(cls, c: float, amplitude: float, wavevector, phase: float = 0.0) -> "CoefficientField":
        return cls(
            CoefficientKind.SMOOTH_PERIODIC,
            float(c),
            amplitude=float(amplitude),
            wavevector=tuple(float(k) for k in wavevector),
            phase=float(phase),
        )

    @property
    def is_constant(self) -> bool:
        if self.kind is CoefficientKind.CONSTANT:
            return True
        if self.kind is CoefficientKind.AFFINE:
            return not any(self.slope)
        return self.amplitude == 0.0 or not any(self.wavevector)

    def _padded(self, vec: tuple[float, ...], dim: int) -> np.ndarray:
        if len(vec) > dim:
            if any(vec[dim:]):
                raise InputDomainError(
                    f"coefficient has {len(vec)} directional entries but x has dimension {dim}"
                )
            vec = vec[:dim]
        out = np.zeros(dim)
        out[: len(vec)] = vec
        return out

    def value(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        dim = x.shape[-1]
        if self.kind is CoefficientKind.CONSTANT:
            return np.full(x.shape[:-1], self.c)
        if self.kind is CoefficientKind.AFFINE:
            return self.c + x @ self._padded(self.slope, dim)
        k = self._padded(self.wavevector, dim)
        return self.c + self.amplitude * np.sin(2.0 * np.pi * (x @ k) + self.phase)

    def gradient(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        dim = x.shape[-1]
        if self.kind is CoefficientKind.CONSTANT:
            return np.zeros(x.shape)
        if self.kind is CoefficientKind.AFFINE:
            return np.broadcast_to(self._padded(self.slope, dim), x.shape).copy()
        k = self._padded(self.wavevector, dim)
        c = self.amplitude * 2.0 * np.pi * np.cos(2.0 * np.pi * (x @ k) + self.phase)
        return c[..., None] * k

    def lipschitz_bound(self, box: Box) -> float:
        """Upper bound for |grad| on the box (global bound; exact for Affine)."""
        if self.kind is CoefficientKind.CONSTANT:
            return 0.0
        if self.kind is CoefficientKind.AFFINE:
            return float(np.linalg.norm(self._padded(self.slope, box.dim)))
        k = self._padded(self.wavevector, box.dim)
        return float(abs(self.amplitude) * 2.0 * np.pi * np.linalg.norm(k))

    def bounds(self, box: Box) -> tuple[float, float]:
        """Lower and upper bounds of the value on the box.

        Exact for Constant and Affine (attained at corners); conservative
        ``c -/+ |amplitude|`` for SmoothPeriodic.
        """
        if self.kind is CoefficientKind.CONSTANT:
            return self.c, self.c
        if self.kind is CoefficientKind.AFFINE:
            v = self.value(box.corners())
            return float(v.min()), float(v.max())
        return self.c - abs(self.amplitude), self.c + abs(self.amplitude)

    def describe(self) -> str:
        if self.kind is CoefficientKind.CONSTANT:
            return f"{self.c!r}"
        if self.kind is CoefficientKind.AFFINE:
            return "affine(" + ", ".join(repr(v) for v in (self.c, *self.slope)) + ")"
        return (
            "periodic("
            + ", ".join(repr(v) for v in (self.c, self.amplitude, *self.wavevector))
            + f"; phase={self.phase!r})"
        )


def as_field(value) -> CoefficientField:
    """Promote a number to a constant field; pass fields through."""
    if isinstance(value, CoefficientField):
        return value
    return CoefficientField.constant(float(value))
