"""Emulated binary floating-point formats with round-to-nearest-even.

A format is a finite set of reals parameterized by mantissa and exponent
bit counts. There are no infinities or NaNs: values beyond the largest
finite element saturate. All host-side arithmetic runs in float64, which
is wide enough to hold every element of every supported format exactly
(mantissa_bits <= 52, exponent_bits <= 11).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "FloatFormat",
    "Precision",
    "EXACT",
    "PRESETS",
    "parse_precision",
    "round_nearest",
    "round_nearest_info",
    "round_array",
    "normal_range",
    "is_representable",
    "representables_between",
]


@dataclass(frozen=True)
class FloatFormat:
    mantissa_bits: int  # b_m >= 1
    exponent_bits: int  # b_e >= 2

    def __post_init__(self) -> None:
        if self.mantissa_bits < 1:
            raise ValueError("mantissa_bits must be >= 1")
        if self.exponent_bits < 2:
            raise ValueError("exponent_bits must be >= 2")
        if self.mantissa_bits > 52 or self.exponent_bits > 11:
            raise ValueError("format exceeds float64 host precision")

    # Derived exponent bounds, e_min = 2 - 2^(b_e-1), e_max = 2^(b_e-1) - 1.
    @property
    def e_min(self) -> int:
        return 2 - 2 ** (self.exponent_bits - 1)

    @property
    def e_max(self) -> int:
        return 2 ** (self.exponent_bits - 1) - 1

    @property
    def min_normal(self) -> float:
        return math.ldexp(1.0, self.e_min)

    @property
    def max_value(self) -> float:
        return (2.0 - math.ldexp(1.0, -self.mantissa_bits)) * math.ldexp(1.0, self.e_max)

    @property
    def min_subnormal(self) -> float:
        return math.ldexp(1.0, self.e_min - self.mantissa_bits)


@dataclass(frozen=True)
class Precision:
    """Either exact host arithmetic (fmt is None) or a finite format."""

    fmt: FloatFormat | None = None

    @property
    def exact(self) -> bool:
        return self.fmt is None

    def __str__(self) -> str:
        if self.fmt is None:
            return "exact"
        return f"custom:{self.fmt.mantissa_bits},{self.fmt.exponent_bits}"


EXACT = Precision()

PRESETS: dict[str, FloatFormat] = {
    "bf16": FloatFormat(7, 8),
    "fp16": FloatFormat(10, 5),
    "fp32": FloatFormat(23, 8),
    "fp64": FloatFormat(52, 11),
}


def parse_precision(name: str) -> Precision:
    """Parse "exact", a preset name, or "custom:<b_m>,<b_e>"."""
    name = name.strip()
    if name == "exact":
        return EXACT
    if name in PRESETS:
        return Precision(PRESETS[name])
    if name.startswith("custom:"):
        try:
            bm_str, be_str = name[len("custom:"):].split(",")
            return Precision(FloatFormat(int(bm_str), int(be_str)))
        except ValueError as exc:
            raise ValueError(f"bad custom format spec {name!r}") from exc
    raise ValueError(f"unknown precision {name!r}")


def normal_range(fmt: FloatFormat) -> tuple[float, float]:
    """(smallest positive normal, largest finite value) of the format."""
    return fmt.min_normal, fmt.max_value


def round_nearest_info(x: float, fmt: FloatFormat) -> tuple[float, bool]:
    """Round x to the nearest format element, ties to even.

    Returns (value, saturated). Saturation means |x| exceeded the largest
    finite element and the result was clamped to it; the compiled-model
    constructions never produce such values, so a set flag indicates a bug
    in whatever produced x.
    """
    if math.isinf(x) or math.isnan(x):
        raise ValueError("round_nearest requires a finite input")
    if x == 0.0:
        return 0.0, False
    saturated = abs(x) > fmt.max_value
    if saturated:
        return math.copysign(fmt.max_value, x), True
    _, e = math.frexp(x)  # x = m * 2^e with 0.5 <= |m| < 1
    eff = min(max(e - 1, fmt.e_min), fmt.e_max)
    # Scale so the grid step becomes 1; both scalings are exact powers of 2.
    n = math.ldexp(x, fmt.mantissa_bits - eff)
    y = math.ldexp(round(n), eff - fmt.mantissa_bits)
    if abs(y) > fmt.max_value:
        return math.copysign(fmt.max_value, x), True
    return y, False


def round_nearest(x: float, fmt: FloatFormat) -> float:
    return round_nearest_info(x, fmt)[0]


def round_array(x: np.ndarray, fmt: FloatFormat) -> tuple[np.ndarray, bool]:
    """Vectorized round_nearest over a float64 array.

    Returns (rounded array, any_saturated). Bit-for-bit identical to the
    scalar routine on every element.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        return x.copy(), False
    if not np.all(np.isfinite(x)):
        raise ValueError("round_array requires finite inputs")
    with np.errstate(over="ignore", invalid="ignore"):
        _, e = np.frexp(x)
        eff = np.clip(e - 1, fmt.e_min, fmt.e_max)
        n = np.ldexp(x, fmt.mantissa_bits - eff)
        y = np.ldexp(np.rint(n), eff - fmt.mantissa_bits)
    over = np.abs(x) > fmt.max_value
    clipped = np.abs(y) > fmt.max_value
    if over.any() or clipped.any():
        y = np.where(over | clipped, np.copysign(fmt.max_value, x), y)
    y = np.where(x == 0.0, 0.0, y)
    return y, bool(over.any())


def is_representable(x: float, fmt: FloatFormat) -> bool:
    return abs(x) <= fmt.max_value and round_nearest(x, fmt) == x


def representables_between(fmt: FloatFormat, lo: float, hi: float) -> list[float]:
    """All format elements in [lo, hi], ascending. Intended for small formats."""
    if lo > hi:
        return []
    out: set[float] = set()
    if lo <= 0.0 <= hi:
        out.add(0.0)
    step = fmt.min_subnormal
    for t in range(1, 2 ** fmt.mantissa_bits):
        for v in (t * step, -t * step):
            if lo <= v <= hi:
                out.add(v)
    for kappa in range(fmt.e_min, fmt.e_max + 1):
        base = math.ldexp(1.0, kappa)
        if base > max(abs(lo), abs(hi)) * 2:
            break
        for t in range(2 ** fmt.mantissa_bits):
            v = (1.0 + math.ldexp(t, -fmt.mantissa_bits)) * base
            if lo <= v <= hi:
                out.add(v)
            if lo <= -v <= hi:
                out.add(-v)
    return sorted(out)
