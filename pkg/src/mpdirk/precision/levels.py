"""Precision levels, casts between them, and decimal chopping."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dw import DWArray


@dataclass(frozen=True)
class PrecisionLevel:
    tag: str
    unit_roundoff: float
    rank: int  # larger is finer

    def __str__(self):
        return self.tag

    def finer_than(self, other: "PrecisionLevel") -> bool:
        return self.rank > other.rank


SINGLE = PrecisionLevel("single", 2.0 ** -24, 0)
DOUBLE = PrecisionLevel("double", 2.0 ** -53, 1)
EXTENDED = PrecisionLevel("extended", 2.0 ** -106, 2)

LEVELS = {lvl.tag: lvl for lvl in (SINGLE, DOUBLE, EXTENDED)}
_ALIASES = {"quad": "extended", "float32": "single", "float64": "double", "32": "single",
            "64": "double", "128": "extended"}


def level(tag) -> PrecisionLevel:
    if isinstance(tag, PrecisionLevel):
        return tag
    key = str(tag).strip().lower()
    key = _ALIASES.get(key, key)
    try:
        return LEVELS[key]
    except KeyError:
        raise ValueError(f"unknown precision level {tag!r}") from None


def parse_pair(spec: str) -> tuple[PrecisionLevel, PrecisionLevel]:
    """Parse ``"high/low"`` such as ``"double/single"``."""
    try:
        high, low = spec.split("/")
    except ValueError:
        raise ValueError(f"precision pair must look like 'high/low', got {spec!r}") from None
    return level(high), level(low)


def level_of(v) -> PrecisionLevel:
    if isinstance(v, DWArray):
        return EXTENDED
    dtype = np.asarray(v).dtype
    if dtype == np.float32:
        return SINGLE
    if dtype == np.float64:
        return DOUBLE
    raise TypeError(f"no precision level for dtype {dtype}")


def _dw_to_single(x: DWArray):
    # round hi to single, then fix the rare case where lo decides the direction
    r = x.hi.astype(np.float32)
    rest = (x.hi - r.astype(np.float64)) + x.lo
    up = np.nextafter(r, np.float32(np.inf))
    down = np.nextafter(r, np.float32(-np.inf))
    half_up = (up.astype(np.float64) - r) / 2
    half_down = (r.astype(np.float64) - down) / 2
    with np.errstate(invalid="ignore"):
        r = np.where(rest > half_up, up, r)
        r = np.where(-rest > half_down, down, r)
    return r


def cast_down(v, to) -> np.ndarray:
    """Round ``v`` to the nearest values representable at the coarser level ``to``."""
    to = level(to)
    src = level_of(v)
    if not src.finer_than(to):
        raise ValueError(f"cannot cast down from {src} to {to}")
    if src is EXTENDED:
        if to is DOUBLE:
            return v.hi + v.lo
        return _dw_to_single(v)
    return np.asarray(v, dtype=np.float64).astype(np.float32)


def cast_up(v, to):
    """Exact embedding of ``v`` into the finer level ``to``."""
    to = level(to)
    src = level_of(v)
    if not to.finer_than(src):
        raise ValueError(f"cannot cast up from {src} to {to}")
    if to is EXTENDED:
        return DWArray(np.asarray(v, dtype=np.float64))
    return np.asarray(v).astype(np.float64)


def as_level(v, to):
    """Cast in whichever direction is needed; identity when already at ``to``."""
    to = level(to)
    src = level_of(v)
    if src is to:
        return v
    if to.finer_than(src):
        return cast_up(v, to)
    return cast_down(v, to)


# -- decimal chopping ----------------------------------------------------------

@dataclass(frozen=True)
class ChopSpec:
    """Keep ``digits`` significant decimal digits; perturbation size 10**-digits."""

    digits: int

    def __post_init__(self):
        if int(self.digits) < 1:
            raise ValueError("chop digits must be >= 1")

    @property
    def eps(self) -> float:
        return 10.0 ** (-self.digits)


def _digits_of(spec) -> int:
    return spec.digits if isinstance(spec, ChopSpec) else int(spec)


def chop(v, spec) -> np.ndarray:
    """Truncate each element toward zero after ``d`` significant decimal digits.

    The significand is scaled by an exact power of ten, truncated and scaled
    back. Scaled values within a few ulps of an integer are snapped to it so
    that decimal numbers already carrying ``d`` digits are fixed points.
    """
    d = _digits_of(spec)
    if d < 1:
        raise ValueError("chop digits must be >= 1")
    x = np.asarray(v, dtype=np.float64)
    out = np.zeros_like(x)
    mask = np.isfinite(x) & (x != 0.0)
    if not np.any(mask):
        return np.where(np.isfinite(x), out, x)
    a = np.abs(x[mask])
    e = np.floor(np.log10(a)).astype(np.int64)
    k = (d - 1) - e  # value * 10**k has d integer digits
    t = _scale(a, k)
    # log10 can be off by one near powers of ten
    hi = t >= 10.0 ** d
    lo = t < 10.0 ** (d - 1)
    if np.any(hi | lo):
        k = k - hi.astype(np.int64) + lo.astype(np.int64)
        t = _scale(a, k)
    n = np.round(t)
    snap = np.abs(t - n) <= 4.0 * np.spacing(np.maximum(t, 1.0))
    n = np.where(snap, n, np.floor(t))
    res = _unscale(n, k)
    out[mask] = np.copysign(res, x[mask])
    return np.where(np.isfinite(x), out, x)


def _scale(a, k):
    # powers of ten up to 1e22 are exact, so these multiply or divide round once
    out = np.empty_like(a)
    pos = k >= 0
    out[pos] = a[pos] * _pow10(np.minimum(k[pos], 300))
    out[~pos] = a[~pos] / _pow10(-k[~pos])
    big = k > 300  # subnormal inputs: 10**k itself would overflow
    if np.any(big):
        half = k[big] // 2
        out[big] = (a[big] * _pow10(half)) * _pow10(k[big] - half)
    return out


def _unscale(n, k):
    out = np.empty_like(n)
    exact = np.abs(k) <= _EXACT_POW10
    pos = exact & (k >= 0)
    neg = exact & (k < 0)
    out[pos] = n[pos] / _pow10(k[pos])
    out[neg] = n[neg] * _pow10(-k[neg])
    far = ~exact
    if np.any(far):
        # correctly rounded decimal conversion for the rare very small or large entries
        out[far] = [float(f"{int(m)}e{-int(e)}") for m, e in zip(n[far], k[far])]
    return out


_EXACT_POW10 = 22


def _pow10(k):
    return np.power(10.0, k.astype(np.float64))
