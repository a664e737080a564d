"""Exact Gb/s arithmetic.

All bandwidth bookkeeping uses ``fractions.Fraction`` so that conservation
checks are exact; floats appear only at serialization edges (CSV cells,
JSON numbers coming in from clients).
"""

from fractions import Fraction

from .errors import SpecError

GBPS_ZERO = Fraction(0)


def parse_gbps(value, *, what: str = "bandwidth") -> Fraction:
    """Convert a JSON-ish value (int, float, or string) to an exact Gb/s.

    Strings may be decimals ("0.5") or fraction literals ("100/3").
    """
    if isinstance(value, bool):
        raise SpecError(f"{what} must be a number, got a boolean")
    if isinstance(value, Fraction):
        return value
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, (float, str)):
        try:
            return Fraction(str(value))
        except (ValueError, ZeroDivisionError) as exc:
            raise SpecError(f"{what} is not a valid number: {value!r}") from exc
    raise SpecError(f"{what} must be a number or string, got {type(value).__name__}")


def gbps_to_json(value: Fraction):
    """Exact JSON form: plain int when integral, 'num/den' string otherwise."""
    if value.denominator == 1:
        return int(value)
    return str(value)


def format_gbps(value: Fraction) -> str:
    """Fixed-precision decimal text for CSV cells (9 places, zeros trimmed)."""
    text = f"{float(value):.9f}".rstrip("0").rstrip(".")
    return text or "0"
