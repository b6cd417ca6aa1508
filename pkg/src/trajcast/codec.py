"""Gray-code bit-vector codec for quantized flight state.

Turns continuous flight-state attributes into fixed-width Gray-coded bit
vectors and back: quantization, binary <-> Gray conversion, the 78-bit joint
input vector, the 48-bit sign-magnitude differential output vector, and
trajectory reconstruction by cumulative summation of decoded differentials.

Everything here is a pure function on immutable values; nothing holds shared
mutable state, so all operations are safe to call concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, List, NamedTuple, Sequence

import numpy as np

#: Attribute names in joint-vector concatenation order.
ATTRIBUTES = ("lon", "lat", "alt", "vx", "vy", "vz")

#: Seconds between consecutive trajectory points.
STEP_SECONDS = 20


class CodecError(ValueError):
    """Base class for codec failures."""


class OutOfRangeError(CodecError):
    """A quantized attribute fell outside its representable envelope."""

    def __init__(self, attribute: str, value: int, width: int):
        self.attribute = attribute
        self.value = value
        self.width = width
        super().__init__(
            f"{attribute}: quantized value {value} outside [0, 2^{width})"
        )


class BitOverflowError(CodecError):
    """An unsigned integer does not fit the requested bit width."""


class TooShortError(CodecError):
    """A sequence is too short for differencing."""


class DeltaOverflowError(CodecError):
    """A differential value does not fit its sign-magnitude width.

    Raised at dataset-construction time so the offending window sample can be
    rejected outright; deltas are never silently saturated.
    """

    def __init__(self, attribute: str, delta: int, width: int):
        self.attribute = attribute
        self.delta = delta
        self.width = width
        super().__init__(
            f"{attribute}: delta {delta} exceeds signed range of {width}-bit field"
        )


class ReconstructionOutOfRangeError(CodecError):
    """A cumulative reconstruction left the representable envelope."""


@dataclass(frozen=True)
class QuantizationSpec:
    """Step sizes mapping continuous attributes to integer grid units."""

    lon_step: float = 0.001   # degrees
    lat_step: float = 0.001   # degrees
    alt_step: float = 10.0    # meters
    vel_step: float = 1.0     # km/h

    def __post_init__(self):
        for name, step in zip(
            ("lon_step", "lat_step", "alt_step", "vel_step"), self.steps[:4]
        ):
            if not step > 0:
                raise CodecError(f"{name} must be strictly positive, got {step}")

    @property
    def steps(self) -> tuple:
        """Per-attribute step sizes in ATTRIBUTES order."""
        return (
            self.lon_step,
            self.lat_step,
            self.alt_step,
            self.vel_step,
            self.vel_step,
            self.vel_step,
        )


@dataclass(frozen=True)
class BitWidthSpec:
    """Bit widths of the joint input vector and the differential output vector.

    Input widths cover absolute quantized attributes; differential widths
    cover signed per-step deltas, one sign bit plus Gray-coded magnitude.
    """

    lon: int = 18
    lat: int = 16
    alt: int = 11
    vx: int = 11
    vy: int = 11
    vz: int = 11
    d_lon: int = 8
    d_lat: int = 8
    d_alt: int = 8
    d_vx: int = 9
    d_vy: int = 9
    d_vz: int = 6

    def __post_init__(self):
        for w in self.diff_widths:
            if w < 2:
                raise CodecError(f"differential width {w} < 2 (need sign + magnitude)")

    @property
    def input_widths(self) -> tuple:
        return (self.lon, self.lat, self.alt, self.vx, self.vy, self.vz)

    @property
    def diff_widths(self) -> tuple:
        return (self.d_lon, self.d_lat, self.d_alt, self.d_vx, self.d_vy, self.d_vz)

    @property
    def input_offsets(self) -> tuple:
        out, acc = [], 0
        for w in self.input_widths:
            out.append(acc)
            acc += w
        return tuple(out)

    @property
    def diff_offsets(self) -> tuple:
        out, acc = [], 0
        for w in self.diff_widths:
            out.append(acc)
            acc += w
        return tuple(out)

    @property
    def input_total(self) -> int:
        return sum(self.input_widths)

    @property
    def diff_total(self) -> int:
        return sum(self.diff_widths)


DEFAULT_QUANT = QuantizationSpec()
DEFAULT_WIDTHS = BitWidthSpec()


@dataclass(frozen=True)
class TrajectoryPoint:
    """One timestamped flight state observation."""

    timestamp: int       # epoch seconds
    callsign: str
    lon: float           # degrees
    lat: float           # degrees
    alt: float           # meters
    vx: float            # km/h, east-positive
    vy: float            # km/h, north-positive
    vz: float            # km/h, up-positive

    def __post_init__(self):
        for name in ATTRIBUTES:
            if not math.isfinite(getattr(self, name)):
                raise CodecError(f"{name} is not finite")

    @property
    def values(self) -> tuple:
        return (self.lon, self.lat, self.alt, self.vx, self.vy, self.vz)


@dataclass(frozen=True)
class QuantizedPoint:
    """Flight state on the integer quantization grid."""

    lon_q: int
    lat_q: int
    alt_q: int
    vx_q: int
    vy_q: int
    vz_q: int

    def as_tuple(self) -> tuple:
        return (self.lon_q, self.lat_q, self.alt_q, self.vx_q, self.vy_q, self.vz_q)


class PointDelta(NamedTuple):
    """Signed per-attribute difference between two quantized points."""

    lon: int
    lat: int
    alt: int
    vx: int
    vy: int
    vz: int


class BitVector:
    """Fixed-width sequence of binary digits, most significant bit first.

    Leading zeros are preserved; length always equals the declared width.
    """

    __slots__ = ("_bits",)

    def __init__(self, bits: Sequence[int]):
        bits = tuple(int(b) for b in bits)
        if not bits:
            raise CodecError("BitVector must have at least one bit")
        if any(b not in (0, 1) for b in bits):
            raise CodecError("BitVector digits must be 0 or 1")
        object.__setattr__(self, "_bits", bits)

    @classmethod
    def from_int(cls, value: int, width: int) -> "BitVector":
        if width < 1:
            raise CodecError(f"width must be positive, got {width}")
        if value < 0 or value >= (1 << width):
            raise BitOverflowError(f"{value} does not fit in {width} bits")
        return cls(tuple((value >> (width - 1 - i)) & 1 for i in range(width)))

    @classmethod
    def from_string(cls, text: str) -> "BitVector":
        return cls(tuple(int(c) for c in text))

    @property
    def bits(self) -> tuple:
        return self._bits

    @property
    def width(self) -> int:
        return len(self._bits)

    def to_int(self) -> int:
        value = 0
        for b in self._bits:
            value = (value << 1) | b
        return value

    def to_array(self) -> np.ndarray:
        return np.array(self._bits, dtype=np.float64)

    def subvector(self, start: int, stop: int) -> "BitVector":
        return BitVector(self._bits[start:stop])

    def flip_lsb_index(self, index: int) -> "BitVector":
        """Return a copy with the bit at LSB-based ``index`` inverted."""
        pos = self.width - 1 - index
        bits = list(self._bits)
        bits[pos] ^= 1
        return BitVector(bits)

    def __len__(self) -> int:
        return len(self._bits)

    def __iter__(self) -> Iterator[int]:
        return iter(self._bits)

    def __eq__(self, other) -> bool:
        return isinstance(other, BitVector) and self._bits == other._bits

    def __hash__(self) -> int:
        return hash(self._bits)

    def __str__(self) -> str:
        return "".join(str(b) for b in self._bits)

    def __repr__(self) -> str:
        return f"BitVector('{self}')"


def concat_bits(*vectors: BitVector) -> BitVector:
    bits = []
    for v in vectors:
        bits.extend(v.bits)
    return BitVector(bits)


@dataclass(frozen=True)
class EncodedPoint:
    """Joint Gray-coded input vector of one quantized point (width 78 by default)."""

    joint: BitVector


@dataclass(frozen=True)
class DifferentialField:
    """Sign-magnitude code of one signed delta: sign bit plus Gray magnitude."""

    sign_bit: int
    magnitude_gray: BitVector

    @property
    def width(self) -> int:
        return 1 + self.magnitude_gray.width

    @property
    def joint(self) -> BitVector:
        return BitVector((self.sign_bit,) + self.magnitude_gray.bits)


@dataclass(frozen=True)
class DifferentialCode:
    """Concatenated differential fields for all six attributes (width 48 by default)."""

    joint: BitVector


# ---------------------------------------------------------------------------
# integer <-> Gray code
# ---------------------------------------------------------------------------


def gray_encode_int(value: int) -> int:
    """Gray code of a nonnegative integer: g = v ^ (v >> 1)."""
    if value < 0:
        raise CodecError("Gray code is defined for nonnegative integers")
    return value ^ (value >> 1)


def gray_decode_int(gray: int) -> int:
    """Inverse of :func:`gray_encode_int` via the doubling prefix-XOR scan."""
    if gray < 0:
        raise CodecError("Gray code is defined for nonnegative integers")
    value = gray
    shift = 1
    while (gray >> shift) > 0:
        value ^= gray >> shift
        shift <<= 1
    return value


def binary_encode(value: int, width: int) -> BitVector:
    """Plain base-2 bit vector of ``value``, MSB first, zero-padded to ``width``."""
    return BitVector.from_int(value, width)


def binary_decode(b: BitVector) -> int:
    return b.to_int()


def gray_from_binary(b: BitVector) -> BitVector:
    """g = b XOR (b >> 1), width preserved."""
    return BitVector.from_int(gray_encode_int(b.to_int()), b.width)


def binary_from_gray(g: BitVector) -> BitVector:
    """Prefix-XOR scan from the MSB; exact inverse of :func:`gray_from_binary`."""
    return BitVector.from_int(gray_decode_int(g.to_int()), g.width)


# ---------------------------------------------------------------------------
# quantization
# ---------------------------------------------------------------------------


def _round_half_away(x: float) -> int:
    """Round to nearest integer, ties away from zero."""
    if x >= 0.0:
        return int(math.floor(x + 0.5))
    return int(math.ceil(x - 0.5))


def quantize_point(
    p: TrajectoryPoint,
    q: QuantizationSpec = DEFAULT_QUANT,
    w: BitWidthSpec = DEFAULT_WIDTHS,
) -> QuantizedPoint:
    """Map each attribute to grid units by round-to-nearest (ties away from zero).

    Raises OutOfRangeError if any quantized attribute is negative or does not
    fit its input bit width.
    """
    units = []
    for name, value, step, width in zip(ATTRIBUTES, p.values, q.steps, w.input_widths):
        u = _round_half_away(value / step)
        if u < 0 or u >= (1 << width):
            raise OutOfRangeError(name, u, width)
        units.append(u)
    return QuantizedPoint(*units)


def dequantize(qp: QuantizedPoint, q: QuantizationSpec = DEFAULT_QUANT) -> tuple:
    """Grid units back to continuous attribute values."""
    return tuple(u * step for u, step in zip(qp.as_tuple(), q.steps))


# ---------------------------------------------------------------------------
# joint input vector
# ---------------------------------------------------------------------------


def encode_point(qp: QuantizedPoint, w: BitWidthSpec = DEFAULT_WIDTHS) -> EncodedPoint:
    """Per-attribute binary -> Gray -> concatenation in ATTRIBUTES order."""
    fields = [
        gray_from_binary(binary_encode(u, width))
        for u, width in zip(qp.as_tuple(), w.input_widths)
    ]
    return EncodedPoint(joint=concat_bits(*fields))


def split_encoded_point(e: EncodedPoint, w: BitWidthSpec = DEFAULT_WIDTHS) -> tuple:
    """Extract the six per-attribute Gray codes at their fixed offsets."""
    out = []
    for off, width in zip(w.input_offsets, w.input_widths):
        out.append(e.joint.subvector(off, off + width))
    return tuple(out)


def decode_point(e: EncodedPoint, w: BitWidthSpec = DEFAULT_WIDTHS) -> QuantizedPoint:
    """Inverse of :func:`encode_point`."""
    units = [
        binary_from_gray(field).to_int() for field in split_encoded_point(e, w)
    ]
    return QuantizedPoint(*units)


# ---------------------------------------------------------------------------
# differentials
# ---------------------------------------------------------------------------


def diff_sequence(points: Sequence[QuantizedPoint]) -> List[PointDelta]:
    """Consecutive per-attribute deltas; output length is input length - 1."""
    if len(points) < 2:
        raise TooShortError(f"need at least 2 points, got {len(points)}")
    out = []
    for prev, cur in zip(points[:-1], points[1:]):
        out.append(
            PointDelta(*(c - p for p, c in zip(prev.as_tuple(), cur.as_tuple())))
        )
    return out


def encode_differential(delta: int, width: int, attribute: str = "") -> DifferentialField:
    """Sign-magnitude encoding: sign bit then Gray code of |delta| on width-1 bits.

    Canonical zero carries sign bit 0; a delta outside (-2^(width-1), 2^(width-1))
    raises DeltaOverflowError.
    """
    if abs(delta) >= (1 << (width - 1)):
        raise DeltaOverflowError(attribute or "delta", delta, width)
    sign = 1 if delta < 0 else 0
    magnitude = gray_from_binary(binary_encode(abs(delta), width - 1))
    return DifferentialField(sign_bit=sign, magnitude_gray=magnitude)


def decode_differential(f: DifferentialField) -> int:
    """Signed delta of a differential field; negative zero normalizes to 0."""
    magnitude = binary_from_gray(f.magnitude_gray).to_int()
    if magnitude == 0:
        return 0
    return -magnitude if f.sign_bit else magnitude


def encode_delta_code(
    delta: PointDelta, w: BitWidthSpec = DEFAULT_WIDTHS
) -> DifferentialCode:
    """All six differential fields concatenated into one output code."""
    fields = [
        encode_differential(d, width, attribute=name)
        for d, width, name in zip(delta, w.diff_widths, ATTRIBUTES)
    ]
    return DifferentialCode(joint=concat_bits(*(f.joint for f in fields)))


def split_delta_code(
    code: DifferentialCode, w: BitWidthSpec = DEFAULT_WIDTHS
) -> tuple:
    """Extract the six DifferentialFields at their fixed offsets."""
    out = []
    for off, width in zip(w.diff_offsets, w.diff_widths):
        field_bits = code.joint.subvector(off, off + width)
        out.append(
            DifferentialField(
                sign_bit=field_bits.bits[0],
                magnitude_gray=field_bits.subvector(1, width),
            )
        )
    return tuple(out)


def decode_delta_code(
    code: DifferentialCode, w: BitWidthSpec = DEFAULT_WIDTHS
) -> PointDelta:
    return PointDelta(*(decode_differential(f) for f in split_delta_code(code, w)))


def harden(
    soft: Sequence[float], w: BitWidthSpec = DEFAULT_WIDTHS
) -> DifferentialCode:
    """Threshold per-bit probabilities into a differential code.

    A bit is 1 iff its probability is strictly greater than 0.5, so exactly
    0.5 hardens to 0 (deterministic tie-breaking).
    """
    probs = np.asarray(soft, dtype=np.float64).reshape(-1)
    if probs.shape[0] != w.diff_total:
        raise CodecError(
            f"expected {w.diff_total} probabilities, got {probs.shape[0]}"
        )
    if np.any(probs < 0.0) or np.any(probs > 1.0):
        raise CodecError("probabilities must lie in [0, 1]")
    bits = (probs > 0.5).astype(int)
    return DifferentialCode(joint=BitVector(bits.tolist()))


# ---------------------------------------------------------------------------
# reconstruction
# ---------------------------------------------------------------------------


def reconstruct(
    anchor: QuantizedPoint,
    deltas: Sequence[PointDelta],
    q: QuantizationSpec = DEFAULT_QUANT,
    w: BitWidthSpec = DEFAULT_WIDTHS,
    clamp: bool = False,
    anchor_timestamp: int = 0,
    callsign: str = "",
) -> List[TrajectoryPoint]:
    """Cumulative sum of deltas anchored at the last observation, dequantized.

    Timestamps advance STEP_SECONDS per horizon from ``anchor_timestamp``.
    With ``clamp=False`` (training-time semantics) a cumulative value leaving
    the representable envelope raises ReconstructionOutOfRangeError; with
    ``clamp=True`` (inference-time semantics) values are clamped to the
    envelope so a prediction is always produced.
    """
    if not deltas:
        raise TooShortError("deltas must be nonempty")
    units = list(anchor.as_tuple())
    out = []
    for j, delta in enumerate(deltas, start=1):
        for i, (d, width, name) in enumerate(zip(delta, w.input_widths, ATTRIBUTES)):
            u = units[i] + d
            if u < 0 or u >= (1 << width):
                if not clamp:
                    raise ReconstructionOutOfRangeError(
                        f"{name}: cumulative value {u} at horizon {j} leaves [0, 2^{width})"
                    )
                u = min(max(u, 0), (1 << width) - 1)
            units[i] = u
        values = [u * step for u, step in zip(units, q.steps)]
        out.append(
            TrajectoryPoint(
                timestamp=anchor_timestamp + STEP_SECONDS * j,
                callsign=callsign,
                lon=values[0],
                lat=values[1],
                alt=values[2],
                vx=values[3],
                vy=values[4],
                vz=values[5],
            )
        )
    return out


# ---------------------------------------------------------------------------
# numpy bridges for the network
# ---------------------------------------------------------------------------


def point_bits(qp: QuantizedPoint, w: BitWidthSpec = DEFAULT_WIDTHS) -> np.ndarray:
    """Joint input vector as a float64 array of 0/1 values."""
    return encode_point(qp, w).joint.to_array()


def delta_bits(delta: PointDelta, w: BitWidthSpec = DEFAULT_WIDTHS) -> np.ndarray:
    """Differential code as a float64 array of 0/1 values."""
    return encode_delta_code(delta, w).joint.to_array()


def window_bit_arrays(
    points: Sequence[TrajectoryPoint],
    q: QuantizationSpec = DEFAULT_QUANT,
    w: BitWidthSpec = DEFAULT_WIDTHS,
) -> tuple:
    """Observation window to network inputs.

    Returns ``(obs_bits [k, input_total], diff_bits [k-1, diff_total])`` for a
    window of k observations; the differential rows are the k-1 consecutive
    observation deltas.
    """
    quantized = [quantize_point(p, q, w) for p in points]
    obs = np.stack([point_bits(qp, w) for qp in quantized])
    diffs = np.stack([delta_bits(d, w) for d in diff_sequence(quantized)])
    return obs, diffs
