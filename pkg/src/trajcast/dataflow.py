"""Trajectory ingestion, windowing, day-based splits, and synthetic flights.

Input CSV schema (one row per point, UTF-8, decimal point):

    timestamp,callsign,lon,lat,alt_m,vx_kmh,vy_kmh,vz_kmh

Tracks must be sampled at exact 20 s spacing; irregular gaps split a track
rather than being interpolated. The synthetic generator integrates simple
kinematic flights (climb, cruise with optional constant-rate turns, descend)
entirely inside the representable envelope and is a pure function of its
config.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np

from . import codec, geodesy
from .codec import (
    BitWidthSpec,
    CodecError,
    DEFAULT_QUANT,
    DEFAULT_WIDTHS,
    QuantizationSpec,
    STEP_SECONDS,
    TrajectoryPoint,
)

logger = logging.getLogger(__name__)

CSV_HEADER = ("timestamp", "callsign", "lon", "lat", "alt_m", "vx_kmh", "vy_kmh", "vz_kmh")

#: Epoch of the first synthetic day (2021-02-19 00:00:00 UTC).
SYNTH_EPOCH = 1613692800

PHASE_TAGS = ("climb", "cruise", "turn", "descend", "mixed")


class ParseError(ValueError):
    """Malformed CSV content; carries the offending line number when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class SchemaError(ValueError):
    """CSV header does not match the documented schema."""


class InsufficientDaysError(ValueError):
    """Fewer than three distinct calendar days in the dataset."""


class ConfigError(ValueError):
    """Invalid synthetic generator configuration."""


@dataclass(frozen=True)
class FlightTrack:
    """Time-ordered points of one flight at exact 20 s spacing."""

    callsign: str
    points: Tuple[TrajectoryPoint, ...]

    def __post_init__(self):
        object.__setattr__(self, "points", tuple(self.points))
        ts = [p.timestamp for p in self.points]
        for a, b in zip(ts[:-1], ts[1:]):
            if b - a != STEP_SECONDS:
                raise ValueError(
                    f"{self.callsign}: gap of {b - a} s between {a} and {b}"
                )

    def __len__(self):
        return len(self.points)


@dataclass(frozen=True)
class WindowSample:
    """k observations plus n targets from one flight, contiguous at 20 s."""

    observations: Tuple[TrajectoryPoint, ...]
    targets: Tuple[TrajectoryPoint, ...]
    flight_id: str
    start_timestamp: int
    phase: str


@dataclass
class WindowSet:
    """Windows plus rejection tallies from dataset construction."""

    windows: List[WindowSample] = field(default_factory=list)
    rejected: int = 0


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------


def load_csv(path, min_length: int = 2) -> List[FlightTrack]:
    """Parse one CSV file into uniformly spaced flight tracks.

    Rows are grouped by callsign and sorted by timestamp; a track is split
    wherever consecutive spacing deviates from 20 s; fragments shorter than
    ``min_length`` are dropped (count logged). Duplicate callsign+timestamp
    rows raise ParseError.
    """
    rows: Dict[str, List[Tuple[int, TrajectoryPoint]]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise SchemaError(f"{path}: empty file")
        header = [h.strip() for h in header]
        missing = [c for c in CSV_HEADER if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing columns {missing}")
        index = {c: header.index(c) for c in CSV_HEADER}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            try:
                point = TrajectoryPoint(
                    timestamp=int(row[index["timestamp"]]),
                    callsign=row[index["callsign"]].strip(),
                    lon=float(row[index["lon"]]),
                    lat=float(row[index["lat"]]),
                    alt=float(row[index["alt_m"]]),
                    vx=float(row[index["vx_kmh"]]),
                    vy=float(row[index["vy_kmh"]]),
                    vz=float(row[index["vz_kmh"]]),
                )
            except (ValueError, IndexError) as exc:
                raise ParseError(str(exc), line=lineno) from exc
            rows.setdefault(point.callsign, []).append((lineno, point))

    tracks: List[FlightTrack] = []
    dropped = 0
    for callsign in rows:
        entries = sorted(rows[callsign], key=lambda e: e[1].timestamp)
        for (la, pa), (lb, pb) in zip(entries[:-1], entries[1:]):
            if pa.timestamp == pb.timestamp:
                raise ParseError(
                    f"duplicate point for {callsign} at timestamp {pa.timestamp}",
                    line=lb,
                )
        segment: List[TrajectoryPoint] = []
        for _, point in entries:
            if segment and point.timestamp - segment[-1].timestamp != STEP_SECONDS:
                if len(segment) >= min_length:
                    tracks.append(FlightTrack(callsign, tuple(segment)))
                else:
                    dropped += 1
                segment = []
            segment.append(point)
        if len(segment) >= min_length:
            tracks.append(FlightTrack(callsign, tuple(segment)))
        else:
            dropped += 1
    if dropped:
        logger.info("%s: dropped %d fragments shorter than %d points", path, dropped, min_length)
    tracks.sort(key=lambda t: (t.points[0].timestamp, t.callsign))
    return tracks


def write_csv(path, tracks: Sequence[FlightTrack]) -> None:
    """Emit tracks in the documented schema (row order is deterministic)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for track in tracks:
            for p in track.points:
                writer.writerow(
                    [
                        p.timestamp,
                        p.callsign,
                        f"{p.lon:.6f}",
                        f"{p.lat:.6f}",
                        f"{p.alt:.2f}",
                        f"{p.vx:.3f}",
                        f"{p.vy:.3f}",
                        f"{p.vz:.3f}",
                    ]
                )


# ---------------------------------------------------------------------------
# windowing and splits
# ---------------------------------------------------------------------------


def _heading_deg(vx: float, vy: float) -> float | None:
    if math.hypot(vx, vy) < 1.0:
        return None
    return math.degrees(math.atan2(vx, vy))


def classify_phase(points: Sequence[TrajectoryPoint]) -> str:
    """Tag a window by vertical rate and heading change.

    The vertical rate is derived from altitude differences (the vz attribute
    saturates at zero inside the nonnegative envelope, so it cannot signal
    descent). Thresholds: |rate| > 2 km/h marks climb/descend, heading change
    > 1 degree per step marks a turn; combinations collapse to "mixed".
    """
    climb = descend = turn = False
    prev_heading = None
    for a, b in zip(points[:-1], points[1:]):
        rate_kmh = (b.alt - a.alt) * 3.6 / STEP_SECONDS
        if rate_kmh > 2.0:
            climb = True
        elif rate_kmh < -2.0:
            descend = True
        heading = _heading_deg(b.vx, b.vy)
        if heading is not None and prev_heading is not None:
            if abs(heading - prev_heading) > 1.0:
                turn = True
        if heading is not None:
            prev_heading = heading
    flags = [name for name, on in (("climb", climb), ("descend", descend), ("turn", turn)) if on]
    if not flags:
        return "cruise"
    if len(flags) > 1:
        return "mixed"
    return flags[0]


def _window_encodable(
    points: Sequence[TrajectoryPoint], q: QuantizationSpec, w: BitWidthSpec
) -> bool:
    """True when every point quantizes and every consecutive delta fits."""
    try:
        quantized = [codec.quantize_point(p, q, w) for p in points]
        for delta in codec.diff_sequence(quantized):
            codec.encode_delta_code(delta, w)
    except CodecError:
        return False
    return True


def make_windows(
    track: FlightTrack,
    k: int = 9,
    n: int = 15,
    stride: int = 1,
    quant: QuantizationSpec = DEFAULT_QUANT,
    widths: BitWidthSpec = DEFAULT_WIDTHS,
) -> List[WindowSample]:
    """Sliding (k observations, n targets) samples over one track.

    Windows whose points leave the quantization envelope or whose deltas do
    not fit the differential widths are rejected (count logged); short tracks
    yield an empty list.
    """
    windows, rejected = _make_windows_tally(track, k, n, stride, quant, widths)
    if rejected:
        logger.debug("%s: rejected %d windows", track.callsign, rejected)
    return windows


def _make_windows_tally(track, k, n, stride, quant, widths):
    if k < 1 or n < 1 or stride < 1:
        raise ValueError("k, n, stride must be positive")
    points = track.points
    windows: List[WindowSample] = []
    rejected = 0
    span = k + n
    for start in range(0, len(points) - span + 1, stride):
        chunk = points[start : start + span]
        if not _window_encodable(chunk, quant, widths):
            rejected += 1
            continue
        windows.append(
            WindowSample(
                observations=tuple(chunk[:k]),
                targets=tuple(chunk[k:]),
                flight_id=track.callsign,
                start_timestamp=chunk[0].timestamp,
                phase=classify_phase(chunk),
            )
        )
    return windows, rejected


def build_window_set(
    tracks: Sequence[FlightTrack],
    k: int = 9,
    n: int = 15,
    stride: int = 1,
    quant: QuantizationSpec = DEFAULT_QUANT,
    widths: BitWidthSpec = DEFAULT_WIDTHS,
) -> WindowSet:
    """Window every track and accumulate rejection tallies."""
    out = WindowSet()
    for track in tracks:
        windows, rejected = _make_windows_tally(track, k, n, stride, quant, widths)
        out.windows.extend(windows)
        out.rejected += rejected
    return out


def day_of(track: FlightTrack) -> int:
    return track.points[0].timestamp // 86400


def split_by_day(
    tracks: Sequence[FlightTrack],
) -> Tuple[List[FlightTrack], List[FlightTrack], List[FlightTrack]]:
    """Deterministic day partition: all but the last two days train, then
    one validation day, then one test day.

    Tracks are assigned by the UTC day of their first point, so no window
    ever straddles a split boundary.
    """
    days = sorted({day_of(t) for t in tracks})
    if len(days) < 3:
        raise InsufficientDaysError(
            f"need at least 3 distinct days, got {len(days)}"
        )
    val_day, test_day = days[-2], days[-1]
    train = [t for t in tracks if day_of(t) < val_day]
    val = [t for t in tracks if day_of(t) == val_day]
    test = [t for t in tracks if day_of(t) == test_day]
    return train, val, test


def training_arrays(
    sample: WindowSample,
    quant: QuantizationSpec = DEFAULT_QUANT,
    widths: BitWidthSpec = DEFAULT_WIDTHS,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Network arrays for one window: observation bits, prompt bits, target bits.

    Target rows are the differential codes of the n future steps anchored at
    the last observation.
    """
    obs_bits, diff_bits = codec.window_bit_arrays(sample.observations, quant, widths)
    quantized = [codec.quantize_point(p, quant, widths) for p in sample.observations[-1:]]
    quantized += [codec.quantize_point(p, quant, widths) for p in sample.targets]
    target_bits = np.stack(
        [codec.delta_bits(d, widths) for d in codec.diff_sequence(quantized)]
    )
    return obs_bits, diff_bits, target_bits


# ---------------------------------------------------------------------------
# synthetic flights
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SynthConfig:
    """Kinematic flight generator settings; output is a pure function of these."""

    seed: int = 0
    n_flights: int = 27
    days: int = 9
    climb_steps: Tuple[int, int] = (8, 20)
    cruise_steps: Tuple[int, int] = (45, 90)
    descend_steps: Tuple[int, int] = (8, 20)
    climb_rate_ms: Tuple[float, float] = (6.0, 14.0)
    descent_rate_ms: Tuple[float, float] = (5.0, 12.0)
    cruise_speed_kmh: Tuple[float, float] = (650.0, 900.0)
    turn_rate_degs: Tuple[float, float] = (0.2, 0.6)
    turn_prob: float = 0.5
    noise_std: Tuple[float, float, float, float, float, float] = (
        0.0002, 0.0002, 4.0, 1.0, 1.0, 0.5,
    )
    roi_lon: Tuple[float, float] = (94.616, 113.689)
    roi_lat: Tuple[float, float] = (19.305, 37.275)

    def __post_init__(self):
        if self.roi_lon[0] >= self.roi_lon[1] or self.roi_lat[0] >= self.roi_lat[1]:
            raise ConfigError("ROI bounds must be ordered (min, max)")
        if any(s < 0 for s in self.noise_std):
            raise ConfigError("noise standard deviations must be nonnegative")
        if self.n_flights < 0 or self.days < 1:
            raise ConfigError("n_flights must be >= 0 and days >= 1")
        if not 0.0 <= self.turn_prob <= 1.0:
            raise ConfigError("turn_prob must lie in [0, 1]")

    def to_dict(self) -> dict:
        import dataclasses

        return dataclasses.asdict(self)


def _ramped_rates(steps: int, target: float, ramp: int = 3) -> List[float]:
    """Vertical rate profile easing in and out to keep per-step deltas small."""
    out = []
    for i in range(steps):
        scale = min(1.0, (i + 1) / ramp, (steps - i) / ramp)
        out.append(target * scale)
    return out


def _gen_flight(cfg: SynthConfig, index: int) -> FlightTrack:
    rng = np.random.default_rng([cfg.seed, index])
    u = rng.uniform

    climb_n = int(rng.integers(cfg.climb_steps[0], cfg.climb_steps[1] + 1))
    cruise_n = int(rng.integers(cfg.cruise_steps[0], cfg.cruise_steps[1] + 1))
    descend_n = int(rng.integers(cfg.descend_steps[0], cfg.descend_steps[1] + 1))

    speed = u(*cfg.cruise_speed_kmh)
    heading = u(15.0, 75.0)
    lon = u(cfg.roi_lon[0] + 1.0, cfg.roi_lon[1] - 4.0)
    lat = u(cfg.roi_lat[0] + 1.0, cfg.roi_lat[1] - 4.0)
    alt = u(2500.0, 4500.0)

    climb_rate = u(*cfg.climb_rate_ms)
    descent_rate = u(*cfg.descent_rate_ms)
    # keep the descent from running the altitude into the floor
    max_total = alt + climb_rate * sum(
        min(1.0, (i + 1) / 3, (climb_n - i) / 3) for i in range(climb_n)
    ) * STEP_SECONDS
    budget = (max_total - 800.0) / max(descend_n * STEP_SECONDS, 1)
    descent_rate = min(descent_rate, max(budget, 0.0))

    vertical = (
        _ramped_rates(climb_n, climb_rate)
        + [0.0] * cruise_n
        + _ramped_rates(descend_n, -descent_rate)
    )
    total = len(vertical)

    # optional single constant-rate turn inside the cruise phase
    turn_delta = [0.0] * total
    if cfg.turn_prob > 0 and rng.random() < cfg.turn_prob and cruise_n > 12:
        turn_len = int(rng.integers(6, min(16, cruise_n - 4)))
        turn_start = climb_n + int(rng.integers(2, cruise_n - turn_len - 1))
        rate = u(*cfg.turn_rate_degs) * STEP_SECONDS
        direction = 1.0 if heading < 45.0 else -1.0
        for i in range(turn_start, turn_start + turn_len):
            turn_delta[i] = direction * rate

    day = index % cfg.days
    duration = total * STEP_SECONDS
    offset = int(rng.integers(0, 86400 - duration - 1))
    start_ts = SYNTH_EPOCH + day * 86400 + offset
    callsign = f"SYN{index:04d}"

    noise = cfg.noise_std
    points = []
    dlon_dt = dlat_dt = None
    heading_changed = True
    for i in range(total):
        if heading_changed or dlon_dt is None:
            dlon_dt = (
                speed
                * math.sin(math.radians(heading))
                / 3600.0
                / geodesy.km_per_deg_lon(lat)
            )
            dlat_dt = (
                speed * math.cos(math.radians(heading)) / 3600.0 / geodesy.km_per_deg_lat()
            )
        # report velocity against the local scale so it matches the actual
        # per-step displacement even when latitude drifts along a segment
        vx = dlon_dt * 3600.0 * geodesy.km_per_deg_lon(lat)
        vy = dlat_dt * 3600.0 * geodesy.km_per_deg_lat()
        vz = max(0.0, vertical[i] * 3.6)
        values = np.array([lon, lat, alt, vx, vy, vz])
        if any(s > 0 for s in noise):
            values = values + rng.normal(0.0, noise, size=6)
        values = np.maximum(values, 0.0)
        points.append(
            TrajectoryPoint(
                timestamp=start_ts + i * STEP_SECONDS,
                callsign=callsign,
                lon=float(values[0]),
                lat=float(values[1]),
                alt=float(values[2]),
                vx=float(values[3]),
                vy=float(values[4]),
                vz=float(values[5]),
            )
        )
        lon += dlon_dt * STEP_SECONDS
        lat += dlat_dt * STEP_SECONDS
        alt = max(0.0, alt + vertical[i] * STEP_SECONDS)
        if turn_delta[i] != 0.0:
            heading = min(85.0, max(5.0, heading + turn_delta[i]))
            heading_changed = True
        else:
            heading_changed = False
    return FlightTrack(callsign, tuple(points))


def synth_generate(cfg: SynthConfig) -> List[FlightTrack]:
    """Generate kinematic flights, fully determined by the config seed."""
    return [_gen_flight(cfg, i) for i in range(cfg.n_flights)]
