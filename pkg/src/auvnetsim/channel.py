"""Acoustic channel models: sound speed, transmission loss, packet success.

Two transmission loss models are available. The analytic model combines
geometric spreading, Thorp absorption, and a Gaussian gain bump centered on
a sound channel axis; it is a calibration surrogate shaped like a shallow
duct, not a physics solver. The grid model interpolates a precomputed TL
lattice (for tables produced by an external ray/mode tool).

Packet reception is a Bernoulli draw with success probability given by a
logistic curve over SNR, so the channel stays cheap enough for large
Monte Carlo sweeps while preserving the qualitative range/depth behaviour.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

SOUND_SPEED_FALLBACK_MPS = 1500.0

SPEED_HARD_MIN, SPEED_HARD_MAX = 1300.0, 1700.0
SPEED_SOFT_MIN, SPEED_SOFT_MAX = 1400.0, 1600.0


class ChannelError(Exception):
    pass


class OutOfGrid(ChannelError):
    """Strict grid lookup outside the tabulated lattice."""


class SoundSpeedProfile:
    """Depth-indexed sound speed, linear between samples, clamped outside."""

    def __init__(self, depths_m, speeds_mps):
        depths = np.asarray(depths_m, dtype=float)
        speeds = np.asarray(speeds_mps, dtype=float)
        if depths.ndim != 1 or depths.size < 2 or depths.shape != speeds.shape:
            raise ValueError("profile needs at least two (depth, speed) samples")
        if not np.all(np.diff(depths) > 0):
            raise ValueError("profile depths must be strictly increasing")
        if np.any(speeds < SPEED_HARD_MIN) or np.any(speeds > SPEED_HARD_MAX):
            raise ValueError(
                f"sound speed outside [{SPEED_HARD_MIN:.0f}, {SPEED_HARD_MAX:.0f}] m/s"
            )
        if np.any(speeds < SPEED_SOFT_MIN) or np.any(speeds > SPEED_SOFT_MAX):
            log.warning("sound speed outside the usual %.0f..%.0f m/s band",
                        SPEED_SOFT_MIN, SPEED_SOFT_MAX)
        self.depths_m = depths
        self.speeds_mps = speeds

    @classmethod
    def from_csv(cls, path) -> "SoundSpeedProfile":
        depths, speeds = [], []
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != ["depth_m", "speed_mps"]:
                raise ValueError(f"{path}: expected header depth_m,speed_mps")
            for row in reader:
                depths.append(float(row["depth_m"]))
                speeds.append(float(row["speed_mps"]))
        return cls(depths, speeds)

    def sample(self, depth_m: float) -> float:
        """Speed at depth (m/s); end values extend beyond the profile."""
        return float(np.interp(depth_m, self.depths_m, self.speeds_mps))

    def mean_speed(self, d1_m: float, d2_m: float) -> float:
        """Depth-averaged speed between two depths (m/s)."""
        lo, hi = sorted((d1_m, d2_m))
        if hi - lo < 1e-9:
            return self.sample(lo)
        inner = self.depths_m[(self.depths_m > lo) & (self.depths_m < hi)]
        knots = np.concatenate(([lo], inner, [hi]))
        vals = np.interp(knots, self.depths_m, self.speeds_mps)
        return float(np.trapezoid(vals, knots) / (hi - lo))

    def min_speed_depth(self) -> float:
        """Depth of the minimum sampled speed (shallowest on ties)."""
        return float(self.depths_m[int(np.argmin(self.speeds_mps))])


def thorp_alpha_db_per_km(f_khz: float) -> float:
    """Thorp absorption coefficient (dB/km) at frequency f (kHz)."""
    f2 = f_khz * f_khz
    return 0.11 * f2 / (1 + f2) + 44 * f2 / (4100 + f2) + 2.75e-4 * f2 + 0.003


@dataclass(frozen=True)
class AnalyticDuctModel:
    """Spreading + absorption with a Gaussian sound-channel gain bump.

    TL(d) = k*10*log10(range) + alpha(f)*range/1000 - G(tx_depth, rx_depth),
    floored at 0 dB. The gain peaks when both endpoints sit on the axis.
    """

    duct_depth_m: float
    k_spread: float = 1.5
    f_khz: float = 26.0
    duct_sigma_m: float = 6.0
    duct_gain_db: float = 25.0

    def tl_db(self, tx_depth_m: float, rx_depth_m: float, range_m: float) -> float:
        if range_m <= 0:
            raise ValueError("range must be positive")
        alpha = thorp_alpha_db_per_km(self.f_khz)
        dz_tx = tx_depth_m - self.duct_depth_m
        dz_rx = rx_depth_m - self.duct_depth_m
        gain = self.duct_gain_db * math.exp(
            -(dz_tx * dz_tx + dz_rx * dz_rx) / (2.0 * self.duct_sigma_m**2)
        )
        tl = self.k_spread * 10.0 * math.log10(range_m) + alpha * range_m / 1000.0 - gain
        return max(tl, 0.0)


class GridTlModel:
    """Transmission loss from a tabulated (tx_depth, rx_depth, range) lattice."""

    def __init__(self, tx_depths_m, rx_depths_m, ranges_m, tl_db, strict: bool = False):
        self.tx_depths = np.asarray(tx_depths_m, dtype=float)
        self.rx_depths = np.asarray(rx_depths_m, dtype=float)
        self.ranges = np.asarray(ranges_m, dtype=float)
        self.values = np.asarray(tl_db, dtype=float)
        self.strict = strict
        for axis in (self.tx_depths, self.rx_depths, self.ranges):
            if axis.size < 2 or not np.all(np.diff(axis) > 0):
                raise ValueError("grid axes need >= 2 strictly increasing values")
        expected = (self.tx_depths.size, self.rx_depths.size, self.ranges.size)
        if self.values.shape != expected:
            raise ValueError(f"grid values shape {self.values.shape} != {expected}")

    @classmethod
    def from_csv(cls, path, strict: bool = False) -> "GridTlModel":
        cells: dict[tuple[float, float, float], float] = {}
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            expected = ["tx_depth_m", "rx_depth_m", "range_m", "tl_db"]
            if reader.fieldnames != expected:
                raise ValueError(f"{path}: expected header {','.join(expected)}")
            for row in reader:
                key = (float(row["tx_depth_m"]), float(row["rx_depth_m"]), float(row["range_m"]))
                cells[key] = float(row["tl_db"])
        txs = sorted({k[0] for k in cells})
        rxs = sorted({k[1] for k in cells})
        rngs = sorted({k[2] for k in cells})
        values = np.empty((len(txs), len(rxs), len(rngs)))
        for i, tz in enumerate(txs):
            for j, rz in enumerate(rxs):
                for k, r in enumerate(rngs):
                    try:
                        values[i, j, k] = cells[(tz, rz, r)]
                    except KeyError:
                        raise ValueError(f"{path}: missing lattice point ({tz}, {rz}, {r})") from None
        return cls(txs, rxs, rngs, values, strict=strict)

    @staticmethod
    def _locate(axis: np.ndarray, x: float) -> tuple[int, float]:
        """Cell index and fractional position, clamped to the axis."""
        if x <= axis[0]:
            return 0, 0.0
        if x >= axis[-1]:
            return axis.size - 2, 1.0
        i = int(np.searchsorted(axis, x, side="right")) - 1
        return i, (x - axis[i]) / (axis[i + 1] - axis[i])

    def tl_db(self, tx_depth_m: float, rx_depth_m: float, range_m: float) -> float:
        if self.strict:
            for axis, x, name in (
                (self.tx_depths, tx_depth_m, "tx_depth"),
                (self.rx_depths, rx_depth_m, "rx_depth"),
                (self.ranges, range_m, "range"),
            ):
                if x < axis[0] or x > axis[-1]:
                    raise OutOfGrid(f"{name}={x} outside [{axis[0]}, {axis[-1]}]")
        i, u = self._locate(self.tx_depths, tx_depth_m)
        j, v = self._locate(self.rx_depths, rx_depth_m)
        k, w = self._locate(self.ranges, range_m)
        c = self.values[i : i + 2, j : j + 2, k : k + 2]
        c = c[0] * (1 - u) + c[1] * u          # collapse tx axis
        c = c[0] * (1 - v) + c[1] * v          # collapse rx axis
        return float(c[0] * (1 - w) + c[1] * w)


@dataclass(frozen=True)
class LinkBudget:
    source_level_db: float = 187.0  # re uPa at 1 m
    noise_level_db: float = 60.0    # effective in-band level
    snr50_db: float = 10.0          # SNR of 50% packet success
    snr_slope_db: float = 1.5

    def snr_db(self, tl_db: float, extra_gain_db: float = 0.0) -> float:
        return self.source_level_db - tl_db + extra_gain_db - self.noise_level_db

    def packet_success_prob(self, snr_db: float) -> float:
        return 1.0 / (1.0 + math.exp(-(snr_db - self.snr50_db) / self.snr_slope_db))


def directivity_gain_db(
    tx_xy: tuple[float, float],
    tx_heading_deg: float,
    rx_xy: tuple[float, float],
    rx_heading_deg: float,
    d_db: float = 6.0,
) -> float:
    """Heading-dependent transducer gain, summed over both endpoints.

    Each endpoint contributes d_db/2 when its stern (heading + 180 deg)
    points at the peer and 0 when its bow does, varying smoothly between.
    Headings are degrees counterclockwise from +x.
    """
    dx, dy = rx_xy[0] - tx_xy[0], rx_xy[1] - tx_xy[1]
    if dx == 0 and dy == 0:
        return d_db  # co-located, treat as aligned
    bearing = math.degrees(math.atan2(dy, dx))

    def endpoint(heading_deg: float, to_peer_deg: float) -> float:
        off = math.radians((heading_deg + 180.0) - to_peer_deg)
        return (d_db / 2.0) * (1.0 + math.cos(off)) / 2.0

    return endpoint(tx_heading_deg, bearing) + endpoint(rx_heading_deg, bearing + 180.0)


def propagation_delay_s(range_m: float, c_eff_mps: float = SOUND_SPEED_FALLBACK_MPS) -> float:
    return range_m / c_eff_mps


@dataclass(frozen=True)
class Reception:
    delivered: bool
    rx_time: float
    tl_db: float
    snr_db: float
    p_success: float


def decide_reception(
    rng: np.random.Generator,
    tx_pos: tuple[float, float, float],
    rx_pos: tuple[float, float, float],
    tx_time: float,
    airtime: float,
    tl_model,
    budget: LinkBudget,
    profile: SoundSpeedProfile | None = None,
    directivity_db: float = 0.0,
    tx_heading_deg: float = 0.0,
    rx_heading_deg: float = 0.0,
) -> Reception:
    """One Bernoulli reception decision for a transmission.

    Positions are (x, y, depth) in metres. The draw consumes exactly one
    uniform variate so call order fully determines reproducibility.
    """
    dx = rx_pos[0] - tx_pos[0]
    dy = rx_pos[1] - tx_pos[1]
    dz = rx_pos[2] - tx_pos[2]
    range_m = math.sqrt(dx * dx + dy * dy + dz * dz)
    range_m = max(range_m, 1.0)  # clamp to the 1 m reference distance
    tl = tl_model.tl_db(tx_pos[2], rx_pos[2], range_m)
    extra = 0.0
    if directivity_db > 0.0:
        extra = directivity_gain_db(
            (tx_pos[0], tx_pos[1]), tx_heading_deg,
            (rx_pos[0], rx_pos[1]), rx_heading_deg,
            d_db=directivity_db,
        )
    snr = budget.snr_db(tl, extra)
    p = budget.packet_success_prob(snr)
    delivered = bool(rng.random() < p)
    c_eff = profile.mean_speed(tx_pos[2], rx_pos[2]) if profile else SOUND_SPEED_FALLBACK_MPS
    rx_time = tx_time + airtime + propagation_delay_s(range_m, c_eff)
    return Reception(delivered, rx_time, tl, snr, p)
