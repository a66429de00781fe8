"""Vehicle kinematics and CTD sampling.

Depth control is first order: vehicles move toward the commanded depth at a
bounded vertical rate and never overshoot. Horizontal drift, when enabled,
is an unbiased Gaussian random walk. Buoys are pinned at their surface
depth. The CTD yields sound speed plus white measurement noise; casts
collect one sample per fixed depth interval on the way down.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .channel import SoundSpeedProfile

MAX_VERTICAL_RATE_MPS = 0.3
CTD_NOISE_SIGMA_MPS = 0.05
CTD_SAMPLE_INTERVAL_M = 0.5


@dataclass
class VehicleState:
    x: float = 0.0
    y: float = 0.0
    depth_m: float = 0.0
    heading_deg: float = 0.0
    target_depth_m: float | None = None
    max_vertical_mps: float = MAX_VERTICAL_RATE_MPS
    drift_sigma_mps: float = 0.0
    pinned: bool = False  # surface buoys hold their depth

    @property
    def position(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.depth_m)


def step_kinematics(state: VehicleState, dt: float, rng: np.random.Generator | None = None) -> None:
    """Advance one tick: bounded-rate depth approach plus optional drift."""
    if not state.pinned and state.target_depth_m is not None:
        delta = state.target_depth_m - state.depth_m
        limit = state.max_vertical_mps * dt
        if abs(delta) <= limit:
            state.depth_m = state.target_depth_m
        else:
            state.depth_m += math.copysign(limit, delta)
    if state.drift_sigma_mps > 0.0 and rng is not None:
        scale = state.drift_sigma_mps * math.sqrt(dt)
        state.x += scale * rng.standard_normal()
        state.y += scale * rng.standard_normal()


def ctd_sample(
    profile: SoundSpeedProfile,
    depth_m: float,
    rng: np.random.Generator | None = None,
    noise_sigma_mps: float = CTD_NOISE_SIGMA_MPS,
) -> float:
    """Measured sound speed at depth: true profile value plus white noise."""
    speed = profile.sample(depth_m)
    if rng is not None and noise_sigma_mps > 0.0:
        speed += noise_sigma_mps * rng.standard_normal()
    return speed


@dataclass
class CtdCast:
    """Depth-ordered (depth, measured speed) pairs from one descent."""

    samples: list[tuple[float, float]] = field(default_factory=list)

    def add(self, depth_m: float, speed_mps: float) -> None:
        self.samples.append((depth_m, speed_mps))

    def __len__(self) -> int:
        return len(self.samples)


def optimal_depth(cast: CtdCast) -> float:
    """Depth of the minimum measured speed; ties go to the shallowest."""
    if not cast.samples:
        raise ValueError("empty cast")
    best_depth, best_speed = cast.samples[0]
    for depth, speed in cast.samples[1:]:
        if speed < best_speed or (speed == best_speed and depth < best_depth):
            best_depth, best_speed = depth, speed
    return best_depth


def collect_cast(
    profile: SoundSpeedProfile,
    start_depth_m: float,
    end_depth_m: float,
    rng: np.random.Generator | None = None,
    noise_sigma_mps: float = CTD_NOISE_SIGMA_MPS,
    interval_m: float = CTD_SAMPLE_INTERVAL_M,
) -> CtdCast:
    """Sample a full descent at fixed depth spacing, endpoints included."""
    cast = CtdCast()
    depth = start_depth_m
    while depth <= end_depth_m + 1e-9:
        cast.add(depth, ctd_sample(profile, depth, rng, noise_sigma_mps))
        depth += interval_m
    return cast
