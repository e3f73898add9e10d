"""Configuration triples and adaptive computation ranges.

A configuration c = (gamma_w, gamma_s, gamma_t) selects a sub-network of the one
trained network: gamma_w scales channel widths, gamma_s the spatial resolution and
gamma_t the number of input frames. The relative multiply-add cost of a fully
scalable network at c is gamma_w^2 * gamma_s^2 * gamma_t, so a computation range
[1/rho, 1] is covered by grids whose smallest product stays above 1/rho.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError

_EPS = 1e-6


def round_half_up(x: float) -> int:
    """round() with ties away from zero, e.g. 2.5 -> 3. Used for all size rounding."""
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class Configuration:
    """One (gamma_w, gamma_s, gamma_t) point, each in (0, 1]."""

    gamma_w: float
    gamma_s: float
    gamma_t: float

    def __post_init__(self):
        for name in ("gamma_w", "gamma_s", "gamma_t"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and 0.0 < v <= 1.0):
                raise ConfigError(f"{name} must be in (0, 1], got {v!r}")

    @property
    def is_full(self) -> bool:
        return self.gamma_w == 1.0 and self.gamma_s == 1.0 and self.gamma_t == 1.0

    def key(self) -> str:
        """Canonical string, 4 decimals per factor. Keys the BN statistics bank."""
        return f"w{self.gamma_w:.4f}_s{self.gamma_s:.4f}_t{self.gamma_t:.4f}"

    def as_tuple(self):
        return (self.gamma_w, self.gamma_s, self.gamma_t)


FULL = Configuration(1.0, 1.0, 1.0)


def reduction_factor(c: Configuration) -> float:
    """Idealised cost of c relative to the full configuration."""
    return c.gamma_w ** 2 * c.gamma_s ** 2 * c.gamma_t


@dataclass(frozen=True)
class ComputeRange:
    """Adaptive computation range: the grids a model is trained and deployed over.

    width_grid / spatial_grid / temporal_grid are the enumeration grids (ascending,
    max 1.0). Training samples gamma_w continuously from
    [width_min, width_sample_max]; gamma_s and gamma_t come from the grids.
    Pixel and frame counts are derived per architecture: round_half_up(gamma * base).
    """

    name: str
    rho: float                      # maximal reduction coefficient, range is [1/rho, 1]
    width_grid: tuple[float, ...]
    spatial_grid: tuple[float, ...]
    temporal_grid: tuple[float, ...]
    width_sample_max: float = 1.0   # upper end of the continuous gamma_w draw

    def __post_init__(self):
        if self.rho < 1.0:
            raise ConfigError(f"rho must be >= 1, got {self.rho}")
        for gname in ("width_grid", "spatial_grid", "temporal_grid"):
            grid = getattr(self, gname)
            if len(grid) == 0:
                raise ConfigError(f"{gname} is empty")
            if any(not (0.0 < g <= 1.0) for g in grid):
                raise ConfigError(f"{gname} values must be in (0, 1]: {grid}")
            if tuple(sorted(grid)) != tuple(grid) or len(set(grid)) != len(grid):
                raise ConfigError(f"{gname} must be strictly ascending: {grid}")
            if grid[-1] != 1.0:
                raise ConfigError(f"{gname} must contain 1.0 as its maximum: {grid}")
        if not (self.width_min <= self.width_sample_max <= 1.0):
            raise ConfigError(
                f"width_sample_max must lie in [width_min, 1], got {self.width_sample_max}"
            )
        lo = self.min_reduction()
        if lo < 1.0 / self.rho - _EPS:
            raise ConfigError(
                f"grid minimum {lo:.6f} falls below 1/rho = {1.0 / self.rho:.6f}"
            )

    @property
    def width_min(self) -> float:
        """Minimal width; the always-trained smallest sub-network uses this gamma_w."""
        return self.width_grid[0]

    def min_reduction(self) -> float:
        return reduction_factor(
            Configuration(self.width_grid[0], self.spatial_grid[0], self.temporal_grid[0])
        )

    def spatial_sizes(self, base_pixels: int) -> list[tuple[float, int]]:
        """(gamma_s, pixel) pairs for a given full spatial size."""
        return [(g, max(1, round_half_up(g * base_pixels))) for g in self.spatial_grid]

    def temporal_sizes(self, base_frames: int) -> list[tuple[float, int]]:
        """(gamma_t, frame count) pairs for a given full clip length."""
        return [(g, max(1, round_half_up(g * base_frames))) for g in self.temporal_grid]

    def without_temporal(self) -> "ComputeRange":
        """Spatial/width-only variant covering the same rho with gamma_t pinned to 1.

        The width and spatial lower bounds widen to rho^(-1/4) so that
        gamma_w^2 * gamma_s^2 still reaches 1/rho.
        """
        lo = math.ceil(self.rho ** -0.25 * 100) / 100   # round UP: never undershoot 1/rho
        widths = tuple(float(round(v, 2)) for v in np.linspace(lo, 1.0, len(self.width_grid)))
        spatials = tuple(float(round(v, 2)) for v in np.linspace(lo, 1.0, len(self.spatial_grid)))
        return replace(
            self,
            name=self.name + "-no-temporal",
            width_grid=_dedup(widths),
            spatial_grid=_dedup(spatials),
            temporal_grid=(1.0,),
        )


def _dedup(vals):
    return tuple(sorted(set(vals)))


@dataclass(frozen=True)
class SampledTriple:
    """One training draw: the full network plus two sub-networks."""

    full: Configuration
    random_sub: Configuration
    min_sub: Configuration

    def as_list(self) -> list[Configuration]:
        return [self.full, self.random_sub, self.min_sub]


# ---------------------------------------------------------------------------
# named ranges
# ---------------------------------------------------------------------------

RANGES: dict[str, ComputeRange] = {
    # wide range, rho = 64: 6 x 4 x 4 = 96 deployable configurations
    "0.016-1": ComputeRange(
        name="0.016-1",
        rho=64.0,
        width_grid=(0.5, 0.6, 0.7, 0.8, 0.9, 1.0),
        spatial_grid=(0.57, 0.71, 0.86, 1.0),
        temporal_grid=(0.25, 0.5, 0.75, 1.0),
    ),
    # narrow range, rho = 1/0.06: 5 x 3 x 3 = 45 deployable configurations
    "0.06-1": ComputeRange(
        name="0.06-1",
        rho=1.0 / 0.06,
        width_grid=(0.63, 0.73, 0.83, 0.93, 1.0),
        spatial_grid=(0.63, 0.8, 1.0),
        temporal_grid=(0.4, 0.63, 1.0),
    ),
    # degenerate range: full configuration only (plain training via the same loop)
    "full-only": ComputeRange(
        name="full-only",
        rho=1.0,
        width_grid=(1.0,),
        spatial_grid=(1.0,),
        temporal_grid=(1.0,),
    ),
}


def get_range(name: str) -> ComputeRange:
    try:
        return RANGES[name]
    except KeyError:
        raise ConfigError(
            f"unknown range {name!r}; available: {sorted(RANGES)}"
        ) from None


# ---------------------------------------------------------------------------
# enumeration and sampling
# ---------------------------------------------------------------------------

def enumerate_grid(crange: ComputeRange) -> list[Configuration]:
    """All grid configurations, deduplicated, sorted by descending reduction factor.

    Ties are broken by the (gamma_w, gamma_s, gamma_t) tuple so the order is total.
    """
    seen = set()
    configs = []
    for gw in crange.width_grid:
        for gs in crange.spatial_grid:
            for gt in crange.temporal_grid:
                c = Configuration(gw, gs, gt)
                if c.as_tuple() not in seen:
                    seen.add(c.as_tuple())
                    configs.append(c)
    configs.sort(key=lambda c: (-reduction_factor(c), c.as_tuple()))
    return configs


def sample_training_triple(
    crange: ComputeRange,
    rng: np.random.Generator,
    shared_draw: bool = False,
) -> SampledTriple:
    """Draw the per-iteration (full, random sub, minimal sub) triple.

    The full network always runs at (1, 1, 1). The random sub-network draws
    gamma_w uniformly from [width_min, width_sample_max] and gamma_s, gamma_t
    uniformly from the grids; the minimal sub-network pins gamma_w to width_min.
    With shared_draw=True both subs reuse one (gamma_s, gamma_t) draw.
    """
    def draw_res():
        gs = float(rng.choice(crange.spatial_grid))
        gt = float(rng.choice(crange.temporal_grid))
        return gs, gt

    gw = float(rng.uniform(crange.width_min, crange.width_sample_max))
    gs1, gt1 = draw_res()
    gs2, gt2 = (gs1, gt1) if shared_draw else draw_res()
    return SampledTriple(
        full=FULL,
        random_sub=Configuration(gw, gs1, gt1),
        min_sub=Configuration(crange.width_min, gs2, gt2),
    )
