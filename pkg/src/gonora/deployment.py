"""Spatial network generation: point processes, path loss, and association.

Regions are centered on the origin.  The simulator consumes RRH and device
positions; the BS tiers (macro via hard-core thinning, small cells via
clustering) exist for topology studies, the decoupled-association analysis,
and the topology dump.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .config import ChannelSpec, DeploymentSpec, dbm_to_watts

TIER_POWER_DBM = {
    "macro": 46.0,
    "micro": 38.0,
    "pico": 30.0,
    "femto": 24.0,
    "rrh": 30.0,
    "device": 23.0,
}

# received-power distances are floored at 1 m to keep the power law finite
_DIST_FLOOR = 1.0


@dataclass(frozen=True)
class Region:
    """Origin-centered rectangle (width × height) or disc (radius)."""

    shape: str
    width: float = 0.0
    height: float = 0.0
    radius: float = 0.0

    @classmethod
    def rect(cls, width: float, height: Optional[float] = None) -> "Region":
        return cls("rect", width=width, height=height if height is not None else width)

    @classmethod
    def disc(cls, radius: float) -> "Region":
        return cls("disc", radius=radius)

    @classmethod
    def from_spec(cls, spec: DeploymentSpec) -> "Region":
        if spec.region_shape == "disc":
            return cls.disc(spec.region_size)
        return cls.rect(spec.region_size)

    @property
    def area(self) -> float:
        if self.shape == "rect":
            return self.width * self.height
        return math.pi * self.radius**2

    @property
    def diameter(self) -> float:
        if self.shape == "rect":
            return math.hypot(self.width, self.height)
        return 2.0 * self.radius

    def expand(self, margin: float) -> "Region":
        if self.shape == "rect":
            return Region.rect(self.width + 2 * margin, self.height + 2 * margin)
        return Region.disc(self.radius + margin)

    def contains(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(points)
        if self.shape == "rect":
            return (np.abs(pts[:, 0]) <= self.width / 2 + 1e-9) & (
                np.abs(pts[:, 1]) <= self.height / 2 + 1e-9
            )
        return np.hypot(pts[:, 0], pts[:, 1]) <= self.radius + 1e-9

    def sample_uniform(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if n == 0:
            return np.empty((0, 2))
        if self.shape == "rect":
            x = rng.uniform(-self.width / 2, self.width / 2, size=n)
            y = rng.uniform(-self.height / 2, self.height / 2, size=n)
        else:
            r = self.radius * np.sqrt(rng.random(n))
            theta = rng.uniform(0.0, 2.0 * math.pi, size=n)
            x, y = r * np.cos(theta), r * np.sin(theta)
        return np.column_stack([x, y])


@dataclass(frozen=True)
class PointSet:
    """Generated positions of one tier, with its transmit power."""

    positions: np.ndarray
    tier: str
    tx_power_w: float

    def __len__(self) -> int:
        return len(self.positions)


@dataclass(frozen=True)
class Association:
    """Per-device serving node indices, uplink and downlink separately."""

    uplink: np.ndarray
    downlink: np.ndarray


def sample_hppp(
    region: Region, density: float, rng: np.random.Generator, tier: str = "device"
) -> PointSet:
    """Homogeneous Poisson point process: Poisson count, uniform positions."""
    if density < 0:
        raise ValueError("density must be ≥ 0")
    n = int(rng.poisson(density * region.area))
    return PointSet(
        positions=region.sample_uniform(n, rng),
        tier=tier,
        tx_power_w=dbm_to_watts(TIER_POWER_DBM.get(tier, 30.0)),
    )


def sample_matern_hardcore(
    region: Region,
    parent_density: float,
    min_dist: float,
    rng: np.random.Generator,
    tier: str = "macro",
) -> PointSet:
    """Type-II hard-core thinning of a Poisson parent process.

    Every parent gets a uniform mark; a point survives iff no parent within
    min_dist carries a smaller mark, which forces all pairwise distances
    ≥ min_dist.  Parents are drawn on the region dilated by min_dist so the
    retained intensity inside the region is free of edge bias.
    """
    if not min_dist > 0:
        raise ValueError("min_dist must be > 0")
    extended = region.expand(min_dist)
    parents = sample_hppp(extended, parent_density, rng, tier=tier).positions
    n = len(parents)
    if n == 0:
        retained = parents
    else:
        marks = rng.random(n)
        diff = parents[:, None, :] - parents[None, :, :]
        close = (diff**2).sum(axis=2) < min_dist**2
        np.fill_diagonal(close, False)
        beaten = (close & (marks[None, :] < marks[:, None])).any(axis=1)
        retained = parents[~beaten]
    retained = retained[region.contains(retained)] if len(retained) else retained
    return PointSet(
        positions=retained,
        tier=tier,
        tx_power_w=dbm_to_watts(TIER_POWER_DBM.get(tier, 46.0)),
    )


def sample_poisson_cluster(
    region: Region,
    parent_density: float,
    mean_children: float,
    spread: float,
    rng: np.random.Generator,
    tier: str = "femto",
) -> PointSet:
    """Thomas cluster process: Gaussian-scattered offspring around Poisson parents.

    Offspring falling outside the region are dropped, so the realized
    intensity matches parent_density × mean_children only away from the
    border (spread ≪ region size).
    """
    if mean_children < 0:
        raise ValueError("mean_children must be ≥ 0")
    if not spread > 0:
        raise ValueError("spread must be > 0")
    parents = sample_hppp(region, parent_density, rng, tier=tier).positions
    children = []
    for parent in parents:
        count = int(rng.poisson(mean_children))
        if count:
            children.append(parent + rng.normal(0.0, spread, size=(count, 2)))
    pts = np.vstack(children) if children else np.empty((0, 2))
    pts = pts[region.contains(pts)] if len(pts) else pts
    return PointSet(
        positions=pts,
        tier=tier,
        tx_power_w=dbm_to_watts(TIER_POWER_DBM.get(tier, 24.0)),
    )


def deterministic_gain(
    tx_positions: np.ndarray, rx_positions: np.ndarray, channel: ChannelSpec
) -> np.ndarray:
    """Fading-averaged power gains, shape (n_tx, n_rx), distance floored at 1 m."""
    tx = np.atleast_2d(tx_positions)
    rx = np.atleast_2d(rx_positions)
    diff = tx[:, None, :] - rx[None, :, :]
    dist = np.maximum(np.sqrt((diff**2).sum(axis=2)), _DIST_FLOOR)
    return channel.ref_gain * dist ** (-channel.path_loss_exponent)


def path_gain(
    tx_position,
    rx_position,
    channel: ChannelSpec,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """Linear power gain of one link, with an Exp(1) fade under Rayleigh fading."""
    gain = float(
        deterministic_gain(np.asarray(tx_position), np.asarray(rx_position), channel)[0, 0]
    )
    if channel.fading == "rayleigh":
        if rng is None:
            raise ValueError("Rayleigh fading needs an rng")
        gain *= float(rng.exponential(1.0))
    return gain


def associate_dude(
    device_positions: np.ndarray,
    node_positions: np.ndarray,
    node_powers_w: np.ndarray,
    channel: ChannelSpec,
) -> Association:
    """Decoupled association: nearest node uplink, strongest received power downlink.

    Downlink strength uses fading-averaged gains so associations are stable
    across PRPs.  Ties break toward the lowest node index.
    """
    devices = np.atleast_2d(device_positions)
    nodes = np.atleast_2d(node_positions)
    if len(nodes) == 0:
        raise ValueError("need at least one candidate node")
    diff = devices[:, None, :] - nodes[None, :, :]
    dist = np.sqrt((diff**2).sum(axis=2))
    gains = deterministic_gain(devices, nodes, channel)
    received = gains * np.asarray(node_powers_w)[None, :]
    return Association(
        uplink=dist.argmin(axis=1),
        downlink=received.argmax(axis=1),
    )


def decoupling_fraction(association: Association) -> float:
    """Fraction of devices whose uplink and downlink nodes differ."""
    return float(np.mean(association.uplink != association.downlink))


def rrh_positions(spec: DeploymentSpec, region: Region, rng: np.random.Generator) -> np.ndarray:
    """Place the RRH pool: a centered grid (deterministic) or one HPPP draw.

    With rrh_density > 0 and the hppp layout the count itself is Poisson;
    otherwise exactly rrh_count radio heads are placed.
    """
    if spec.rrh_layout == "hppp":
        if spec.rrh_density > 0:
            pts = sample_hppp(region, spec.rrh_density, rng, tier="rrh").positions
            if len(pts):
                return pts
        return region.sample_uniform(max(spec.rrh_count, 1), rng)
    r = spec.rrh_count
    if region.shape == "disc":
        if r == 1:
            return np.zeros((1, 2))
        angles = 2.0 * math.pi * np.arange(r) / r
        rad = region.radius / 2.0
        return np.column_stack([rad * np.cos(angles), rad * np.sin(angles)])
    cols = math.ceil(math.sqrt(r))
    rows = math.ceil(r / cols)
    xs = (np.arange(cols) + 0.5) / cols - 0.5
    ys = (np.arange(rows) + 0.5) / rows - 0.5
    grid = [(x * region.width, y * region.height) for y in ys for x in xs]
    return np.array(grid[:r])


def generate_topology(
    spec: DeploymentSpec, rng: np.random.Generator
) -> list[PointSet]:
    """Generate every configured BS tier plus the RRH pool."""
    region = Region.from_spec(spec)
    sets: list[PointSet] = []
    if spec.macro_density > 0:
        if spec.macro_min_dist > 0:
            sets.append(
                sample_matern_hardcore(
                    region, spec.macro_density, spec.macro_min_dist, rng, tier="macro"
                )
            )
        else:
            sets.append(sample_hppp(region, spec.macro_density, rng, tier="macro"))
    if spec.micro_density > 0:
        sets.append(sample_hppp(region, spec.micro_density, rng, tier="micro"))
    if spec.pico_density > 0:
        sets.append(sample_hppp(region, spec.pico_density, rng, tier="pico"))
    if spec.femto_parent_density > 0 and spec.femto_mean_children > 0:
        sets.append(
            sample_poisson_cluster(
                region,
                spec.femto_parent_density,
                spec.femto_mean_children,
                spec.femto_spread,
                rng,
                tier="femto",
            )
        )
    sets.append(
        PointSet(
            positions=rrh_positions(spec, region, rng),
            tier="rrh",
            tx_power_w=dbm_to_watts(TIER_POWER_DBM["rrh"]),
        )
    )
    return sets


def topology_csv(point_sets: list[PointSet]) -> str:
    """CSV dump of a generated topology: tier, x, y, power."""
    lines = ["tier,x,y,power_w"]
    for ps in point_sets:
        lines += [
            f"{ps.tier},{float(x)!r},{float(y)!r},{ps.tx_power_w!r}"
            for x, y in np.atleast_2d(ps.positions)
        ]
    return "\n".join(lines) + "\n"
