"""Packet arrivals, RU selection sampling, and the offered-load formula."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import PrpConfig, TrafficProfile


@dataclass(frozen=True)
class ArrivalEvent:
    device: int
    slot: int
    bits: float


@dataclass(frozen=True)
class RuSelection:
    """RU indices a device occupies in one PRP, at repetition stage v."""

    rus: tuple[int, ...]
    v: int

    def __len__(self) -> int:
        return len(self.rus)


def selection_probability(prp: PrpConfig, traffic: TrafficProfile) -> float:
    """RU selection probability balancing PRP capacity against offered load.

    p = β·γ / Σ_m α_m·λ_m·τ, clamped to [0,1].  The denominator is the
    average aggregate traffic load during one PRP; capacity outstripping
    load pushes the raw value above 1, where it is clamped.
    """
    load = sum(a * l for a, l in zip(traffic.alpha, traffic.lam)) * prp.tau
    if load <= 0.0:
        raise ValueError("no offered traffic: Σ alpha·lambda·tau must be > 0")
    return min(1.0, prp.beta * prp.gamma / load)


def sample_arrivals(
    traffic: TrafficProfile,
    horizon: int,
    prp: PrpConfig,
    rng: np.random.Generator,
) -> list[ArrivalEvent]:
    """Draw every packet arrival over `horizon` PRPs, sorted by slot.

    Per device the arrival count is Poisson(λ_m·τ·horizon) with slots
    uniform over the horizon (the conditional law of a Poisson process).
    Packet sizes are the per-device mean, or geometric around it when the
    profile says so.
    """
    if horizon < 1:
        raise ValueError("horizon must be ≥ 1")
    events: list[ArrivalEvent] = []
    for dev, (alpha, lam) in enumerate(zip(traffic.alpha, traffic.lam)):
        count = int(rng.poisson(lam * prp.tau * horizon))
        if count == 0:
            continue
        slots = rng.integers(0, horizon, size=count)
        if traffic.size_model == "geometric":
            sizes = rng.geometric(min(1.0, 1.0 / alpha), size=count).astype(float)
        else:
            sizes = np.full(count, float(alpha))
        events.extend(
            ArrivalEvent(dev, int(s), float(b)) for s, b in zip(slots, sizes)
        )
    events.sort(key=lambda e: (e.slot, e.device))
    return events


def sample_selection_mask(
    p: float, omega: int, count: int, rng: np.random.Generator
) -> np.ndarray:
    """Boolean (count, omega) mask: each RU picked independently w.p. p.

    A device whose counter reached zero must transmit, so an all-empty draw
    is replaced by one uniformly chosen RU.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"selection probability must lie in [0,1], got {p}")
    mask = rng.random((count, omega)) < p
    empty = ~mask.any(axis=1)
    if empty.any():
        fallback = rng.integers(0, omega, size=int(empty.sum()))
        mask[np.nonzero(empty)[0], fallback] = True
    return mask


def sample_ru_selection(
    p: float, prp: PrpConfig, v: int, rng: np.random.Generator
) -> RuSelection:
    """Draw one Bernoulli RU subset (mean cardinality p·ω, never empty)."""
    mask = sample_selection_mask(p, prp.omega, 1, rng)[0]
    return RuSelection(rus=tuple(int(i) for i in np.nonzero(mask)[0]), v=v)


def segment_packet(packet_bits: float, selection: RuSelection, prp: PrpConfig) -> float:
    """Bits of the packet carried by this attempt: capped by the selection's payload."""
    if len(selection) == 0:
        raise ValueError("selection must be non-empty")
    return min(float(packet_bits), len(selection) * prp.ru_payload_bits)


def arrivals_csv(events: list[ArrivalEvent]) -> str:
    """CSV dump of an arrival trace: slot, device, bits."""
    lines = ["slot,device,bits"]
    lines += [f"{e.slot},{e.device},{e.bits!r}" for e in events]
    return "\n".join(lines) + "\n"
