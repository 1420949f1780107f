"""PRP-slotted Monte Carlo simulation of the access protocol.

Each PRP advances every device through the backoff state machine against the
reception model.  Step order inside a slot, fixed by the ACK deadline of one
PRP: (1) apply the previous PRP's decode outcomes, (2) admit new arrivals,
(3) transmit at counter zero / decrement otherwise, (4) report.

Device state lives in flat arrays (stage, counter, pending bits); per-slot
work is vectorized with short Python loops only over the devices that change
phase that slot.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .chain import StateSpace
from .config import ScenarioConfig, dbm_to_watts
from .deployment import Region, deterministic_gain, rrh_positions
from .reception import PrpSnapshot, decode_fixed, sic_decode
from .traffic import sample_arrivals, sample_selection_mask

_IDLE = -1
_Z95 = 1.959963984540054


@dataclass
class Metrics:
    """Counters of one replication, measured after warm-up."""

    attempts: int = 0
    failures: int = 0
    offered: int = 0
    delivered: int = 0
    dropped: int = 0
    in_flight: int = 0
    prp_success_counts: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    delays: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    occupancy: Optional[np.ndarray] = None
    measured_prps: int = 0


def bler(metrics: Metrics) -> Optional[float]:
    """Failed attempts over attempts; absent (None) when nothing was attempted."""
    if metrics.attempts == 0:
        return None
    return metrics.failures / metrics.attempts


def normalized_throughput(metrics: Metrics, prp) -> float:
    """Mean per-PRP count of devices that got a segment through, per RU."""
    if metrics.measured_prps < 1:
        raise ValueError("need at least one measured PRP")
    return float(metrics.prp_success_counts.mean() / prp.omega)


def drop_rate(metrics: Metrics) -> Optional[float]:
    if metrics.offered == 0:
        return None
    return metrics.dropped / metrics.offered


def mean_delay(metrics: Metrics) -> Optional[float]:
    if len(metrics.delays) == 0:
        return None
    return float(metrics.delays.mean())


def overload_factor(scenario: ScenarioConfig) -> float:
    """Device count over RU count per PRP."""
    return scenario.traffic.m_count / scenario.prp.omega


class Simulation:
    """One replication: deployment draw, device state arrays, slot loop."""

    def __init__(self, scenario: ScenarioConfig, seed, track_occupancy: bool = False):
        self.scenario = scenario
        self.rng = np.random.default_rng(seed)
        self.params = scenario.gonora
        self.prp = scenario.prp
        self.traffic = scenario.traffic
        m = self.traffic.m_count
        self.m = m
        self.alpha = np.asarray(self.traffic.alpha, dtype=float)

        region = Region.from_spec(scenario.deployment)
        self.rrhs = rrh_positions(scenario.deployment, region, self.rng)
        self.positions = region.sample_uniform(m, self.rng)
        self.base_gains = deterministic_gain(self.positions, self.rrhs, scenario.channel)
        self.tx_power_w = np.full(m, dbm_to_watts(scenario.deployment.device_tx_power_dbm))

        self.v = np.full(m, _IDLE, dtype=np.int64)
        self.k = np.zeros(m, dtype=np.int64)
        self.pending = np.zeros(m)
        self.birth = np.full(m, -1, dtype=np.int64)
        self.measured_packet = np.zeros(m, dtype=bool)
        self.queues: list[list[tuple[int, float]]] = [[] for _ in range(m)]

        self.warmup = int(round(scenario.warmup_fraction * scenario.horizon))
        self.total_slots = self.warmup + scenario.horizon
        self.slot = 0
        self.metrics = Metrics(
            prp_success_counts=np.zeros(scenario.horizon, dtype=np.int64)
        )
        self._delays: list[int] = []
        self._prev: Optional[tuple[np.ndarray, np.ndarray, np.ndarray]] = None

        self.space = StateSpace(self.params) if track_occupancy else None
        if self.space is not None:
            self.metrics.occupancy = np.zeros(self.space.size, dtype=np.int64)
            self._offsets = np.array(self.space._offsets, dtype=np.int64)

        if self.traffic.saturated:
            self._start_packets(np.arange(m), birth_slot=0)
            self._events = (np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0))
        else:
            events = sample_arrivals(self.traffic, self.total_slots, self.prp, self.rng)
            self._events = (
                np.array([e.slot for e in events], dtype=np.int64),
                np.array([e.device for e in events], dtype=np.int64),
                np.array([e.bits for e in events], dtype=float),
            )
        self._event_ptr = 0

    # -- state helpers -------------------------------------------------

    def _enter_stage(self, idx: np.ndarray, stage: int) -> None:
        """Stage entry with a fresh uniform counter in {0,…,W_stage−1}."""
        if len(idx) == 0:
            return
        self.v[idx] = stage
        self.k[idx] = self.rng.integers(0, self.params.window(stage), size=len(idx))

    def _start_packets(self, idx: np.ndarray, birth_slot: int) -> None:
        """Fresh saturated packets for idx, entering stage 0 now."""
        if len(idx) == 0:
            return
        self.pending[idx] = self.alpha[idx]
        self.birth[idx] = birth_slot
        measured = self.warmup <= birth_slot < self.total_slots
        self.measured_packet[idx] = measured
        if measured:
            self.metrics.offered += len(idx)
        self._enter_stage(idx, 0)

    def _finish_packet(self, i: int, ack_slot: int, delivered: bool) -> bool:
        """Close out device i's packet; returns True if it needs a restart."""
        if self.measured_packet[i]:
            if delivered:
                self.metrics.delivered += 1
                self._delays.append(ack_slot - int(self.birth[i]))
            else:
                self.metrics.dropped += 1
        self.pending[i] = 0.0
        self.birth[i] = -1
        self.measured_packet[i] = False
        self.v[i] = _IDLE
        if self.traffic.saturated:
            return True
        if self.queues[i]:
            slot, bits = self.queues[i].pop(0)
            self.pending[i] = bits
            self.birth[i] = slot
            self.measured_packet[i] = slot >= self.warmup
            return True
        return False

    # -- slot phases ---------------------------------------------------

    def _apply_acks(self, allow_restart: bool = True) -> None:
        if self._prev is None:
            return
        tx, decoded, segments = self._prev
        self._prev = None
        t = self.slot
        restart: list[int] = []

        ok = tx[decoded]
        if len(ok):
            self.pending[ok] -= segments[decoded]
            done_mask = self.pending[ok] <= 1e-9
            for i in ok[done_mask]:
                if self._finish_packet(int(i), t, delivered=True) and allow_restart:
                    restart.append(int(i))
            more = ok[~done_mask]
            if allow_restart:
                self._enter_stage(more, 0)
            else:
                self.v[more] = _IDLE

        failed = tx[~decoded]
        if len(failed):
            drop_mask = self.v[failed] >= self.params.v_max
            for i in failed[drop_mask]:
                if self._finish_packet(int(i), t, delivered=False) and allow_restart:
                    restart.append(int(i))
            advancing = failed[~drop_mask]
            stages_now = self.v[advancing].copy()
            for stage in np.unique(stages_now):
                self._enter_stage(advancing[stages_now == stage], int(stage) + 1)

        if restart:
            idx = np.array(sorted(restart), dtype=np.int64)
            if self.traffic.saturated:
                self._start_packets(idx, birth_slot=t)
            else:
                self._enter_stage(idx, 0)

    def _admit_arrivals(self) -> None:
        slots, devs, bits = self._events
        ptr = self._event_ptr
        fresh: list[int] = []
        while ptr < len(slots) and slots[ptr] == self.slot:
            i = int(devs[ptr])
            if self.slot >= self.warmup:
                self.metrics.offered += 1
            if self.v[i] == _IDLE and self.pending[i] == 0.0:
                self.pending[i] = bits[ptr]
                self.birth[i] = self.slot
                self.measured_packet[i] = self.slot >= self.warmup
                fresh.append(i)
            else:
                self.queues[i].append((self.slot, float(bits[ptr])))
            ptr += 1
        self._event_ptr = ptr
        if fresh:
            self._enter_stage(np.array(fresh, dtype=np.int64), 0)

    def _record_occupancy(self) -> None:
        if self.space is None or self.slot < self.warmup:
            return
        busy = self.v >= 0
        idx = np.zeros(self.m, dtype=np.int64)
        idx[busy] = self._offsets[self.v[busy]] + self.k[busy]
        np.add.at(self.metrics.occupancy, idx, 1)

    def _transmit(self) -> None:
        busy = self.v >= 0
        tx_mask = busy & (self.k == 0)
        self.k[busy & ~tx_mask] -= 1
        tx = np.flatnonzero(tx_mask)
        measured = self.slot >= self.warmup
        if len(tx) == 0:
            if measured:
                self.metrics.measured_prps += 1
            return

        sel = sample_selection_mask(self.params.p, self.prp.omega, len(tx), self.rng)
        segments = np.minimum(self.pending[tx], sel.sum(axis=1) * self.prp.ru_payload_bits)

        if self.scenario.reception.model == "fixed":
            decoded = decode_fixed(self.v[tx], self.scenario.reception, self.rng)
        else:
            gains = self.base_gains[tx]
            if self.scenario.channel.fading == "rayleigh":
                gains = gains * self.rng.exponential(1.0, size=gains.shape)
            snapshot = PrpSnapshot(
                device_ids=tx,
                selection=sel,
                gains=gains,
                tx_power_w=self.tx_power_w[tx],
                omega=self.prp.omega,
                noise_w=self.scenario.channel.noise_w,
                segment_bits=segments,
            )
            decoded = sic_decode(snapshot, self.scenario.reception).decoded

        if measured:
            self.metrics.attempts += len(tx)
            self.metrics.failures += len(tx) - int(decoded.sum())
            self.metrics.prp_success_counts[self.slot - self.warmup] = int(decoded.sum())
            self.metrics.measured_prps += 1
        self._prev = (tx, decoded, segments)

    def step_prp(self) -> None:
        """Advance one PRP through the four slot phases."""
        self._apply_acks()
        self._admit_arrivals()
        self._record_occupancy()
        self._transmit()
        self.slot += 1

    def run(self) -> Metrics:
        for _ in range(self.total_slots):
            self.step_prp()
        self._apply_acks(allow_restart=False)
        in_flight = int(np.count_nonzero(self.measured_packet))
        for q in self.queues:
            in_flight += sum(1 for slot, _ in q if slot >= self.warmup)
        self.metrics.in_flight = in_flight
        self.metrics.delays = np.array(self._delays, dtype=np.int64)
        return self.metrics


def run(scenario: ScenarioConfig, seed, track_occupancy: bool = False) -> Metrics:
    """One deterministic replication: identical (scenario, seed) → identical Metrics."""
    return Simulation(scenario, seed, track_occupancy=track_occupancy).run()


@dataclass(frozen=True)
class AggregateMetrics:
    """Replication-averaged metrics with normal-approximation 95% CIs."""

    replications: int
    seeds: tuple[int, ...]
    attempts: float
    bler: float
    bler_ci95: float
    norm_throughput: float
    thr_ci95: float
    drop_rate: float
    mean_delay_prps: float
    per_replication: tuple[Metrics, ...]


def _mean_ci(values: list[float]) -> tuple[float, float]:
    vals = np.array([v for v in values if not math.isnan(v)])
    if len(vals) == 0:
        return float("nan"), 0.0
    if len(vals) == 1:
        return float(vals[0]), 0.0
    return float(vals.mean()), float(_Z95 * vals.std(ddof=1) / math.sqrt(len(vals)))


def replication_seeds(master_seed: int, count: int) -> tuple[int, ...]:
    """Deterministic per-replication integer seeds derived from the master seed."""
    state = np.random.SeedSequence(master_seed).generate_state(count, dtype=np.uint64)
    return tuple(int(s) for s in state)


def _run_for_seed(args) -> Metrics:
    scenario, seed = args
    return run(scenario, seed)


def run_replications(
    scenario: ScenarioConfig,
    replications: int,
    master_seed: int,
    workers: int = 1,
) -> AggregateMetrics:
    """Independent replications with seeds spawned from master_seed.

    Aggregation is a fold in replication-index order, so the result does not
    depend on whether (or in what order) replications executed in parallel.
    """
    if replications < 1:
        raise ValueError("replications must be ≥ 1")
    seeds = replication_seeds(master_seed, replications)
    jobs = [(scenario, s) for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_for_seed, jobs))
    else:
        results = [_run_for_seed(j) for j in jobs]

    def scalar(m: Metrics, fn) -> float:
        val = fn(m)
        return float("nan") if val is None else float(val)

    blers = [scalar(m, bler) for m in results]
    thrs = [normalized_throughput(m, scenario.prp) for m in results]
    drops = [scalar(m, drop_rate) for m in results]
    delays = [scalar(m, mean_delay) for m in results]
    attempts = [float(m.attempts) for m in results]

    bler_m, bler_ci = _mean_ci(blers)
    thr_m, thr_ci = _mean_ci(thrs)
    drop_m, _ = _mean_ci(drops)
    delay_m, _ = _mean_ci(delays)
    att_m, _ = _mean_ci(attempts)
    return AggregateMetrics(
        replications=replications,
        seeds=seeds,
        attempts=att_m,
        bler=bler_m,
        bler_ci95=bler_ci,
        norm_throughput=thr_m,
        thr_ci95=thr_ci,
        drop_rate=drop_m,
        mean_delay_prps=delay_m,
        per_replication=tuple(results),
    )


CSV_COLUMNS = (
    "scenario_id,overload_factor,rrh_count,p,attempts,bler,bler_ci95,"
    "norm_throughput,thr_ci95,drop_rate,mean_delay_prps,seed"
)


def aggregate_csv_row(
    scenario_id: str, scenario: ScenarioConfig, agg: AggregateMetrics, master_seed: int
) -> str:
    """One aggregate CSV row in the fixed column order."""
    fields = [
        scenario_id,
        repr(overload_factor(scenario)),
        str(scenario.deployment.rrh_count),
        repr(scenario.gonora.p),
        repr(agg.attempts),
        repr(agg.bler),
        repr(agg.bler_ci95),
        repr(agg.norm_throughput),
        repr(agg.thr_ci95),
        repr(agg.drop_rate),
        repr(agg.mean_delay_prps),
        str(master_seed),
    ]
    return ",".join(fields)


def metrics_csv(
    scenario_id: str, scenario: ScenarioConfig, agg: AggregateMetrics, master_seed: int
) -> str:
    """Full dump: one row per replication plus the aggregate row."""
    lines = [CSV_COLUMNS]
    for i, m in enumerate(agg.per_replication):
        b = bler(m)
        d = drop_rate(m)
        delay = mean_delay(m)
        fields = [
            f"{scenario_id}/rep{i}",
            repr(overload_factor(scenario)),
            str(scenario.deployment.rrh_count),
            repr(scenario.gonora.p),
            repr(float(m.attempts)),
            repr(float("nan") if b is None else b),
            repr(0.0),
            repr(normalized_throughput(m, scenario.prp)),
            repr(0.0),
            repr(float("nan") if d is None else d),
            repr(float("nan") if delay is None else delay),
            str(agg.seeds[i]),
        ]
        lines.append(",".join(fields))
    lines.append(aggregate_csv_row(scenario_id, scenario, agg, master_seed))
    return "\n".join(lines) + "\n"
