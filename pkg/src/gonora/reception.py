"""Per-PRP reception at the RRH pool.

Transmissions arrive as a snapshot: who transmitted, on which RUs, with what
per-RRH channel gains.  Decoding accumulates mutual information across a
device's selected RUs with maximal-ratio combining over RRHs, inside a
successive-interference-cancellation loop.  A threshold mode and an injected
fixed-outcome mode exist for sensitivity checks and analytical couplings.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .chain import StageOutcomes
from .config import ReceptionSpec, ScenarioConfig, dbm_to_watts
from .deployment import Region, deterministic_gain, rrh_positions
from .traffic import sample_selection_mask

_MI_SLACK = 1e-12


@dataclass(frozen=True)
class PrpSnapshot:
    """Everything the receiver sees in one PRP.

    selection is a boolean (n, omega) occupancy mask; gains holds per-link
    power gains (n, n_rrh) including any fading for this PRP; segment_bits is
    the information each device needs decoded this PRP.
    """

    device_ids: np.ndarray
    selection: np.ndarray
    gains: np.ndarray
    tx_power_w: np.ndarray
    omega: int
    noise_w: float
    segment_bits: np.ndarray

    def __post_init__(self):
        n = len(self.device_ids)
        if self.selection.shape != (n, self.omega):
            raise ValueError("selection mask shape must be (n_devices, omega)")
        if self.gains.shape[0] != n:
            raise ValueError("gains must have one row per device")

    @property
    def n_devices(self) -> int:
        return len(self.device_ids)

    @property
    def n_rrh(self) -> int:
        return self.gains.shape[1]

    @property
    def received_power(self) -> np.ndarray:
        return self.gains * self.tx_power_w[:, None]

    @classmethod
    def empty(cls, omega: int, n_rrh: int, noise_w: float) -> "PrpSnapshot":
        return cls(
            device_ids=np.empty(0, dtype=np.int64),
            selection=np.empty((0, omega), dtype=bool),
            gains=np.empty((0, n_rrh)),
            tx_power_w=np.empty(0),
            omega=omega,
            noise_w=noise_w,
            segment_bits=np.empty(0),
        )


@dataclass(frozen=True)
class DecodeOutcome:
    """Result of one reception pass: who got through, and how."""

    decoded: np.ndarray
    mutual_information: np.ndarray
    rounds: int

    def decoded_ids(self, snapshot: PrpSnapshot) -> np.ndarray:
        return snapshot.device_ids[self.decoded]


def per_ru_sinr(
    snapshot: PrpSnapshot, ru: int, rrh: int, cancelled: Sequence[int] = ()
) -> dict[int, float]:
    """SINR of every uncancelled device occupying one RU at one RRH.

    Reference implementation: own power over co-RU interference plus noise.
    The SIC loop vectorizes the same arithmetic.
    """
    rp = snapshot.received_power[:, rrh]
    cancelled_set = set(int(c) for c in cancelled)
    live = np.array(
        [
            snapshot.selection[i, ru] and int(snapshot.device_ids[i]) not in cancelled_set
            for i in range(snapshot.n_devices)
        ],
        dtype=bool,
    )
    total = float(rp[live].sum())
    out = {}
    for i in np.flatnonzero(live):
        own = float(rp[i])
        out[int(snapshot.device_ids[i])] = own / (total - own + snapshot.noise_w)
    return out


def combine_rrh(sinrs: Sequence[float]) -> float:
    """Maximal-ratio combining abstraction: post-detection SINR addition."""
    vals = np.asarray(sinrs, dtype=float)
    if vals.size < 1:
        raise ValueError("need at least one RRH value")
    return float(vals.sum())


def _mrc_sinr(
    rp: np.ndarray, sel: np.ndarray, active: np.ndarray, noise_w: float
) -> np.ndarray:
    """Combined (n, omega) SINR under the current cancellation state.

    rp is received power (n, n_rrh); only active rows contribute interference.
    Entries outside a device's selection are meaningless and must be masked
    by the caller.
    """
    n, n_rrh = rp.shape
    mrc = np.zeros((n, sel.shape[1]))
    sel_f = sel.astype(float)
    active_f = (sel & active[:, None]).astype(float)
    for r in range(n_rrh):
        total = active_f.T @ rp[:, r]
        own = rp[:, r : r + 1] * sel_f
        interference = total[None, :] - own * active[:, None]
        mrc += own / (interference + noise_w)
    return mrc


def sic_decode(snapshot: PrpSnapshot, spec: ReceptionSpec) -> DecodeOutcome:
    """Iterative decode: accumulate information, cancel, repeat.

    A device decodes when the sum over its selected RUs of
    log2(1 + combined SINR) reaches its segment bits (mi model), or when any
    selected RU clears the SINR threshold (threshold model).  Decoded devices
    are cancelled perfectly before the next round.  Deterministic.
    """
    if spec.model == "fixed":
        raise ValueError("fixed outcomes bypass reception; use decode_fixed")
    n = snapshot.n_devices
    decoded = np.zeros(n, dtype=bool)
    mi = np.zeros(n)
    if n == 0:
        return DecodeOutcome(decoded=decoded, mutual_information=mi, rounds=0)
    rp = snapshot.received_power
    sel = snapshot.selection
    threshold_lin = 10.0 ** (spec.threshold_db / 10.0)
    rounds = 0
    for _ in range(spec.sic_rounds):
        active = ~decoded
        mrc = _mrc_sinr(rp, sel, active, snapshot.noise_w)
        info = (np.log2(1.0 + mrc) * sel).sum(axis=1)
        mi[active] = info[active]
        if spec.model == "threshold":
            cleared = ((mrc >= threshold_lin) & sel).any(axis=1)
        else:
            cleared = info + _MI_SLACK >= snapshot.segment_bits
        newly = active & cleared
        if not newly.any():
            break
        decoded |= newly
        rounds += 1
        if decoded.all():
            break
    return DecodeOutcome(decoded=decoded, mutual_information=mi, rounds=rounds)


def decode_fixed(
    stages: np.ndarray, spec: ReceptionSpec, rng: np.random.Generator
) -> np.ndarray:
    """Injected synthetic outcomes: success w.p. 1 - fixed_p_e[stage]."""
    if spec.fixed_p_e is None:
        raise ValueError("reception.fixed_p_e is required for the fixed model")
    p_e = np.asarray(spec.fixed_p_e)
    stages = np.asarray(stages, dtype=np.int64)
    return rng.random(len(stages)) >= p_e[stages]


@dataclass(frozen=True)
class OutcomeEstimate:
    """Monte Carlo stage-outcome estimate with its sampling error."""

    outcomes: StageOutcomes
    std_error: float
    trials: int


def outcome_abstraction(
    attempt_prob: float,
    scenario: ScenarioConfig,
    samples: Optional[int] = None,
    seed_salt: int = 0x5EED,
) -> OutcomeEstimate:
    """Estimate per-stage success probability at a given population attempt rate.

    Synthetic PRPs are drawn with Binomial(M, attempt_prob) transmitters on
    fresh uniform positions, pushed through sic_decode, and the transmitter
    success frequency is returned as a stage-independent StageOutcomes.  The
    random draws are frozen (seeded from master_seed), so the map
    attempt_prob -> outcomes is deterministic and fixed-point iteration on it
    settles exactly.

    Zero contention convention: with no transmitters at all, p_s = 1.
    """
    if not 0.0 <= attempt_prob <= 1.0:
        raise ValueError("attempt_prob must lie in [0, 1]")
    n_samples = scenario.analysis.mc_samples if samples is None else samples
    if n_samples <= 0:
        raise ValueError("sample budget must be positive")
    rng = np.random.default_rng([seed_salt, scenario.master_seed])
    region = Region.from_spec(scenario.deployment)
    rrhs = rrh_positions(scenario.deployment, region, rng)
    m = scenario.traffic.m_count
    alpha = np.asarray(scenario.traffic.alpha)
    p = scenario.gonora.p
    prp = scenario.prp
    channel = scenario.channel
    tx_power = dbm_to_watts(scenario.deployment.device_tx_power_dbm)
    successes = 0
    trials = 0
    for _ in range(n_samples):
        mask = rng.random(m) < attempt_prob
        k = int(mask.sum())
        if k == 0:
            continue
        positions = region.sample_uniform(k, rng)
        gains = deterministic_gain(positions, rrhs, channel)
        if channel.fading == "rayleigh":
            gains = gains * rng.exponential(1.0, size=gains.shape)
        sel = sample_selection_mask(p, prp.omega, k, rng)
        seg = np.minimum(alpha[mask], sel.sum(axis=1) * prp.ru_payload_bits)
        snapshot = PrpSnapshot(
            device_ids=np.arange(k, dtype=np.int64),
            selection=sel,
            gains=gains,
            tx_power_w=np.full(k, tx_power),
            omega=prp.omega,
            noise_w=channel.noise_w,
            segment_bits=seg,
        )
        outcome = sic_decode(snapshot, scenario.reception)
        successes += int(outcome.decoded.sum())
        trials += k
    if trials == 0:
        return OutcomeEstimate(
            outcomes=StageOutcomes.constant(1.0, scenario.gonora.v_max),
            std_error=0.0,
            trials=0,
        )
    p_hat = successes / trials
    se = float(np.sqrt(max(p_hat * (1.0 - p_hat), 0.0) / trials))
    return OutcomeEstimate(
        outcomes=StageOutcomes.constant(p_hat, scenario.gonora.v_max),
        std_error=se,
        trials=trials,
    )


def fixed_point_coupling(scenario: ScenarioConfig) -> Callable[[float], StageOutcomes]:
    """Adapter feeding outcome_abstraction into the chain's fixed-point solver."""

    def coupling(attempt_prob: float) -> StageOutcomes:
        return outcome_abstraction(attempt_prob, scenario).outcomes

    return coupling
