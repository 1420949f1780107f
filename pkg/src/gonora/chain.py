"""Analytical model of the grant-free backoff protocol as a Markov chain.

One transition = one PRP.  A device is idle, counting down a backoff
counter at repetition stage v, or transmitting (counter zero).  On failure
it advances one stage with a doubled window; after failing at the last
stage it gives up and returns to idle regardless of outcome.  A device
whose packet resolves (delivered or dropped) re-enters stage 0 in the same
transition with the per-slot arrival probability q, which is what makes the
saturated chain (q = 1) never dwell in idle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .config import Backoff, GonoraParams, Idle, ProtocolState, Transmit

# dense transition matrices get allocated as S×S float64
_MAX_STATES = 20_000


class NumericalError(RuntimeError):
    """A numerical routine failed to converge; carries the last iterate."""

    def __init__(self, message: str, last=None):
        super().__init__(message)
        self.last = last


def arrival_probability(lam: float, tau: float) -> float:
    """Per-PRP probability that an idle device sees at least one new packet."""
    return 1.0 - math.exp(-lam * tau)


@dataclass(frozen=True)
class StageOutcomes:
    """Per-stage success probabilities of a transmission attempt."""

    p_s: tuple[float, ...]

    @classmethod
    def constant(cls, p_s: float, v_max: int) -> "StageOutcomes":
        return cls((float(p_s),) * (v_max + 1))

    @classmethod
    def from_errors(cls, p_e) -> "StageOutcomes":
        return cls(tuple(1.0 - float(x) for x in p_e))

    @property
    def p_e(self) -> tuple[float, ...]:
        return tuple(1.0 - s for s in self.p_s)

    @property
    def stages(self) -> int:
        return len(self.p_s)

    def check(self) -> None:
        if any(not 0.0 <= s <= 1.0 for s in self.p_s):
            raise ValueError("stage success probabilities must lie in [0,1]")


class StateSpace:
    """Enumeration of the chain states: idle, then stage blocks in counter order.

    Index 0 is idle; stage v occupies a contiguous block of W_v = 2^v·w0
    indices whose first entry (counter 0) is the transmit state.
    """

    def __init__(self, params: GonoraParams):
        self.params = params
        self.windows = params.windows
        self._offsets = [1]
        for w in self.windows[:-1]:
            self._offsets.append(self._offsets[-1] + w)
        self.size = 1 + sum(self.windows)

    def index(self, state: ProtocolState) -> int:
        if isinstance(state, Idle):
            return 0
        if isinstance(state, Transmit):
            return self._offsets[state.v]
        return self._offsets[state.v] + state.k

    def state(self, idx: int) -> ProtocolState:
        if idx == 0:
            return Idle()
        for v, (off, w) in enumerate(zip(self._offsets, self.windows)):
            if off <= idx < off + w:
                k = idx - off
                return Transmit(v) if k == 0 else Backoff(v, k)
        raise IndexError(idx)

    def label(self, idx: int) -> str:
        st = self.state(idx)
        if isinstance(st, Idle):
            return "idle"
        if isinstance(st, Transmit):
            return f"tx({st.v})"
        return f"bo({st.v},{st.k})"

    def transmit_indices(self) -> np.ndarray:
        return np.array(self._offsets, dtype=np.intp)

    def stage_indices(self, v: int) -> np.ndarray:
        off = self._offsets[v]
        return np.arange(off, off + self.windows[v], dtype=np.intp)


@dataclass(frozen=True)
class TransitionMatrix:
    """Dense row-stochastic one-step matrix over the enumerated state space."""

    space: StateSpace
    probs: np.ndarray
    q: float


@dataclass(frozen=True)
class StateDistribution:
    """Probability vector over the chain's state space."""

    space: StateSpace
    pi: np.ndarray


def build_chain(
    params: GonoraParams, outcomes: StageOutcomes, q: float
) -> TransitionMatrix:
    """Assemble the one-step transition matrix for arrival probability q.

    Encodes: idle self-loop with weight 1−q and uniform entry into the
    stage-0 window with weight q; deterministic countdown within a stage; a
    failed attempt at stage v < V enters stage v+1 uniformly over its
    doubled window; a resolved attempt (success, or any outcome at stage V)
    starts over at stage 0 with probability q and idles otherwise.
    """
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"arrival probability q must lie in [0,1], got {q}")
    outcomes.check()
    if outcomes.stages != params.v_max + 1:
        raise ValueError(
            f"need one stage outcome per repetition stage "
            f"({params.v_max + 1}), got {outcomes.stages}"
        )
    space = StateSpace(params)
    if space.size > _MAX_STATES:
        raise ValueError(
            f"state space of {space.size} states exceeds the dense-matrix cap "
            f"({_MAX_STATES}); reduce w0 or v_max"
        )
    P = np.zeros((space.size, space.size))
    w0 = params.w0
    stage0 = space.stage_indices(0)

    P[0, 0] = 1.0 - q
    P[0, stage0] += q / w0

    for v in range(params.v_max + 1):
        idxs = space.stage_indices(v)
        for k in range(1, params.window(v)):
            P[idxs[k], idxs[k - 1]] = 1.0
        tx = idxs[0]
        resolve = outcomes.p_s[v] if v < params.v_max else 1.0
        P[tx, 0] += resolve * (1.0 - q)
        P[tx, stage0] += resolve * q / w0
        if v < params.v_max:
            nxt = space.stage_indices(v + 1)
            P[tx, nxt] += (1.0 - outcomes.p_s[v]) / params.window(v + 1)

    return TransitionMatrix(space=space, probs=P, q=q)


def stationary_distribution(
    tm: TransitionMatrix, residual_tol: float = 1e-12, max_refine: int = 10_000
) -> StateDistribution:
    """Solve πP = π, ‖π‖₁ = 1 with stationarity residual ≤ residual_tol.

    Uses a dense linear solve of the stationarity system (one equation
    replaced by the normalization constraint), then verifies the residual
    and falls back to iterative refinement if needed.  Raises
    NumericalError if the residual target cannot be met.
    """
    P = tm.probs
    n = P.shape[0]
    A = P.T - np.eye(n)
    A[-1, :] = 1.0
    b = np.zeros(n)
    b[-1] = 1.0
    try:
        pi = np.linalg.solve(A, b)
    except np.linalg.LinAlgError:
        pi = np.full(n, 1.0 / n)
    pi = np.clip(pi, 0.0, None)
    total = pi.sum()
    if total > 0:
        pi = pi / total
    residual = np.max(np.abs(pi @ P - pi))
    refinements = 0
    while residual > residual_tol and refinements < max_refine:
        pi = pi @ P
        pi = pi / pi.sum()
        residual = np.max(np.abs(pi @ P - pi))
        refinements += 1
    if residual > residual_tol:
        raise NumericalError(
            f"stationary solve stalled at residual {residual:.3e} "
            f"(target {residual_tol:.1e})",
            last=StateDistribution(tm.space, pi),
        )
    return StateDistribution(space=tm.space, pi=pi)


def attempt_probability(dist: StateDistribution) -> float:
    """Probability a device transmits in a randomly chosen PRP: mass on counter-zero states."""
    return float(dist.pi[dist.space.transmit_indices()].sum())


def drop_probability(outcomes: StageOutcomes) -> float:
    """Probability a packet fails every one of its V+1 attempts."""
    out = 1.0
    for s in outcomes.p_s:
        out *= 1.0 - s
    return out


def expected_attempts(outcomes: StageOutcomes) -> float:
    """Mean transmission attempts per packet, drops included."""
    total = 1.0
    prefix = 1.0
    for s in outcomes.p_s[:-1]:
        prefix *= 1.0 - s
        total += prefix
    return total


OutcomeModel = Callable[[float], StageOutcomes]


def fixed_point_solve(
    params: GonoraParams,
    q: float,
    coupling: OutcomeModel,
    damping: float = 0.5,
    tolerance: float = 1e-9,
    max_iterations: int = 10_000,
) -> tuple[StateDistribution, StageOutcomes]:
    """Couple the chain to an outcome model and iterate to a fixed point.

    The coupling maps the population attempt probability to per-stage
    outcomes; the chain's stationary distribution in turn fixes the attempt
    probability.  Damped iteration on the outcome vector; the coupling
    should be a deterministic function of its argument or the stopping rule
    is meaningless.
    """
    outcomes = coupling(0.0)
    pi = None
    for _ in range(max_iterations):
        pi = stationary_distribution(build_chain(params, outcomes, q))
        target = coupling(attempt_probability(pi))
        blended = tuple(
            damping * old + (1.0 - damping) * new
            for old, new in zip(outcomes.p_s, target.p_s)
        )
        delta = max(abs(b - o) for b, o in zip(blended, outcomes.p_s))
        outcomes = StageOutcomes(blended)
        if delta <= tolerance:
            final = coupling(attempt_probability(pi))
            pi = stationary_distribution(build_chain(params, final, q))
            return pi, final
    raise NumericalError(
        f"fixed point did not converge within {max_iterations} iterations",
        last=(pi, outcomes),
    )


def format_transitions(tm: TransitionMatrix) -> str:
    """Debug dump: one 'source successor probability' triple per line."""
    space = tm.space
    lines = []
    for i in range(space.size):
        row = tm.probs[i]
        for j in np.nonzero(row)[0]:
            lines.append(f"{space.label(i)} {space.label(int(j))} {float(row[j])!r}")
    return "\n".join(lines) + "\n"
