"""Domain types and configuration schema shared by every other module.

A scenario is described by a flat TOML file whose dotted keys mirror the
dataclass fields below one-to-one (``prp.omega``, ``gonora.w0``,
``traffic.lambda``, ``channel.path_loss_exponent``, ...).  All values are
plain SI units: seconds, meters, watts (powers given in dBm in the file),
bits.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Union

if sys.version_info >= (3, 11):
    import tomllib as _toml
else:
    import tomli as _toml


class ConfigError(ValueError):
    """Invalid configuration. Carries every violated invariant, not just the first."""

    def __init__(self, violations: Sequence[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def watts_to_dbm(watts: float) -> float:
    return 10.0 * math.log10(watts) + 30.0


# ---------------------------------------------------------------------------
# Protocol state of a single device (the states of the backoff chain)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Idle:
    """No packet pending."""


@dataclass(frozen=True)
class Backoff:
    """Counting down at repetition stage v; transmits when the counter hits 0."""

    v: int
    k: int


@dataclass(frozen=True)
class Transmit:
    """Counter reached zero at stage v: transmitting in the current PRP."""

    v: int


ProtocolState = Union[Idle, Backoff, Transmit]


# ---------------------------------------------------------------------------
# Configuration dataclasses
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PrpConfig:
    """The physical resource pool: a slot of duration tau holding omega RUs."""

    omega: int = 64
    tau: float = 1e-3
    beta: float = 256.0
    gamma: float = 1.0
    ru_payload_bits: float = 4.0

    def violations(self, prefix: str = "prp") -> list[str]:
        out = []
        if not isinstance(self.omega, int) or self.omega < 1:
            out.append(f"{prefix}.omega: omega must be ≥ 1")
        if not self.tau > 0:
            out.append(f"{prefix}.tau: tau must be > 0")
        if not self.beta > 0:
            out.append(f"{prefix}.beta: beta must be > 0")
        if not self.gamma >= 1:
            out.append(f"{prefix}.gamma: gamma must be ≥ 1")
        if not self.ru_payload_bits > 0:
            out.append(f"{prefix}.ru_payload_bits: ru_payload_bits must be > 0")
        if (
            self.omega >= 1
            and self.ru_payload_bits > 0
            and not math.isclose(self.beta, self.omega * self.ru_payload_bits, rel_tol=1e-9)
        ):
            out.append(
                f"{prefix}.beta: beta must equal omega × ru_payload_bits "
                f"({self.omega * self.ru_payload_bits:g}, got {self.beta:g})"
            )
        return out


@dataclass(frozen=True)
class GonoraParams:
    """Protocol constants: initial window, repetition cap, RU selection probability.

    Contention windows double per stage: W_v = 2^v · w0.  When ``p_auto`` is
    set, ``p`` was derived from the offered-load formula at config load and is
    re-derived whenever a sweep changes the device count.
    """

    w0: int = 4
    v_max: int = 3
    p: float = 1.0
    p_auto: bool = False

    def window(self, v: int) -> int:
        return (2**v) * self.w0

    @property
    def windows(self) -> tuple[int, ...]:
        return tuple(self.window(v) for v in range(self.v_max + 1))

    def violations(self, prefix: str = "gonora") -> list[str]:
        out = []
        if not isinstance(self.w0, int) or self.w0 < 1:
            out.append(f"{prefix}.w0: w0 must be ≥ 1")
        if not isinstance(self.v_max, int) or self.v_max < 0:
            out.append(f"{prefix}.v_max: v_max must be ≥ 0")
        if not 0.0 <= self.p <= 1.0:
            out.append(f"{prefix}.p: p must lie in [0,1]")
        return out


@dataclass(frozen=True)
class TrafficProfile:
    """Per-device packet traffic: mean size alpha_m (bits), Poisson rate lambda_m (1/s).

    ``saturated`` replaces the arrival process with an always-backlogged
    queue; ``size_model`` picks deterministic or geometric packet sizes
    around the per-device mean.
    """

    alpha: tuple[float, ...] = (32.0,)
    lam: tuple[float, ...] = (50.0,)
    size_model: str = "fixed"
    saturated: bool = False

    @classmethod
    def homogeneous(
        cls,
        alpha: float,
        lam: float,
        m_count: int,
        size_model: str = "fixed",
        saturated: bool = False,
    ) -> "TrafficProfile":
        return cls((alpha,) * m_count, (lam,) * m_count, size_model, saturated)

    @property
    def m_count(self) -> int:
        return len(self.alpha)

    def is_homogeneous(self) -> bool:
        return len(set(self.alpha)) == 1 and len(set(self.lam)) == 1

    def violations(self, prefix: str = "traffic") -> list[str]:
        out = []
        if self.m_count < 1:
            out.append(f"{prefix}.m_count: m_count must be ≥ 1")
        if len(self.alpha) != len(self.lam):
            out.append(f"{prefix}.lambda: alpha and lambda need one entry per device")
        if any(a <= 0 for a in self.alpha):
            out.append(f"{prefix}.alpha: alpha must be > 0 for every device")
        if any(l < 0 for l in self.lam):
            out.append(f"{prefix}.lambda: lambda must be ≥ 0 for every device")
        if self.size_model not in ("fixed", "geometric"):
            out.append(f"{prefix}.size_model: size_model must be 'fixed' or 'geometric'")
        return out


@dataclass(frozen=True)
class DeploymentSpec:
    """Spatial layout: region, RRH placement, and optional BS tiers.

    The simulator itself consumes only the RRHs (receive diversity) and the
    device positions; the BS tiers feed the point-process tooling, the
    uplink/downlink association analysis, and the topology dump.
    """

    region_shape: str = "rect"
    region_size: float = 200.0
    rrh_count: int = 2
    rrh_layout: str = "grid"
    rrh_density: float = 0.0
    device_tx_power_dbm: float = 23.0
    macro_density: float = 0.0
    macro_min_dist: float = 0.0
    micro_density: float = 0.0
    pico_density: float = 0.0
    femto_parent_density: float = 0.0
    femto_mean_children: float = 0.0
    femto_spread: float = 10.0

    def violations(self, prefix: str = "deployment") -> list[str]:
        out = []
        if self.region_shape not in ("rect", "disc"):
            out.append(f"{prefix}.region_shape: region_shape must be 'rect' or 'disc'")
        if not self.region_size > 0:
            out.append(f"{prefix}.region_size: region_size must be > 0")
        if not isinstance(self.rrh_count, int) or self.rrh_count < 1:
            out.append(f"{prefix}.rrh_count: rrh_count must be ≥ 1")
        if self.rrh_layout not in ("grid", "hppp"):
            out.append(f"{prefix}.rrh_layout: rrh_layout must be 'grid' or 'hppp'")
        if self.rrh_density < 0:
            out.append(f"{prefix}.rrh_density: rrh_density must be ≥ 0")
        for name in (
            "macro_density",
            "macro_min_dist",
            "micro_density",
            "pico_density",
            "femto_parent_density",
            "femto_mean_children",
        ):
            if getattr(self, name) < 0:
                out.append(f"{prefix}.{name}: {name} must be ≥ 0")
        if not self.femto_spread > 0:
            out.append(f"{prefix}.femto_spread: femto_spread must be > 0")
        return out


@dataclass(frozen=True)
class ChannelSpec:
    """Power-law path loss with optional Rayleigh block fading per PRP."""

    path_loss_exponent: float = 4.0
    ref_loss_db: float = 38.0
    fading: str = "rayleigh"
    noise_dbm: float = -100.0

    @property
    def ref_gain(self) -> float:
        return 10.0 ** (-self.ref_loss_db / 10.0)

    @property
    def noise_w(self) -> float:
        return dbm_to_watts(self.noise_dbm)

    def violations(self, prefix: str = "channel") -> list[str]:
        out = []
        if not self.path_loss_exponent > 2:
            out.append(f"{prefix}.path_loss_exponent: path_loss_exponent must be > 2")
        if self.fading not in ("none", "rayleigh"):
            out.append(f"{prefix}.fading: fading must be 'none' or 'rayleigh'")
        # noise_w is positive for any finite dBm value
        if not math.isfinite(self.noise_dbm):
            out.append(f"{prefix}.noise_dbm: noise_dbm must be finite")
        return out


@dataclass(frozen=True)
class ReceptionSpec:
    """Receiver behavior per PRP.

    model 'mi': mutual-information accumulation over the selected RUs with
    iterative cancellation (default).  'threshold': a device decodes iff any
    of its RUs clears threshold_db after combining.  'fixed': bypass the
    channel entirely and draw per-stage outcomes from fixed_p_e (used to
    cross-check the simulator against the analytical chain).
    """

    model: str = "mi"
    threshold_db: float = 3.0
    sic_rounds: int = 8
    fixed_p_e: Optional[tuple[float, ...]] = None

    def violations(self, prefix: str = "reception", v_max: Optional[int] = None) -> list[str]:
        out = []
        if self.model not in ("mi", "threshold", "fixed"):
            out.append(f"{prefix}.model: model must be 'mi', 'threshold' or 'fixed'")
        if not isinstance(self.sic_rounds, int) or self.sic_rounds < 1:
            out.append(f"{prefix}.sic_rounds: sic_rounds must be ≥ 1")
        if self.model == "fixed":
            if self.fixed_p_e is None:
                out.append(f"{prefix}.fixed_p_e: fixed_p_e is required when model = 'fixed'")
            else:
                if any(not 0.0 <= x <= 1.0 for x in self.fixed_p_e):
                    out.append(f"{prefix}.fixed_p_e: every entry must lie in [0,1]")
                if v_max is not None and len(self.fixed_p_e) != v_max + 1:
                    out.append(
                        f"{prefix}.fixed_p_e: needs v_max+1 = {v_max + 1} entries, "
                        f"got {len(self.fixed_p_e)}"
                    )
        return out


@dataclass(frozen=True)
class AnalysisSpec:
    """Knobs for the analytical fixed-point solve (analyze/compare modes)."""

    mc_samples: int = 256
    max_iterations: int = 10_000
    damping: float = 0.5
    tolerance: float = 1e-9

    def violations(self, prefix: str = "analysis") -> list[str]:
        out = []
        if not isinstance(self.mc_samples, int) or self.mc_samples < 1:
            out.append(f"{prefix}.mc_samples: mc_samples must be ≥ 1")
        if not isinstance(self.max_iterations, int) or self.max_iterations < 1:
            out.append(f"{prefix}.max_iterations: max_iterations must be ≥ 1")
        if not 0.0 <= self.damping < 1.0:
            out.append(f"{prefix}.damping: damping must lie in [0,1)")
        if not self.tolerance > 0:
            out.append(f"{prefix}.tolerance: tolerance must be > 0")
        return out


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything one run needs: protocol, traffic, geometry, channel, horizon."""

    prp: PrpConfig = field(default_factory=PrpConfig)
    gonora: GonoraParams = field(default_factory=GonoraParams)
    traffic: TrafficProfile = field(default_factory=TrafficProfile)
    deployment: DeploymentSpec = field(default_factory=DeploymentSpec)
    channel: ChannelSpec = field(default_factory=ChannelSpec)
    reception: ReceptionSpec = field(default_factory=ReceptionSpec)
    analysis: AnalysisSpec = field(default_factory=AnalysisSpec)
    horizon: int = 2000
    replications: int = 20
    master_seed: int = 1
    warmup_fraction: float = 0.1

    def violations(self) -> list[str]:
        out = []
        out += self.prp.violations()
        out += self.gonora.violations()
        out += self.traffic.violations()
        out += self.deployment.violations()
        out += self.channel.violations()
        out += self.reception.violations(v_max=self.gonora.v_max)
        out += self.analysis.violations()
        if not isinstance(self.horizon, int) or self.horizon < 1:
            out.append("horizon: horizon must be ≥ 1")
        if not isinstance(self.replications, int) or self.replications < 1:
            out.append("replications: replications must be ≥ 1")
        if not 0.0 <= self.warmup_fraction < 1.0:
            out.append("warmup_fraction: warmup_fraction must lie in [0,1)")
        return out


def validate(config: ScenarioConfig) -> ScenarioConfig:
    """Return the config unchanged if every invariant holds.

    Raises ConfigError listing *all* violations (field path + constraint),
    not just the first one found.  Idempotent: validating a validated config
    is a no-op.
    """
    violations = config.violations()
    if violations:
        raise ConfigError(violations)
    return config


# ---------------------------------------------------------------------------
# Live device state (animated by the simulation engine)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DeviceRecord:
    """Snapshot of one MTC device: protocol state, pending packet, position."""

    id: int
    state: ProtocolState
    pending_bits: Optional[float]
    birth_slot: Optional[int]
    position: tuple[float, float]
    tx_power_w: float

    def violations(self, params: GonoraParams) -> list[str]:
        out = []
        st = self.state
        if isinstance(st, Backoff):
            if not 0 <= st.v <= params.v_max:
                out.append(f"device {self.id}: stage v={st.v} outside [0, {params.v_max}]")
            elif not 0 <= st.k <= params.window(st.v) - 1:
                out.append(
                    f"device {self.id}: counter k={st.k} outside [0, {params.window(st.v) - 1}]"
                )
        elif isinstance(st, Transmit):
            if not 0 <= st.v <= params.v_max:
                out.append(f"device {self.id}: stage v={st.v} outside [0, {params.v_max}]")
        if isinstance(st, Idle) != (self.pending_bits is None):
            out.append(f"device {self.id}: pending packet must be present iff not idle")
        if self.pending_bits is not None and not self.pending_bits > 0:
            out.append(f"device {self.id}: pending bits must be > 0")
        return out


# ---------------------------------------------------------------------------
# Config file loading
# ---------------------------------------------------------------------------

_SIM_KEYS = {"horizon", "replications", "master_seed", "warmup_fraction"}


def _flatten(tree: dict, prefix: str = "") -> dict[str, object]:
    flat: dict[str, object] = {}
    for key, value in tree.items():
        path = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(_flatten(value, prefix=f"{path}."))
        else:
            flat[path] = value
    return flat


def _pop(flat: dict, key: str, default):
    return flat.pop(key, default)


def _as_int(flat: dict, key: str, default: int, errors: list) -> int:
    raw = flat.pop(key, default)
    if isinstance(raw, bool) or not isinstance(raw, (int, float)):
        errors.append(f"{key}: expected an integer, got {raw!r}")
        return default
    if float(raw) != int(raw):
        errors.append(f"{key}: expected an integer, got {raw!r}")
        return default
    return int(raw)


def _per_device(raw, m_count: int, key: str, errors: list) -> tuple[float, ...]:
    if isinstance(raw, (list, tuple)):
        if len(raw) != m_count:
            errors.append(f"{key}: needs {m_count} entries (one per device), got {len(raw)}")
            return tuple(float(x) for x in raw) or (1.0,)
        return tuple(float(x) for x in raw)
    return (float(raw),) * m_count


def config_from_flat(flat: dict[str, object]) -> ScenarioConfig:
    """Build a validated ScenarioConfig from flat dotted-key/value pairs.

    ``gonora.p = "auto"`` derives the RU selection probability from the
    offered load; ``prp.beta`` defaults to omega × ru_payload_bits.
    """
    flat = dict(flat)
    errors: list[str] = []

    omega = _as_int(flat, "prp.omega", 64, errors)
    payload = float(_pop(flat, "prp.ru_payload_bits", 4.0))
    prp = PrpConfig(
        omega=omega,
        tau=float(_pop(flat, "prp.tau", 1e-3)),
        beta=float(_pop(flat, "prp.beta", omega * payload)),
        gamma=float(_pop(flat, "prp.gamma", 1.0)),
        ru_payload_bits=payload,
    )

    m_count = _as_int(flat, "traffic.devices", 64, errors)
    traffic = TrafficProfile(
        alpha=_per_device(_pop(flat, "traffic.alpha", 32.0), m_count, "traffic.alpha", errors),
        lam=_per_device(_pop(flat, "traffic.lambda", 50.0), m_count, "traffic.lambda", errors),
        size_model=str(_pop(flat, "traffic.size_model", "fixed")),
        saturated=bool(_pop(flat, "traffic.saturated", False)),
    )

    raw_p = _pop(flat, "gonora.p", "auto")
    p_auto = isinstance(raw_p, str)
    if p_auto and raw_p != "auto":
        errors.append(f"gonora.p: must be a number in [0,1] or 'auto', got {raw_p!r}")
    gonora = GonoraParams(
        w0=_as_int(flat, "gonora.w0", 4, errors),
        v_max=_as_int(flat, "gonora.v_max", 3, errors),
        p=1.0 if p_auto else float(raw_p),
        p_auto=p_auto,
    )

    deployment = DeploymentSpec(
        region_shape=str(_pop(flat, "deployment.region_shape", "rect")),
        region_size=float(_pop(flat, "deployment.region_size", 200.0)),
        rrh_count=_as_int(flat, "deployment.rrh_count", 2, errors),
        rrh_layout=str(_pop(flat, "deployment.rrh_layout", "grid")),
        rrh_density=float(_pop(flat, "deployment.rrh_density", 0.0)),
        device_tx_power_dbm=float(_pop(flat, "deployment.device_tx_power_dbm", 23.0)),
        macro_density=float(_pop(flat, "deployment.macro_density", 0.0)),
        macro_min_dist=float(_pop(flat, "deployment.macro_min_dist", 0.0)),
        micro_density=float(_pop(flat, "deployment.micro_density", 0.0)),
        pico_density=float(_pop(flat, "deployment.pico_density", 0.0)),
        femto_parent_density=float(_pop(flat, "deployment.femto_parent_density", 0.0)),
        femto_mean_children=float(_pop(flat, "deployment.femto_mean_children", 0.0)),
        femto_spread=float(_pop(flat, "deployment.femto_spread", 10.0)),
    )

    channel = ChannelSpec(
        path_loss_exponent=float(_pop(flat, "channel.path_loss_exponent", 4.0)),
        ref_loss_db=float(_pop(flat, "channel.ref_loss_db", 38.0)),
        fading=str(_pop(flat, "channel.fading", "rayleigh")),
        noise_dbm=float(_pop(flat, "channel.noise_dbm", -100.0)),
    )

    raw_pe = _pop(flat, "reception.fixed_p_e", None)
    reception = ReceptionSpec(
        model=str(_pop(flat, "reception.model", "mi")),
        threshold_db=float(_pop(flat, "reception.threshold_db", 3.0)),
        sic_rounds=_as_int(flat, "reception.sic_rounds", 8, errors),
        fixed_p_e=None if raw_pe is None else tuple(float(x) for x in raw_pe),
    )

    analysis = AnalysisSpec(
        mc_samples=_as_int(flat, "analysis.mc_samples", 256, errors),
        max_iterations=_as_int(flat, "analysis.max_iterations", 10_000, errors),
        damping=float(_pop(flat, "analysis.damping", 0.5)),
        tolerance=float(_pop(flat, "analysis.tolerance", 1e-9)),
    )

    config = ScenarioConfig(
        prp=prp,
        gonora=gonora,
        traffic=traffic,
        deployment=deployment,
        channel=channel,
        reception=reception,
        analysis=analysis,
        horizon=_as_int(flat, "run.horizon", 2000, errors),
        replications=_as_int(flat, "run.replications", 20, errors),
        master_seed=_as_int(flat, "run.master_seed", 1, errors),
        warmup_fraction=float(_pop(flat, "run.warmup_fraction", 0.1)),
    )

    for key in sorted(flat):
        errors.append(f"{key}: unknown configuration key")
    if errors:
        raise ConfigError(errors)

    if config.gonora.p_auto:
        config = resolve_auto_p(config)
    return validate(config)


def resolve_auto_p(config: ScenarioConfig) -> ScenarioConfig:
    """Fill gonora.p from the offered-load formula (keeps p_auto set)."""
    from .traffic import selection_probability

    p = selection_probability(config.prp, config.traffic)
    return replace(config, gonora=replace(config.gonora, p=p, p_auto=True))


def load_config(path: str) -> ScenarioConfig:
    """Parse a flat TOML scenario file and validate it."""
    try:
        with open(path, "rb") as fh:
            tree = _toml.load(fh)
    except OSError as exc:
        raise ConfigError([f"config: cannot read {path}: {exc}"]) from exc
    except _toml.TOMLDecodeError as exc:
        raise ConfigError([f"config: {path} is not valid TOML: {exc}"]) from exc
    return config_from_flat(_flatten(tree))
