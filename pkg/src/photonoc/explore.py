"""
Design-space exploration: thermal solves coupled to the laser and SNR models.

A :class:`System` is a meshed chip (one ring-length variant, one activity
pattern) plus the photonic models.  :meth:`System.evaluate` turns a set of
power knobs into per-ONI temperatures, laser operating points and a ring SNR
report.  :func:`sweep`, :func:`optimize_heater` and
:func:`evaluate_scenarios` drive it.
"""

from __future__ import annotations

import copy
import json
import logging
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .chipmodel import (
    ActivityScenario,
    ChipStack,
    ConfigError,
    apply_activity,
    build_stack,
    diagonal_activity,
    oni_geometry_from_config,
    random_activity,
    set_device_powers,
    set_oni_device_powers,
    uniform_activity,
    zero_activity,
)
from .photonics import (
    HEAT_POLICIES,
    MrModel,
    ThermoOpticModel,
    VcselModel,
    VcselOperatingPoint,
    operating_point_at,
    vcsel_efficiency,
)
from .snr import (
    SENSITIVITY_MW,
    RingNetwork,
    SnrReport,
    default_channels,
    hop_plan,
    segment_lengths_cm,
    snr,
)
from .thermal import Mesh, OniThermalStats, ResolutionPolicy, ThermalMap, build_mesh, oni_stats, solve_steady

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# units and activity


_POWER_RE = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*(mW|W)?\s*$")


def parse_power(text: str | float) -> float:
    """Power in mW from ``"12.5W"``, ``"3.6mW"`` or a bare number (mW)."""
    if isinstance(text, (int, float)):
        return float(text)
    m = _POWER_RE.match(text)
    if not m:
        raise ValueError(f"cannot read power {text!r}; use e.g. '3.6', '3.6mW' or '12.5W'")
    value = float(m.group(1))
    return value * 1000.0 if m.group(2) == "W" else value


@dataclass(frozen=True)
class ScenarioSpec:
    """Activity pattern independent of a particular stack.

    ``kind`` is uniform, diagonal, random or zero.  ``total`` is the die
    power (mW); a diagonal pattern splits it 1:2 between its low and high
    quadrant pairs unless ``low``/``high`` (per quadrant) are given.
    """

    kind: str
    total: float = 0.0
    low: float | None = None
    high: float | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in ("uniform", "diagonal", "random", "zero"):
            raise ValueError(f"unknown activity kind {self.kind!r}")
        if self.total < 0:
            raise ValueError("activity power must be >= 0")
        if (self.low is None) != (self.high is None):
            raise ValueError("diagonal activity needs both quadrant powers")
        if self.low is not None:
            if self.low < 0 or self.high < 0:
                raise ValueError("activity power must be >= 0")
            object.__setattr__(self, "total", 2.0 * (self.low + self.high))

    @property
    def name(self) -> str:
        return self.kind

    def resolve(self, stack: ChipStack) -> ActivityScenario:
        if self.kind == "uniform":
            return uniform_activity(stack, self.total)
        if self.kind == "zero":
            return zero_activity(stack)
        if self.kind == "random":
            return random_activity(stack, self.total, self.seed)
        low = self.total / 6.0 if self.low is None else self.low
        high = self.total / 3.0 if self.high is None else self.high
        return diagonal_activity(stack, low, high)

    def with_total(self, total: float) -> ScenarioSpec:
        if self.low is None:
            return replace(self, total=total)
        scale = total / self.total if self.total else 0.0
        return replace(self, low=self.low * scale, high=self.high * scale, total=total)

    @classmethod
    def parse(cls, text: str, seed: int = 0) -> ScenarioSpec:
        """``uniform:12.5W``, ``diagonal:4W,8W``, ``random:25W`` or ``zero``."""
        kind, _, rest = text.partition(":")
        kind = kind.strip()
        if kind == "zero":
            return cls("zero")
        values = [parse_power(v) for v in rest.split(",") if v.strip()]
        if kind == "diagonal" and len(values) == 2:
            return cls("diagonal", low=values[0], high=values[1], seed=seed)
        if len(values) != 1:
            raise ValueError(f"cannot read activity {text!r}")
        return cls(kind, total=values[0], seed=seed)

    @classmethod
    def from_config(cls, config: Mapping) -> ScenarioSpec:
        act = config.get("activity", {})
        try:
            return cls(
                act.get("kind", "uniform"),
                total=float(act.get("total_mw", 0.0)),
                seed=int(act.get("seed", 0)),
            )
        except ValueError as exc:
            raise ConfigError(f"{config.get('_path', '<config>')}: [activity]: {exc}") from None


# ---------------------------------------------------------------------------
# photonic settings


@dataclass(frozen=True)
class Photonics:
    """Device models and ring parameters shared by every sample."""

    vcsel: VcselModel = field(default_factory=VcselModel)
    mr: MrModel = field(default_factory=MrModel)
    thermo: ThermoOpticModel = field(default_factory=ThermoOpticModel)
    waveguides: tuple[str, ...] = ("cw", "ccw", "cw", "ccw")
    receivers_per_waveguide: int = 4
    loss_db_per_cm: float = 0.5
    base_wavelength: float = 1530.0
    channel_spacing: float = 4.0
    reference_current: float = 2.4  # mA
    heat_policy: str = "worst_case"
    terminate_at_destination: bool = False
    # "oni": one average temperature per ONI drives both lasers and rings;
    # "device": mean laser / mean ring temperatures are used separately
    device_temperatures: str = "oni"

    def __post_init__(self) -> None:
        object.__setattr__(self, "waveguides", tuple(self.waveguides))
        bad = [w for w in self.waveguides if w not in ("cw", "ccw")]
        if bad:
            raise ValueError(f"waveguide directions must be 'cw' or 'ccw', got {bad}")
        if self.heat_policy not in HEAT_POLICIES:
            raise ValueError(f"unknown heat policy {self.heat_policy!r}")
        if self.device_temperatures not in ("oni", "device"):
            raise ValueError(f"device_temperatures must be 'oni' or 'device', got {self.device_temperatures!r}")

    @classmethod
    def from_config(cls, config: Mapping) -> Photonics:
        ph = config.get("photonics", {})
        ring = config.get("ring", {})
        where = f"{config.get('_path', '<config>')}: [photonics]"
        try:
            vcsel = VcselModel(
                efficiency_table=tuple(tuple(r) for r in ph.get("efficiency_table", VcselModel().efficiency_table)),
                coupling_efficiency=float(ph.get("coupling_efficiency", 0.70)),
                forward_voltage=float(ph.get("forward_voltage_v", 1.5)),
            )
            geom = oni_geometry_from_config(config) if "oni" in config else None
            return cls(
                vcsel=vcsel,
                mr=MrModel(bandwidth=float(ph.get("mr_bandwidth_nm", 1.55))),
                thermo=ThermoOpticModel(
                    sensitivity=float(ph.get("sensitivity_nm_per_c", 0.1)),
                    reference_temperature=float(ph.get("reference_temperature", 25.0)),
                ),
                waveguides=tuple(ring.get("waveguides", ("cw", "ccw", "cw", "ccw"))),
                receivers_per_waveguide=geom.slots // 2 if geom else 4,
                loss_db_per_cm=float(ring.get("loss_db_per_cm", 0.5)),
                base_wavelength=float(ph.get("base_wavelength_nm", 1530.0)),
                channel_spacing=float(ph.get("channel_spacing_nm", 4.0)),
                reference_current=float(ph.get("reference_current_ma", vcsel.reference_current)),
                heat_policy=ph.get("heat_policy", "worst_case"),
                terminate_at_destination=bool(ring.get("terminate_at_destination", False)),
                device_temperatures=str(ph.get("device_temperatures", "oni")),
            )
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{where}: {exc}") from None


@dataclass(frozen=True)
class Knobs:
    """Uniform power settings (mW) for all lasers, drivers and heaters.

    ``i_vcsel`` (mA) fixes the laser electrical power ``I * V_f``.  When it is
    omitted it follows from ``p_vcsel`` under the worst-case reading
    (dissipated = electrical).  ``p_driver`` defaults to ``p_vcsel``.
    ``p_chip`` rescales the activity pattern to that total die power.
    Anything left as None takes the configured ``[oni]`` value.
    """

    p_vcsel: float | None = None
    p_heater: float | None = None
    p_driver: float | None = None
    i_vcsel: float | None = None
    p_chip: float | None = None

    def __post_init__(self) -> None:
        for name in ("p_vcsel", "p_heater", "p_driver", "i_vcsel", "p_chip"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise ValueError(f"{name} must be >= 0, got {v}")


@dataclass(frozen=True)
class Limits:
    gradient: float = 1.0  # °C per ONI
    snr_db: float = 10.0
    sensitivity: float = SENSITIVITY_MW


def constraint_flags(max_gradient: float, worst_snr: float | None, min_signal: float, limits: Limits) -> dict[str, bool]:
    """The three design checks, derived only from stored raw values."""
    return {
        "gradient_ok": max_gradient <= limits.gradient,
        "sensitivity_ok": min_signal >= limits.sensitivity * (1.0 - 1e-12),
        "snr_ok": worst_snr is not None and worst_snr >= limits.snr_db,
    }


# ---------------------------------------------------------------------------
# one evaluation


@dataclass(frozen=True)
class Sample:
    knob: float
    knobs: Knobs
    oni: tuple[OniThermalStats, ...]
    lasers: tuple[VcselOperatingPoint, ...]  # one per ONI
    report: SnrReport | None
    channel_labels: tuple[str, ...]
    optical_power: float  # mW drawn by lasers, drivers and heaters
    thermal_iterations: int
    flags: dict

    @property
    def max_gradient(self) -> float:
        return max(s.gradient for s in self.oni)

    @property
    def mean_temperature(self) -> float:
        return math.fsum(s.avg_temperature for s in self.oni) / len(self.oni)

    @property
    def temperature_spread(self) -> float:
        temps = [s.avg_temperature for s in self.oni]
        return max(temps) - min(temps)

    @property
    def worst_snr(self) -> float | None:
        return None if self.report is None else self.report.worst_snr

    @property
    def min_signal(self) -> float:
        if self.report is None or not self.report.channels:
            return math.nan
        return min(c.signal for c in self.report.channels)


class System:
    """A meshed chip plus photonic models, ready for repeated evaluation.

    The mesh, conduction operator and preconditioner are built once; each
    evaluation only redistributes block powers and re-solves.
    """

    def __init__(
        self,
        config: Mapping,
        *,
        pitch: float | None = None,
        scenario: ScenarioSpec | None = None,
        policy: ResolutionPolicy | None = None,
        tolerance: float = 1e-8,
        limits: Limits | None = None,
        photonics: Photonics | None = None,
    ):
        self.config = config
        self.pitch = pitch
        self.scenario = scenario or ScenarioSpec.from_config(config)
        self.tolerance = tolerance
        self.limits = limits or Limits()
        self.photonics = photonics or Photonics.from_config(config)
        base = build_stack(config, oni_pitch=pitch)
        if not base.onis:
            raise ConfigError("exploration needs an [oni] table")
        self.base_stack = base
        mesh_cfg = config.get("mesh", {})
        self.policy = policy or ResolutionPolicy(
            fine=float(mesh_cfg.get("fine", 5.0)),
            source=float(mesh_cfg.get("source", 100.0)),
            package=float(mesh_cfg.get("package", 500.0)),
        )
        self.mesh: Mesh = build_mesh(base, self.policy)
        oni = config.get("oni", {})
        self.default_p_vcsel = float(oni.get("p_vcsel", 0.0))
        self.default_p_driver = float(oni.get("p_driver", self.default_p_vcsel))
        self.default_p_heater = float(oni.get("p_heater", 0.0))

    def with_scenario(self, scenario: ScenarioSpec) -> System:
        """Same mesh and models under another activity pattern."""
        other = copy.copy(self)
        other.scenario = scenario
        return other

    # -- stacks and thermal -------------------------------------------------

    @property
    def onis(self):
        return self.base_stack.onis

    def ring_length_mm(self) -> float:
        order = [o.oni_id for o in self.onis]
        pos = {o.oni_id: o.position for o in self.onis}
        return 10.0 * math.fsum(segment_lengths_cm(order, pos))

    def resolve(self, knobs: Knobs) -> tuple[float, float, float, float]:
        """(I_VCSEL mA, P_elec mW, P_VCSEL mW, P_driver mW) for ``knobs``."""
        vcsel = self.photonics.vcsel
        if knobs.i_vcsel is not None:
            current = knobs.i_vcsel
            p_vcsel = vcsel.electrical_power(current) if knobs.p_vcsel is None else knobs.p_vcsel
        else:
            p_vcsel = self.default_p_vcsel if knobs.p_vcsel is None else knobs.p_vcsel
            current = p_vcsel / vcsel.forward_voltage
        p_elec = vcsel.electrical_power(current)
        if knobs.p_driver is not None:
            p_driver = knobs.p_driver
        elif knobs.p_vcsel is None and knobs.i_vcsel is None:
            p_driver = self.default_p_driver
        else:
            p_driver = p_vcsel
        return current, p_elec, p_vcsel, p_driver

    def heater_power(self, knobs: Knobs) -> float:
        return self.default_p_heater if knobs.p_heater is None else knobs.p_heater

    def stack_for(self, knobs: Knobs, vcsel_by_oni: Mapping[int, float] | None = None) -> ChipStack:
        scenario = self.scenario if knobs.p_chip is None else self.scenario.with_total(knobs.p_chip)
        stack = apply_activity(self.base_stack, scenario.resolve(self.base_stack))
        _, _, p_vcsel, p_driver = self.resolve(knobs)
        stack = set_device_powers(stack, p_vcsel=p_vcsel, p_driver=p_driver, p_heater=self.heater_power(knobs))
        if vcsel_by_oni is not None:
            stack = set_oni_device_powers(stack, "VCSEL", vcsel_by_oni)
        return stack

    def solve(self, stack: ChipStack, initial: ThermalMap | None = None) -> ThermalMap:
        return solve_steady(self.mesh.with_powers(stack), tolerance=self.tolerance, initial=initial)

    def thermal(self, knobs: Knobs) -> tuple[ThermalMap, list[OniThermalStats]]:
        tmap = self.solve(self.stack_for(knobs))
        return tmap, oni_stats(tmap, self.onis, self.limits.gradient)

    def max_gradient(self, knobs: Knobs) -> float:
        return max(s.gradient for s in self.thermal(knobs)[1])

    # -- lasers -------------------------------------------------------------

    def operate(self, knobs: Knobs, tol: float = 0.01, damping: float = 0.5, max_iterations: int = 100):
        """Thermal map, ONI stats and per-ONI laser operating points.

        Under the worst-case policy the lasers dissipate their whole
        electrical power and one solve suffices.  Under the efficiency policy
        every ONI's laser heat ``P_elec * (1 - eta(T))`` is updated from its
        mean laser temperature and re-solved, with damping, until no ONI's
        laser temperature moves by more than ``tol``.
        """
        current, p_elec, _, _ = self.resolve(knobs)
        vcsel = self.photonics.vcsel
        policy = self.photonics.heat_policy
        if policy == "worst_case" or knobs.p_vcsel is not None:
            tmap, stats = self.thermal(knobs)
            ops = [
                operating_point_at(vcsel, s.vcsel_temperature, current, p_elec, policy="worst_case", iterations=1)
                for s in stats
            ]
            return tmap, stats, ops

        ids = [o.oni_id for o in self.onis]
        guess = vcsel.curves()[0][1][0]
        temps = np.full(len(ids), guess)
        tmap = None
        for it in range(1, max_iterations + 1):
            heat = {i: p_elec * (1.0 - vcsel_efficiency(vcsel, t, current)) for i, t in zip(ids, temps)}
            tmap = self.solve(self.stack_for(knobs, heat), initial=tmap)
            stats = oni_stats(tmap, self.onis, self.limits.gradient)
            new = np.array([s.vcsel_temperature for s in stats])
            if np.max(np.abs(new - temps)) <= tol:
                ops = [operating_point_at(vcsel, t, current, p_elec, iterations=it) for t in new]
                return tmap, stats, ops
            temps = temps + damping * (new - temps)
        raise RuntimeError(f"laser temperatures did not settle in {max_iterations} iterations")

    # -- network ------------------------------------------------------------

    def networks(self, stats: Sequence[OniThermalStats], ops: Sequence[VcselOperatingPoint]) -> list[RingNetwork]:
        """One :class:`RingNetwork` per waveguide, fed by the ONI temperatures."""
        ph = self.photonics
        ids = [o.oni_id for o in self.onis]
        pos = {o.oni_id: o.position for o in self.onis}
        power = {i: op.network_power for i, op in zip(ids, ops)}
        lasers = rings = None
        if ph.device_temperatures == "device":
            lasers = {s.oni_id: s.vcsel_temperature for s in stats}
            rings = {s.oni_id: s.mr_temperature for s in stats}
        plan = hop_plan(ph.waveguides, ph.receivers_per_waveguide)
        nets = []
        for direction, hops in zip(ph.waveguides, plan):
            order = ids if direction == "cw" else [ids[0]] + ids[:0:-1]
            if max(hops) >= len(ids):
                raise ValueError(f"{len(ids)} ONIs cannot serve hop distance {max(hops)}")
            nets.append(
                RingNetwork(
                    tuple(order),
                    tuple(segment_lengths_cm(order, pos)),
                    tuple(
                        default_channels(
                            order, hops, power=power, base=ph.base_wavelength, spacing=ph.channel_spacing
                        )
                    ),
                    temperatures={s.oni_id: s.avg_temperature for s in stats},
                    loss_db_per_cm=ph.loss_db_per_cm,
                    mr=ph.mr,
                    thermo=ph.thermo,
                    laser_temperatures=lasers,
                    ring_temperatures=rings,
                    terminate_at_destination=ph.terminate_at_destination,
                )
            )
        return nets

    def evaluate(self, knobs: Knobs, knob: float = math.nan, *, with_snr: bool = True) -> Sample:
        tmap, stats, ops = self.operate(knobs)
        report, labels = None, ()
        if with_snr:
            report, labels = merge_reports(self.networks(stats, ops), self.photonics.waveguides)
        _, p_elec, _, p_driver = self.resolve(knobs)
        counts = {"VCSEL": 0, "Driver": 0, "Heater": 0}
        for d in self.base_stack.devices:
            if d.kind in counts:
                counts[d.kind] += 1
        optical = counts["VCSEL"] * p_elec + counts["Driver"] * p_driver + counts["Heater"] * self.heater_power(knobs)
        max_grad = max(s.gradient for s in stats)
        worst = None if report is None else report.worst_snr
        min_sig = math.nan if report is None else min(c.signal for c in report.channels)
        flags = constraint_flags(max_grad, worst, min_sig, self.limits) if report is not None else {
            "gradient_ok": max_grad <= self.limits.gradient
        }
        return Sample(knob, knobs, tuple(stats), tuple(ops), report, labels, optical, tmap.iterations, flags)


def merge_reports(nets: Sequence[RingNetwork], directions: Sequence[str]) -> tuple[SnrReport, tuple[str, ...]]:
    """Concatenate per-waveguide reports; labels read ``w<k>:<s>-><d>``."""
    rows, ledgers, labels = [], [], []
    for w, net in enumerate(nets):
        rep = snr(net)
        base = len(rows)
        for row in rep.channels:
            rows.append(replace(row, channel=base + row.channel))
            c = net.channels[row.channel]
            labels.append(f"w{w}{directions[w]}:{c.source}->{c.destination}")
        ledgers.extend(rep.ledgers)
    return SnrReport(tuple(rows), tuple(ledgers)), tuple(labels)


# ---------------------------------------------------------------------------
# sweeps


SWEEP_VARIABLES = ("P_heater", "I_VCSEL", "P_VCSEL", "P_chip")


@dataclass(frozen=True)
class SweepSpec:
    """``steps`` evenly spaced values of ``variable`` from ``start`` to ``stop``.

    Units: mW for powers (P_chip included), mA for I_VCSEL.
    """

    variable: str
    start: float
    stop: float
    steps: int
    fixed: Knobs = field(default_factory=Knobs)

    def __post_init__(self) -> None:
        if self.variable not in SWEEP_VARIABLES:
            raise ValueError(f"unknown sweep variable {self.variable!r}; expected one of {SWEEP_VARIABLES}")
        if not self.start < self.stop:
            raise ValueError(f"sweep range must satisfy min < max, got [{self.start}, {self.stop}]")
        if self.steps < 2:
            raise ValueError("a sweep needs at least 2 steps")
        if self.start < 0:
            raise ValueError("sweep values must be >= 0")

    def values(self) -> list[float]:
        return [float(v) for v in np.linspace(self.start, self.stop, self.steps)]

    def knobs_at(self, value: float) -> Knobs:
        key = {"P_heater": "p_heater", "I_VCSEL": "i_vcsel", "P_VCSEL": "p_vcsel", "P_chip": "p_chip"}
        return replace(self.fixed, **{key[self.variable]: value})


class SweepError(RuntimeError):
    def __init__(self, message: str, value: float):
        super().__init__(message)
        self.value = value


@dataclass(frozen=True)
class ExplorationResult:
    variable: str
    samples: tuple[Sample, ...]
    limits: Limits = field(default_factory=Limits)
    notes: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        knobs = [s.knob for s in self.samples]
        if knobs != sorted(knobs):
            raise ValueError("samples must be ordered by knob value")

    @property
    def knob_values(self) -> list[float]:
        return [s.knob for s in self.samples]

    def column(self, name: str) -> list[float]:
        return [getattr(s, name) for s in self.samples]


def sweep(spec: SweepSpec, system: System, *, jobs: int = 1, with_snr: bool = True) -> ExplorationResult:
    """One thermal solve (plus SNR evaluation) per sample, in knob order.

    Samples are independent and start from a cold solver state, so the
    result does not depend on ``jobs``.
    """
    values = spec.values()

    def run(v: float) -> Sample:
        try:
            return system.evaluate(spec.knobs_at(v), v, with_snr=with_snr)
        except Exception as exc:
            raise SweepError(f"{spec.variable} = {v:g}: {exc}", v) from exc

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            samples = list(pool.map(run, values))
    else:
        samples = [run(v) for v in values]
    return ExplorationResult(spec.variable, tuple(samples), system.limits)


# ---------------------------------------------------------------------------
# heater optimisation


_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class HeaterOptimum:
    p_heater: float
    gradient: float
    no_heater_gradient: float
    method: str  # "golden", "grid" or "trivial"
    evaluations: tuple[tuple[float, float], ...]  # (P_heater, gradient), in call order
    note: str = ""


def minimize_scalar(
    f: Callable[[float], float], lo: float, hi: float, budget: int
) -> tuple[float, float, str, list[tuple[float, float]], str]:
    """Golden-section search on [lo, hi] with a grid-scan fallback.

    Uses at most ``budget`` evaluations of ``f``.  Falls back to an even
    grid when the sampled values contradict a single minimum.
    """
    if budget < 3:
        raise ValueError("budget must be >= 3")
    calls: list[tuple[float, float]] = []
    cache: dict[float, float] = {}

    def g(x: float) -> float:
        if x not in cache:
            cache[x] = float(f(x))
            calls.append((x, cache[x]))
        return cache[x]

    def grid(reason: str):
        # spend what is left of the budget; end points already sampled are reused
        n = budget - len(calls)
        if lo in cache and hi in cache:
            n += 2
        for x in np.linspace(lo, hi, max(n, 2)):
            if len(calls) < budget:
                g(float(x))
        x, v = min(cache.items(), key=lambda kv: (kv[1], kv[0]))
        return x, v, "grid", calls, reason

    if budget < 4:
        return grid("budget too small for golden-section search")

    fa, fb = g(lo), g(hi)
    a, b = lo, hi
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = g(c), g(d)
    while len(calls) < budget:
        # an interior local maximum rules out a single minimum
        tol = 1e-12 * max(1.0, abs(fa), abs(fb))
        if fc > max(fa, fd) + tol or fd > max(fc, fb) + tol:
            return grid("response is not unimodal on the bracket")
        if fc <= fd:
            b, fb, d, fd = d, fd, c, fc
            c = b - _INV_PHI * (b - a)
            fc = g(c)
        else:
            a, fa, c, fc = c, fc, d, fd
            d = a + _INV_PHI * (b - a)
            fd = g(d)
    x, v = min(cache.items(), key=lambda kv: (kv[1], kv[0]))
    return x, v, "golden", calls, ""


def optimize_heater(system: System, p_vcsel: float, budget: int = 12, *, fixed: Knobs | None = None) -> HeaterOptimum:
    """Heater power in [0, ``p_vcsel``] that minimises the worst ONI gradient."""
    if budget < 3:
        raise ValueError("budget must be >= 3")
    base = replace(fixed or Knobs(), p_vcsel=p_vcsel)

    def objective(ph: float) -> float:
        return system.max_gradient(replace(base, p_heater=ph))

    if p_vcsel <= 0:
        g0 = objective(0.0)
        return HeaterOptimum(0.0, g0, g0, "trivial", ((0.0, g0),), "no laser power: heaters stay off")
    x, v, method, calls, note = minimize_scalar(objective, 0.0, p_vcsel, budget)
    g0 = dict(calls)[0.0]
    if v > g0:  # pragma: no cover - 0 is always sampled, so min() already covers it
        x, v = 0.0, g0
    return HeaterOptimum(x, v, g0, method, tuple(calls), note)


# ---------------------------------------------------------------------------
# scenario comparison


@dataclass(frozen=True)
class ScenarioRow:
    scenario: str
    variant: str
    ring_length_mm: float
    p_chip: float
    min_temperature: float  # lowest ONI average, °C
    max_temperature: float
    spread: float  # max - min of the ONI averages
    max_gradient: float
    worst_snr: float | None


def ring_variants(config: Mapping) -> dict[str, float]:
    """Variant name -> ONI pitch (µm) from ``[ring.variants]``."""
    variants = config.get("ring", {}).get("variants", {})
    if not variants:
        return {"default": float(config.get("oni", {}).get("pitch", 750.0))}
    return {str(k): float(v) for k, v in variants.items()}


def default_scenarios(config: Mapping) -> list[ScenarioSpec]:
    base = ScenarioSpec.from_config(config)
    total = base.total
    return [
        ScenarioSpec("uniform", total=total),
        ScenarioSpec("diagonal", total=total),
        ScenarioSpec("random", total=total, seed=base.seed),
    ]


def evaluate_scenarios(
    config: Mapping,
    scenarios: Sequence[ScenarioSpec],
    knobs: Knobs | None = None,
    *,
    variants: Mapping[str, float] | None = None,
    systems: Mapping[str, System] | None = None,
    jobs: int = 1,
) -> list[ScenarioRow]:
    """ONI temperature range and worst-case SNR per scenario and ring variant."""
    knobs = knobs or Knobs()
    variants = dict(ring_variants(config) if variants is None else variants)
    systems = dict(systems or {})

    def run(name: str) -> list[ScenarioRow]:
        base = systems.get(name) or System(config, pitch=variants[name])
        out = []
        for spec in scenarios:
            sys_ = base.with_scenario(spec)
            s = sys_.evaluate(knobs)
            temps = [o.avg_temperature for o in s.oni]
            out.append(
                ScenarioRow(
                    spec.name,
                    name,
                    sys_.ring_length_mm(),
                    spec.total,
                    min(temps),
                    max(temps),
                    max(temps) - min(temps),
                    s.max_gradient,
                    s.worst_snr,
                )
            )
        return out

    names = list(variants)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            groups = list(pool.map(run, names))
    else:
        groups = [run(n) for n in names]
    rows = [r for g in groups for r in g]
    order = {s.name: i for i, s in enumerate(scenarios)}
    return sorted(rows, key=lambda r: (order[r.scenario], names.index(r.variant)))


# ---------------------------------------------------------------------------
# outputs


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.10g}"
    return str(v)


def write_result_csv(result: ExplorationResult, path: str | Path) -> None:
    """One row per sample: knob, summary columns, flags, then per-ONI values."""
    samples = result.samples
    n_oni = len(samples[0].oni) if samples else 0
    head = [result.variable, "max_gradient_C", "mean_temperature_C", "spread_C", "worst_snr_dB",
            "min_signal_mW", "optical_power_mW", "gradient_ok", "sensitivity_ok", "snr_ok"]
    head += [f"T_oni{i}_C" for i in range(n_oni)] + [f"grad_oni{i}_C" for i in range(n_oni)]
    lines = [",".join(head)]
    for s in samples:
        row = [s.knob, s.max_gradient, s.mean_temperature, s.temperature_spread, s.worst_snr,
               s.min_signal, s.optical_power, s.flags.get("gradient_ok"), s.flags.get("sensitivity_ok"),
               s.flags.get("snr_ok")]
        row += [o.avg_temperature for o in s.oni] + [o.gradient for o in s.oni]
        lines.append(",".join(_fmt(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def write_channel_csv(result: ExplorationResult, path: str | Path) -> None:
    """Long format: knob, channel label, signal, noise, SNR per channel."""
    lines = [f"{result.variable},channel,s,d,wavelength_nm,signal_mW,noise_mW,snr_dB,sensitivity_ok"]
    for s in result.samples:
        if s.report is None:
            continue
        for row, label in zip(s.report.channels, s.channel_labels):
            lines.append(",".join(_fmt(v) for v in (
                s.knob, label, row.source, row.destination, row.wavelength, row.signal, row.noise,
                row.snr_db, row.sensitivity_ok)))
    Path(path).write_text("\n".join(lines) + "\n")


def write_scenarios_csv(rows: Sequence[ScenarioRow], path: str | Path) -> None:
    head = "scenario,variant,ring_length_mm,p_chip_mW,min_T_C,max_T_C,spread_C,max_gradient_C,worst_snr_dB"
    lines = [head] + [
        ",".join(_fmt(v) for v in (r.scenario, r.variant, r.ring_length_mm, r.p_chip, r.min_temperature,
                                   r.max_temperature, r.spread, r.max_gradient, r.worst_snr))
        for r in rows
    ]
    Path(path).write_text("\n".join(lines) + "\n")


def summary(result: ExplorationResult) -> dict:
    """Arg-min of the worst gradient, best SNR sample and flag counts."""
    s = result.samples
    best_grad = min(s, key=lambda x: (x.max_gradient, x.knob))
    with_snr = [x for x in s if x.worst_snr is not None]
    best_snr = max(with_snr, key=lambda x: (x.worst_snr, -x.knob)) if with_snr else None
    flags = {k: sum(1 for x in s if x.flags.get(k)) for k in ("gradient_ok", "sensitivity_ok", "snr_ok")}
    return {
        "variable": result.variable,
        "samples": len(s),
        "argmin_gradient": {"knob": best_grad.knob, "max_gradient_C": best_grad.max_gradient},
        "argmax_worst_snr": None if best_snr is None else {"knob": best_snr.knob, "worst_snr_dB": best_snr.worst_snr},
        "samples_passing": flags,
        "limits": {"gradient_C": result.limits.gradient, "snr_dB": result.limits.snr_db,
                   "sensitivity_mW": result.limits.sensitivity},
        "notes": list(result.notes),
    }


def write_summary_json(data: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
