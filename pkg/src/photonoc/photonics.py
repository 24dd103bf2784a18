"""Temperature-dependent models of the VCSEL, the microring filter and the
thermo-optic drift, plus small dBm helpers."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np


def mw_to_dbm(p_mw: float) -> float:
    return 10.0 * math.log10(p_mw)


def dbm_to_mw(p_dbm: float) -> float:
    return 10.0 ** (p_dbm / 10.0)


def db_to_factor(loss_db: float) -> float:
    """Power transmission of a ``loss_db`` attenuation."""
    return 10.0 ** (-loss_db / 10.0)


# default efficiency anchors: (T °C, I mA, eta)
DEFAULT_EFFICIENCY_TABLE = ((40.0, 2.4, 0.15), (60.0, 2.4, 0.04))


@dataclass(frozen=True)
class VcselModel:
    """Laser efficiency table and optical constants.

    ``efficiency_table`` rows are ``(temperature °C, current mA, efficiency)``.
    Electrical power is ``current * forward_voltage`` unless given directly.
    """

    efficiency_table: tuple[tuple[float, float, float], ...] = DEFAULT_EFFICIENCY_TABLE
    coupling_efficiency: float = 0.70
    nominal_wavelength: float = 1550.0  # nm at the reference temperature
    linewidth: float = 0.1  # nm, 3 dB
    modulation_bandwidth: float = 12.0  # GHz, informational
    forward_voltage: float = 1.5  # V

    def __post_init__(self) -> None:
        table = tuple(tuple(float(v) for v in row) for row in self.efficiency_table)
        object.__setattr__(self, "efficiency_table", table)
        if not 0.0 <= self.coupling_efficiency <= 1.0:
            raise ValueError("coupling efficiency must lie in [0, 1]")
        for t, i, eta in table:
            if not 0.0 <= eta < 1.0:
                raise ValueError(f"efficiency {eta} at ({t} °C, {i} mA) is outside [0, 1)")
        for current, temps, etas in self.curves():
            if np.any(np.diff(temps) <= 0):
                raise ValueError(f"table temperatures must strictly increase at {current} mA")

    def curves(self) -> list[tuple[float, np.ndarray, np.ndarray]]:
        """Per-current (temperatures, efficiencies), sorted by current."""
        rows = sorted(self.efficiency_table, key=lambda r: (r[1], r[0]))
        out: dict[float, list[tuple[float, float]]] = {}
        for t, i, eta in rows:
            out.setdefault(i, []).append((t, eta))
        return [
            (i, np.array([p[0] for p in pts]), np.array([p[1] for p in pts]))
            for i, pts in sorted(out.items())
        ]

    def electrical_power(self, current_ma: float) -> float:
        return current_ma * self.forward_voltage  # mA * V = mW

    @property
    def reference_current(self) -> float:
        return self.curves()[0][0]

    @classmethod
    def from_csv(cls, path: str | Path, **kwargs) -> VcselModel:
        """Efficiency table from CSV rows ``T_C,I_mA,eta`` (header optional)."""
        rows = []
        with open(path) as fh:
            for n, line in enumerate(fh, 1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                parts = [p.strip() for p in line.split(",")]
                try:
                    rows.append(tuple(float(p) for p in parts[:3]))
                except ValueError:
                    if n == 1:
                        continue  # header
                    raise ValueError(f"{path}:{n}: cannot parse {line!r}") from None
        return cls(efficiency_table=tuple(rows), **kwargs)


def vcsel_efficiency(model: VcselModel, temperature: float, current: float) -> float:
    """Laser efficiency at ``temperature`` (°C) and ``current`` (mA).

    Linear in temperature along each current's curve, then linear in current
    between the bracketing curves; both directions clamp at the table edges.
    """
    curves = model.curves()
    if not curves:
        raise ValueError("empty efficiency table")
    currents = np.array([c[0] for c in curves])
    at_t = np.array([np.interp(temperature, temps, etas) for _, temps, etas in curves])
    if len(curves) == 1:
        return float(at_t[0])
    return float(np.interp(current, currents, at_t))


@dataclass(frozen=True)
class ThermoOpticModel:
    sensitivity: float = 0.1  # nm/°C
    reference_temperature: float = 25.0  # °C

    def __post_init__(self) -> None:
        if not self.sensitivity > 0:
            raise ValueError("thermo-optic sensitivity must be > 0")


def wavelength_at(model: ThermoOpticModel, nominal: float, temperature: float) -> float:
    """Red-shifted wavelength (nm) of a device designed for ``nominal`` nm."""
    return nominal + model.sensitivity * (temperature - model.reference_temperature)


@dataclass(frozen=True)
class MrModel:
    nominal_resonance: float = 1550.0  # nm at the reference temperature
    bandwidth: float = 1.55  # nm, 3 dB full width
    peak_drop: float = 1.0

    def __post_init__(self) -> None:
        if not self.bandwidth > 0:
            raise ValueError("MR bandwidth must be > 0")
        if not 0.0 < self.peak_drop <= 1.0:
            raise ValueError("peak drop must lie in (0, 1]")


def mr_drop_ratio(model: MrModel, misalignment: float) -> float:
    """Fraction of a narrow-line signal sent to the drop port.

    First-order Lorentzian of full width ``model.bandwidth``; the rest goes to
    the through port (the ring itself is lossless).
    """
    u = 2.0 * misalignment / model.bandwidth
    return model.peak_drop / (1.0 + u * u)


def mr_through_ratio(model: MrModel, misalignment: float) -> float:
    return 1.0 - mr_drop_ratio(model, misalignment)


@dataclass(frozen=True)
class VcselOperatingPoint:
    temperature: float  # °C
    efficiency: float
    electrical_power: float  # mW
    dissipated_power: float  # mW
    optical_power: float  # OP_VCSEL, mW
    network_power: float  # OP_net, mW
    iterations: int = 0


class OperatingPointError(RuntimeError):
    def __init__(self, message: str, last: tuple[float, float]):
        super().__init__(message)
        self.last = last


HEAT_POLICIES = ("efficiency", "worst_case")


def operating_point_at(model: VcselModel, temperature: float, current: float,
                       electrical_power: float | None = None, *, policy: str = "efficiency",
                       iterations: int = 0) -> VcselOperatingPoint:
    """Operating point for a known laser temperature."""
    p_elec = model.electrical_power(current) if electrical_power is None else electrical_power
    eta = vcsel_efficiency(model, temperature, current)
    optical = eta * p_elec
    heat = p_elec if policy == "worst_case" else p_elec - optical
    return VcselOperatingPoint(
        temperature, eta, p_elec, heat, optical, model.coupling_efficiency * optical, iterations
    )


def vcsel_operating_point(
    model: VcselModel,
    current: float,
    local_temperature: Callable[[float], float],
    tol: float = 0.01,
    *,
    policy: str = "efficiency",
    electrical_power: float | None = None,
    damping: float = 0.5,
    max_iterations: int = 100,
    initial_temperature: float | None = None,
) -> VcselOperatingPoint:
    """Self-consistent laser temperature.

    ``local_temperature(p)`` returns the laser temperature when it dissipates
    ``p`` mW. Under ``policy="efficiency"`` the dissipated power is
    ``P_elec * (1 - eta(T))`` and the map is iterated with damping until two
    successive temperatures differ by at most ``tol``; ``"worst_case"``
    dissipates all of ``P_elec`` and needs a single evaluation.
    """
    if policy not in HEAT_POLICIES:
        raise ValueError(f"unknown heat policy {policy!r}")
    if not tol > 0:
        raise ValueError("tol must be > 0")
    if not model.curves():
        raise ValueError("empty efficiency table")
    p_elec = model.electrical_power(current) if electrical_power is None else electrical_power

    if policy == "worst_case":
        t = float(local_temperature(p_elec))
        return operating_point_at(model, t, current, p_elec, policy=policy, iterations=1)

    def heat(t: float) -> float:
        return p_elec * (1.0 - vcsel_efficiency(model, t, current))

    guess = model.curves()[0][1][0] if initial_temperature is None else initial_temperature
    t = float(local_temperature(heat(guess)))
    for it in range(1, max_iterations + 1):
        t_new = float(local_temperature(heat(t)))
        if abs(t_new - t) <= tol:
            return operating_point_at(model, t_new, current, p_elec, policy=policy, iterations=it)
        t = t + damping * (t_new - t)
    raise OperatingPointError(
        f"laser temperature did not converge in {max_iterations} iterations "
        f"(last iterates {t:.4f} / {t_new:.4f} °C)",
        (t, t_new),
    )


def emitted_power(op: VcselOperatingPoint) -> tuple[float, float]:
    """(OP_VCSEL, OP_net) in mW."""
    return op.optical_power, op.network_power
