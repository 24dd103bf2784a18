"""
Signal and crosstalk propagation around a wavelength-routed waveguide ring.

A channel's light leaves its source ONI, loses power exponentially along each
ring segment and meets the receiver microrings of the ONIs it passes.  Every
ring drops the fraction given by its Lorentzian response at the current
misalignment and lets the rest through.  Power dropped by a ring that does not
belong to the channel is crosstalk for that ring's own channel.

By default the march covers the whole ring: the light keeps travelling past
its destination and whatever is left when it returns to the source ONI is
recorded as residual.  ``terminate_at_destination=True`` stops it right after
the intended receiver instead.

:func:`propagate_channel` evaluates the attenuation products in closed form
with numpy; :func:`oracle_propagate` replays the same physics one event at a
time in exact rational arithmetic and serves as a cross-check.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .photonics import MrModel, ThermoOpticModel, mw_to_dbm, wavelength_at

NOISE_FLOOR_MW = 1e-12
SNR_CEILING_DB = 120.0
SENSITIVITY_MW = 0.01  # -20 dBm


@dataclass(frozen=True)
class Channel:
    """Point-to-point link ``source -> destination`` on one waveguide.

    ``power`` is the optical power injected into the waveguide (mW).
    ``rx_position`` orders receivers inside the destination ONI along the
    propagation direction; ties fall back to the source id.
    """

    source: int
    destination: int
    wavelength: float  # nm at the reference temperature
    power: float = 1.0
    rx_position: int = 0
    name: str = ""

    def __post_init__(self) -> None:
        if self.source == self.destination:
            raise ValueError(f"channel {self.name or ''} has source == destination ({self.source})")
        if self.power < 0:
            raise ValueError("injected power must be >= 0")
        if not self.wavelength > 0:
            raise ValueError("wavelength must be > 0")

    @property
    def label(self) -> str:
        return self.name or f"{self.source}->{self.destination}@{self.wavelength:g}"


@dataclass(frozen=True)
class RingNetwork:
    """One unidirectional waveguide ring and the channels it carries.

    Parameters
    ----------
    order
        ONI ids in propagation order; segment ``k`` runs from ``order[k]`` to
        ``order[(k + 1) % N]``.
    segment_lengths
        Length of each segment in cm.
    temperatures
        ONI id -> temperature (°C) used for both lasers and rings.
    laser_temperatures, ring_temperatures
        Optional per-ONI overrides for the transmitters and receivers.
    """

    order: tuple[int, ...]
    segment_lengths: tuple[float, ...]
    channels: tuple[Channel, ...]
    temperatures: Mapping[int, float] = field(default_factory=dict)
    loss_db_per_cm: float = 0.5
    mr: MrModel = field(default_factory=MrModel)
    thermo: ThermoOpticModel = field(default_factory=ThermoOpticModel)
    laser_temperatures: Mapping[int, float] | None = None
    ring_temperatures: Mapping[int, float] | None = None
    terminate_at_destination: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "order", tuple(int(o) for o in self.order))
        object.__setattr__(self, "segment_lengths", tuple(float(v) for v in self.segment_lengths))
        object.__setattr__(self, "channels", tuple(self.channels))
        n = len(self.order)
        if n < 2:
            raise ValueError("a ring needs at least two ONIs")
        if len(set(self.order)) != n:
            raise ValueError("ONI ids repeat in the ring order")
        if len(self.segment_lengths) != n:
            raise ValueError(f"expected {n} segment lengths, got {len(self.segment_lengths)}")
        if any(v < 0 for v in self.segment_lengths):
            raise ValueError("segment lengths must be >= 0")
        if self.loss_db_per_cm < 0:
            raise ValueError("propagation loss must be >= 0")
        members = set(self.order)
        for c in self.channels:
            if c.source not in members or c.destination not in members:
                raise ValueError(f"channel {c.label} references an ONI outside the ring")
        _check_reuse(self)

    @property
    def n_onis(self) -> int:
        return len(self.order)

    @property
    def length_cm(self) -> float:
        return math.fsum(self.segment_lengths)

    def position(self, oni: int) -> int:
        return self.order.index(oni)

    def segments_of(self, c: Channel) -> list[int]:
        """Segment indices a channel occupies between source and destination."""
        n = self.n_onis
        start, stop = self.position(c.source), self.position(c.destination)
        return [(start + k) % n for k in range((stop - start) % n)]

    def receivers_at(self, oni: int) -> list[int]:
        """Indices of the channels whose receiver sits at ``oni``, in layout order."""
        idx = [i for i, c in enumerate(self.channels) if c.destination == oni]
        return sorted(idx, key=lambda i: (self.channels[i].rx_position, self.channels[i].source, i))

    def _temperature(self, table: Mapping[int, float] | None, oni: int, role: str) -> float:
        if table is not None and oni in table:
            return float(table[oni])
        if oni not in self.temperatures:
            raise KeyError(f"no {role} temperature for ONI {oni}")
        return float(self.temperatures[oni])

    def laser_temperature(self, oni: int) -> float:
        return self._temperature(self.laser_temperatures, oni, "laser")

    def ring_temperature(self, oni: int) -> float:
        return self._temperature(self.ring_temperatures, oni, "ring")

    def signal_wavelength(self, c: Channel) -> float:
        return wavelength_at(self.thermo, c.wavelength, self.laser_temperature(c.source))

    def resonance(self, receiver: int) -> float:
        c = self.channels[receiver]
        return wavelength_at(self.thermo, c.wavelength, self.ring_temperature(c.destination))


def _check_reuse(net: RingNetwork) -> None:
    used: dict[float, dict[int, str]] = {}
    for c in net.channels:
        seen = used.setdefault(round(c.wavelength, 9), {})
        for seg in net.segments_of(c):
            if seg in seen:
                raise ValueError(
                    f"channels {seen[seg]} and {c.label} share wavelength {c.wavelength:g} nm "
                    f"on segment {seg}"
                )
            seen[seg] = c.label


@dataclass(frozen=True)
class PowerLedger:
    """Where one channel's injected power ends up (all mW).

    ``drops`` holds ``(receiver channel index, oni, power)`` in march order;
    ``segment_losses`` the power dissipated along each traversed segment.
    """

    channel: int
    injected: float
    drops: tuple[tuple[int, int, float], ...]
    segment_losses: tuple[float, ...]
    residual: float

    @property
    def dropped(self) -> float:
        return math.fsum(p for _, _, p in self.drops)

    @property
    def dissipated(self) -> float:
        return math.fsum(self.segment_losses)

    def drop_at(self, receiver: int) -> float:
        return math.fsum(p for r, _, p in self.drops if r == receiver)

    def conservation_error(self) -> float:
        """|injected - (drops + dissipation + residual)| relative to ``injected``."""
        total = math.fsum([self.dropped, self.dissipated, self.residual])
        if self.injected == 0:
            return abs(total)
        return abs(self.injected - total) / self.injected


def _march(net: RingNetwork, index: int) -> list[tuple[str, int, int]]:
    """Event list of a channel: ('seg', k, -) and ('mr', oni, receiver)."""
    c = net.channels[index]
    n = net.n_onis
    start = net.position(c.source)
    events: list[tuple[str, int, int]] = []
    for hop in range(1, n + 1):
        events.append(("seg", (start + hop - 1) % n, -1))
        oni = net.order[(start + hop) % n]
        if oni == c.source:
            break
        for r in net.receivers_at(oni):
            events.append(("mr", oni, r))
            if net.terminate_at_destination and r == index:
                return events
    return events


def propagate_channel(net: RingNetwork, c: Channel | int) -> PowerLedger:
    """Closed-form power budget of channel ``c`` (instance or index)."""
    index = net.channels.index(c) if isinstance(c, Channel) else int(c)
    ch = net.channels[index]
    events = _march(net, index)
    lam = net.signal_wavelength(ch)

    factors = np.empty(len(events))
    for j, (kind, a, r) in enumerate(events):
        if kind == "seg":
            factors[j] = 10.0 ** (-net.loss_db_per_cm * net.segment_lengths[a] / 10.0)
        else:
            u = 2.0 * (lam - net.resonance(r)) / net.mr.bandwidth
            factors[j] = 1.0 - net.mr.peak_drop / (1.0 + u * u)
    # power entering each event, then the part each event removes
    entering = ch.power * np.concatenate(([1.0], np.cumprod(factors)[:-1]))
    removed = entering * (1.0 - factors)
    residual = float(ch.power * np.prod(factors))

    drops, losses = [], []
    for (kind, a, r), p in zip(events, removed):
        if kind == "seg":
            losses.append(float(p))
        else:
            drops.append((r, a, float(p)))
    return PowerLedger(index, ch.power, tuple(drops), tuple(losses), residual)


def oracle_propagate(net: RingNetwork, c: Channel | int) -> PowerLedger:
    """Event-by-event replay of :func:`propagate_channel` in exact rationals.

    Walks the ring one ONI at a time, carrying the power as a
    :class:`fractions.Fraction`; every float input enters exactly and every
    drop, through and loss is an exact product, so the ledger balances to
    the last bit before the final conversion.
    """
    index = net.channels.index(c) if isinstance(c, Channel) else int(c)
    ch = net.channels[index]
    sens = Fraction(net.thermo.sensitivity)
    t_ref = Fraction(net.thermo.reference_temperature)
    bw = Fraction(net.mr.bandwidth)
    peak = Fraction(net.mr.peak_drop)

    def shifted(nominal: float, temperature: float) -> Fraction:
        return Fraction(nominal) + sens * (Fraction(temperature) - t_ref)

    lam = shifted(ch.wavelength, net.laser_temperature(ch.source))
    power = Fraction(ch.power)
    drops: list[tuple[int, int, Fraction]] = []
    losses: list[Fraction] = []

    n = len(net.order)
    here = net.order.index(ch.source)
    while True:
        length = net.segment_lengths[here]
        keep = Fraction(math.pow(10.0, -(net.loss_db_per_cm * length) / 10.0))
        losses.append(power * (1 - keep))
        power *= keep
        here = (here + 1) % n
        oni = net.order[here]
        if oni == ch.source:
            break
        waiting = [
            (other.rx_position, other.source, i)
            for i, other in enumerate(net.channels)
            if other.destination == oni
        ]
        stop = False
        for _, _, r in sorted(waiting):
            rc = net.channels[r]
            delta = lam - shifted(rc.wavelength, net.ring_temperature(rc.destination))
            x = 2 * delta / bw
            dropped = power * peak / (1 + x * x)
            drops.append((r, oni, dropped))
            power -= dropped
            if net.terminate_at_destination and r == index:
                stop = True
                break
        if stop:
            break

    assert Fraction(ch.power) == sum(p for _, _, p in drops) + sum(losses) + power
    return PowerLedger(
        index,
        ch.power,
        tuple((r, o, float(p)) for r, o, p in drops),
        tuple(float(p) for p in losses),
        float(power),
    )


def ledgers_match(a: PowerLedger, b: PowerLedger, rtol: float = 1e-9) -> bool:
    """True when two ledgers record the same events to ``rtol`` of the injected power."""
    scale = max(a.injected, b.injected, 1e-300)
    if len(a.drops) != len(b.drops) or len(a.segment_losses) != len(b.segment_losses):
        return False
    for (ra, oa, pa), (rb, ob, pb) in zip(a.drops, b.drops):
        if ra != rb or oa != ob or abs(pa - pb) > rtol * scale:
            return False
    for pa, pb in zip(a.segment_losses, b.segment_losses):
        if abs(pa - pb) > rtol * scale:
            return False
    return abs(a.residual - b.residual) <= rtol * scale


def propagate_all(net: RingNetwork) -> list[PowerLedger]:
    return [propagate_channel(net, i) for i in range(len(net.channels))]


def crosstalk_matrix(net: RingNetwork, ledgers: Sequence[PowerLedger] | None = None) -> np.ndarray:
    """``X[r, c]``: power (mW) channel ``c`` delivers to the receiver of channel ``r``.

    The diagonal is the useful signal; the off-diagonal row sum is the noise.
    """
    ledgers = propagate_all(net) if ledgers is None else ledgers
    m = len(net.channels)
    x = np.zeros((m, m))
    for led in ledgers:
        for r, _, p in led.drops:
            x[r, led.channel] += p
    return x


def noise_power(x: np.ndarray) -> np.ndarray:
    """Off-diagonal row sums of a crosstalk matrix (compensated summation)."""
    return np.array(
        [math.fsum(np.delete(row, r)) for r, row in enumerate(x)], dtype=float
    )


@dataclass(frozen=True)
class ChannelSnr:
    channel: int
    source: int
    destination: int
    wavelength: float
    signal: float  # mW at the intended photodetector
    noise: float  # mW, summed crosstalk
    snr_db: float | None  # None when the link delivers no signal
    noise_free: bool
    sensitivity_ok: bool

    @property
    def broken(self) -> bool:
        return self.snr_db is None


@dataclass(frozen=True)
class SnrReport:
    channels: tuple[ChannelSnr, ...]
    ledgers: tuple[PowerLedger, ...] = field(repr=False, default=())

    @property
    def worst_snr(self) -> float | None:
        """Minimum SNR over the channels (None if every link is broken)."""
        vals = [c.snr_db for c in self.channels if c.snr_db is not None]
        return min(vals) if vals else None

    @property
    def broken(self) -> list[int]:
        return [c.channel for c in self.channels if c.broken]

    @property
    def all_sensitive(self) -> bool:
        return all(c.sensitivity_ok for c in self.channels)

    def worst_channel(self) -> ChannelSnr | None:
        ok = [c for c in self.channels if c.snr_db is not None]
        return min(ok, key=lambda c: (c.snr_db, c.channel)) if ok else None


def snr_db(
    signal: float,
    noise: float,
    *,
    floor: float = NOISE_FLOOR_MW,
    ceiling: float = SNR_CEILING_DB,
) -> float | None:
    """SNR in dB; ``ceiling`` below the noise floor, None for a dead link."""
    if signal <= 0.0:
        return None
    if noise < floor:
        return ceiling
    return min(ceiling, 10.0 * math.log10(signal / noise))


def snr(
    net: RingNetwork,
    *,
    floor: float = NOISE_FLOOR_MW,
    ceiling: float = SNR_CEILING_DB,
    sensitivity: float = SENSITIVITY_MW,
) -> SnrReport:
    """Per-channel signal, crosstalk noise and SNR of ``net``."""
    ledgers = propagate_all(net)
    x = crosstalk_matrix(net, ledgers)
    noise = noise_power(x)
    rows = []
    for i, c in enumerate(net.channels):
        signal = float(x[i, i])
        rows.append(
            ChannelSnr(
                i,
                c.source,
                c.destination,
                c.wavelength,
                signal,
                float(noise[i]),
                snr_db(signal, noise[i], floor=floor, ceiling=ceiling),
                noise[i] < floor,
                # the threshold itself counts as detectable
                signal >= sensitivity * (1.0 - 1e-12),
            )
        )
    return SnrReport(tuple(rows), tuple(ledgers))


def write_snr_csv(report: SnrReport, path: str | Path, labels: Sequence[str] | None = None) -> None:
    """Columns: channel, s, d, wavelength_nm, signal_mW, noise_mW, snr_dB, sensitivity_ok."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["channel", "s", "d", "wavelength_nm", "signal_mW", "noise_mW", "snr_dB",
                    "sensitivity_ok"])
        for row in report.channels:
            name = labels[row.channel] if labels else str(row.channel)
            w.writerow([
                name,
                row.source,
                row.destination,
                f"{row.wavelength:.4f}",
                f"{row.signal:.9e}",
                f"{row.noise:.9e}",
                "" if row.snr_db is None else f"{row.snr_db:.6f}",
                int(row.sensitivity_ok),
            ])


def write_ledger_csv(ledgers: Sequence[PowerLedger], path: str | Path) -> None:
    """Debug dump: one row per event (drop, segment loss or residual)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["channel", "event", "where", "power_mW"])
        for led in ledgers:
            w.writerow([led.channel, "inject", "", f"{led.injected:.12e}"])
            for k, p in enumerate(led.segment_losses):
                w.writerow([led.channel, "segment", k, f"{p:.12e}"])
            for r, oni, p in led.drops:
                w.writerow([led.channel, f"drop:{r}", oni, f"{p:.12e}"])
            w.writerow([led.channel, "residual", "", f"{led.residual:.12e}"])


# ---------------------------------------------------------------------------
# default channel plan


def hop_plan(directions: Sequence[str], per_waveguide: int = 4) -> list[tuple[int, ...]]:
    """Hop distances served by each waveguide: 1 .. ``per_waveguide``.

    Every ONI then sends to, and receives from, its ``per_waveguide``
    nearest neighbours in the waveguide's direction.  Two waveguides
    running the same way carry parallel lanes of the same pairs.
    """
    return [tuple(range(1, per_waveguide + 1)) for _ in directions]


def assign_wavelengths(
    order: Sequence[int],
    pairs: Sequence[tuple[int, int]],
    *,
    base: float = 1530.0,
    spacing: float = 4.0,
) -> list[float]:
    """First-fit wavelengths: a grid slot is reused only on disjoint segments."""
    n = len(order)
    pos = {o: i for i, o in enumerate(order)}
    busy: list[set[int]] = []
    out = []
    for s, d in pairs:
        segs = {(pos[s] + k) % n for k in range((pos[d] - pos[s]) % n)}
        for slot, taken in enumerate(busy):
            if not taken & segs:
                taken |= segs
                break
        else:
            busy.append(set(segs))
            slot = len(busy) - 1
        out.append(base + spacing * slot)
    return out


def default_channels(
    order: Sequence[int],
    hops: Sequence[int],
    *,
    power: float | Mapping[int, float] = 1.0,
    base: float = 1530.0,
    spacing: float = 4.0,
) -> list[Channel]:
    """Every ONI talks to the ONIs ``hops`` positions downstream.

    Each ONI then receives exactly ``len(hops)`` channels; the receiver
    nearest the waveguide entry serves the shortest hop.
    """
    n = len(order)
    if any(h <= 0 or h >= n for h in hops):
        raise ValueError(f"hops must lie in 1..{n - 1}")
    pairs, meta = [], []
    for i, s in enumerate(order):
        for rank, h in enumerate(sorted(hops)):
            pairs.append((s, order[(i + h) % n]))
            meta.append(rank)
    lams = assign_wavelengths(order, pairs, base=base, spacing=spacing)
    out = []
    for (s, d), lam, rank in zip(pairs, lams, meta):
        p = power[s] if isinstance(power, Mapping) else power
        out.append(Channel(s, d, lam, p, rx_position=rank, name=f"{s}->{d}"))
    return out


def segment_lengths_cm(order: Sequence[int], positions: Mapping[int, tuple[float, float]]) -> list[float]:
    """Rectilinear distance (cm) between consecutive ONIs, closing the ring."""
    out = []
    for a, b in zip(order, list(order[1:]) + [order[0]]):
        (xa, ya), (xb, yb) = positions[a], positions[b]
        out.append((abs(xb - xa) + abs(yb - ya)) * 1e-4)
    return out


def dbm(p_mw: float) -> float:
    return mw_to_dbm(p_mw) if p_mw > 0 else -math.inf
