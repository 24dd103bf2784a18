"""
Physical description of the chip package, the optical layer and its ONIs.

Everything here is expressed in µm, mW and °C.  A :class:`ChipStack` is an
ordered list of :class:`Layer` objects stacked along +z; every layer is
completely tiled by rectangular :class:`Block` objects (gaps are either filled
with the layer's ``fill`` material or rejected).  Heat sources are blocks with
a non-zero power: processor tiles in the die BEOL (tag ``"source"``) and the
optical-interface devices (tag ``"device"``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

GEOM_TOL = 1e-6  # µm

BLOCK_TAGS = ("passive", "source", "device", "fill")
DEVICE_KINDS = ("VCSEL", "MR", "Photodetector", "Driver", "TSV", "Heater")
FACES = ("xmin", "xmax", "ymin", "ymax", "zmin", "zmax")


class GeometryError(ValueError):
    """Inconsistent stack geometry (overlap, gap, zero thickness...)."""


class ConfigError(ValueError):
    """Invalid configuration; the message names the file and table."""


@dataclass(frozen=True)
class Material:
    name: str
    thermal_conductivity: float  # W/(m·°C)

    def __post_init__(self) -> None:
        if not self.thermal_conductivity > 0:
            raise ValueError(
                f"material {self.name!r}: conductivity must be > 0, "
                f"got {self.thermal_conductivity}"
            )


@dataclass(frozen=True)
class Block:
    """Axis-aligned box with absolute coordinates (µm) and a power (mW)."""

    name: str
    origin: tuple[float, float, float]
    size: tuple[float, float, float]
    material: str
    power: float = 0.0
    tag: str = "passive"

    def __post_init__(self) -> None:
        if len(self.origin) != 3 or len(self.size) != 3:
            raise GeometryError(f"block {self.name!r}: origin/size must be 3-vectors")
        if min(self.size) <= 0:
            raise GeometryError(f"block {self.name!r}: all dimensions must be > 0, got {self.size}")
        if self.power < 0:
            raise GeometryError(f"block {self.name!r}: power must be >= 0, got {self.power}")
        if self.tag not in BLOCK_TAGS:
            raise GeometryError(f"block {self.name!r}: unknown tag {self.tag!r}")

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.origin, dtype=float)

    @property
    def hi(self) -> np.ndarray:
        return np.asarray(self.origin, dtype=float) + np.asarray(self.size, dtype=float)

    @property
    def centroid(self) -> tuple[float, float, float]:
        return tuple(o + s / 2.0 for o, s in zip(self.origin, self.size))

    @property
    def volume(self) -> float:
        return self.size[0] * self.size[1] * self.size[2]

    def with_power(self, power: float) -> Block:
        return replace(self, power=float(power))


@dataclass(frozen=True)
class Layer:
    name: str
    z0: float
    thickness: float
    blocks: tuple[Block, ...]
    resolution: str = "package"  # fine | source | package
    dz: float | None = None  # max cell size along z, µm
    role: str = ""  # "die" marks the processing layer

    @property
    def z1(self) -> float:
        return self.z0 + self.thickness


@dataclass(frozen=True)
class FaceCondition:
    kind: str = "adiabatic"  # adiabatic | convective | fixed
    h: float = 0.0  # W/(m²·°C), convective only
    temperature: float | None = None  # °C, fixed only

    def __post_init__(self) -> None:
        if self.kind not in ("adiabatic", "convective", "fixed"):
            raise ValueError(f"unknown boundary kind {self.kind!r}")
        if self.kind == "convective" and not self.h > 0:
            raise ValueError("convective boundary needs h > 0")
        if self.kind == "fixed" and self.temperature is None:
            raise ValueError("fixed boundary needs a temperature")


@dataclass(frozen=True)
class Boundary:
    """Per-face thermal condition; unspecified faces are adiabatic."""

    faces: Mapping[str, FaceCondition] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for name in self.faces:
            if name not in FACES:
                raise ValueError(f"unknown face {name!r}; expected one of {FACES}")

    def face(self, name: str) -> FaceCondition:
        return self.faces.get(name, FaceCondition())

    @property
    def is_adiabatic(self) -> bool:
        return all(self.face(f).kind == "adiabatic" for f in FACES)

    @classmethod
    def heat_sink(cls, h: float) -> Boundary:
        return cls({"zmax": FaceCondition("convective", h=h)})


@dataclass(frozen=True)
class Device:
    kind: str
    block: Block
    oni_id: int
    track: int = 0
    slot: int = 0

    def __post_init__(self) -> None:
        if self.kind not in DEVICE_KINDS:
            raise ValueError(f"unknown device kind {self.kind!r}")

    @property
    def dissipated_power(self) -> float:
        return self.block.power

    @property
    def name(self) -> str:
        return self.block.name


@dataclass(frozen=True)
class OniLayout:
    oni_id: int
    position: tuple[float, float]  # ONI bounding-box centre, µm
    bbox: tuple[float, float, float, float]  # xmin, ymin, xmax, ymax
    devices: tuple[Device, ...]

    def of_kind(self, kind: str) -> list[Device]:
        return [d for d in self.devices if d.kind == kind]


@dataclass(frozen=True)
class ChipStack:
    materials: Mapping[str, Material]
    layers: tuple[Layer, ...]
    ambient_temperature: float
    boundary: Boundary
    onis: tuple[OniLayout, ...] = ()

    @property
    def blocks(self) -> list[Block]:
        return [b for layer in self.layers for b in layer.blocks]

    @property
    def devices(self) -> list[Device]:
        return [d for oni in self.onis for d in oni.devices]

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        blocks = self.blocks
        lo = np.min([b.lo for b in blocks], axis=0)
        hi = np.max([b.hi for b in blocks], axis=0)
        return lo, hi

    def layer(self, name: str) -> Layer:
        for layer in self.layers:
            if layer.name == name:
                return layer
        raise KeyError(f"no layer named {name!r}")

    @property
    def die_layer(self) -> Layer | None:
        for layer in self.layers:
            if layer.role == "die":
                return layer
        return None

    def source_blocks(self) -> list[Block]:
        """Heat-source blocks of the processing (die) layer."""
        die = self.die_layer
        layers = [die] if die is not None else self.layers
        return [b for layer in layers for b in layer.blocks if b.tag == "source"]

    @property
    def p_chip(self) -> float:
        return math.fsum(b.power for b in self.source_blocks())

    def block(self, name: str) -> Block:
        for b in self.blocks:
            if b.name == name:
                return b
        raise KeyError(name)


# ---------------------------------------------------------------------------
# geometry helpers


def _overlap_pairs(blocks: Sequence[Block]) -> list[tuple[int, int]]:
    if len(blocks) < 2:
        return []
    lo = np.array([b.origin for b in blocks], dtype=float)
    hi = lo + np.array([b.size for b in blocks], dtype=float)
    order = np.argsort(lo[:, 0], kind="stable")
    lo, hi = lo[order], hi[order]
    pairs = []
    # sweep along x: only blocks whose x-range starts before hi_x can intersect
    starts = lo[:, 0]
    for a in range(len(blocks)):
        stop = np.searchsorted(starts, hi[a, 0] - GEOM_TOL, side="left")
        if stop <= a + 1:
            continue
        cand = np.arange(a + 1, stop)
        inter = np.all(
            (np.minimum(hi[a], hi[cand]) - np.maximum(lo[a], lo[cand])) > GEOM_TOL, axis=1
        )
        for c in cand[inter]:
            pairs.append((int(order[a]), int(order[c])))
    return pairs


def _fill_rectangles(
    lo: np.ndarray, hi: np.ndarray, boxes: Sequence[tuple[np.ndarray, np.ndarray]]
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Boxes covering the part of [lo, hi] not covered by ``boxes``.

    Works on the grid of all box edges: uncovered grid cells are merged into
    runs along y, and identical runs in neighbouring x-columns and z-slabs are
    merged again so the filler count stays small.
    """
    edges = []
    for ax in range(3):
        e = [lo[ax], hi[ax]]
        for b_lo, b_hi in boxes:
            e.extend((b_lo[ax], b_hi[ax]))
        e = np.unique(np.round(np.clip(e, lo[ax], hi[ax]), 6))
        edges.append(e)
    ex, ey, ez = edges
    covered = np.zeros((len(ex) - 1, len(ey) - 1, len(ez) - 1), dtype=bool)
    for b_lo, b_hi in boxes:
        sl = tuple(
            slice(
                np.searchsorted(edges[ax], round(b_lo[ax], 6), side="left"),
                np.searchsorted(edges[ax], round(b_hi[ax], 6), side="left"),
            )
            for ax in range(3)
        )
        covered[sl] = True

    # runs along y for each (x column, z slab)
    runs: dict[tuple[int, int], list[tuple[int, int]]] = {}
    for i in range(covered.shape[0]):
        for k in range(covered.shape[2]):
            col = ~covered[i, :, k]
            if not col.any():
                continue
            padded = np.concatenate(([False], col, [False]))
            d = np.diff(padded.astype(np.int8))
            starts = np.flatnonzero(d == 1)
            ends = np.flatnonzero(d == -1)
            runs[(i, k)] = list(zip(starts.tolist(), ends.tolist()))

    # merge identical runs over consecutive x columns, then over z slabs
    out: list[tuple[np.ndarray, np.ndarray]] = []
    spans: list[tuple[int, int, int, int, int]] = []  # i0, i1, j0, j1, k
    for k in range(covered.shape[2]):
        open_runs: dict[tuple[int, int], int] = {}
        for i in range(covered.shape[0] + 1):
            current = set(runs.get((i, k), [])) if i < covered.shape[0] else set()
            for key in list(open_runs):
                if key not in current:
                    spans.append((open_runs.pop(key), i, key[0], key[1], k))
            for key in current:
                open_runs.setdefault(key, i)
    spans.sort(key=lambda s: (s[0], s[1], s[2], s[3], s[4]))
    used = [False] * len(spans)
    index = {(s[0], s[1], s[2], s[3], s[4]): n for n, s in enumerate(spans)}
    for n, (i0, i1, j0, j1, k) in enumerate(spans):
        if used[n]:
            continue
        used[n] = True
        k1 = k + 1
        while (i0, i1, j0, j1, k1) in index and not used[index[(i0, i1, j0, j1, k1)]]:
            used[index[(i0, i1, j0, j1, k1)]] = True
            k1 += 1
        out.append(
            (
                np.array([ex[i0], ey[j0], ez[k]]),
                np.array([ex[i1], ey[j1], ez[k1]]),
            )
        )
    return out


def _check_layer(layer_name: str, lo: np.ndarray, hi: np.ndarray, blocks: Sequence[Block]) -> None:
    for b in blocks:
        if np.any(b.lo < lo - GEOM_TOL) or np.any(b.hi > hi + GEOM_TOL):
            raise GeometryError(f"layer {layer_name!r}: block {b.name!r} lies outside the layer box")
    pairs = _overlap_pairs(blocks)
    if pairs:
        a, c = pairs[0]
        raise GeometryError(
            f"layer {layer_name!r}: blocks {blocks[a].name!r} and {blocks[c].name!r} overlap"
            + (f" ({len(pairs)} overlapping pairs)" if len(pairs) > 1 else "")
        )
    volume = float(np.prod(hi - lo))
    covered = math.fsum(b.volume for b in blocks)
    if abs(covered - volume) > 1e-9 * volume + GEOM_TOL:
        raise GeometryError(
            f"layer {layer_name!r}: blocks do not tile the layer box "
            f"(covered {covered:.6g} of {volume:.6g} µm³)"
        )


# ---------------------------------------------------------------------------
# building


@dataclass(frozen=True)
class LayerSpec:
    """Unresolved layer: block z-coordinates are relative to the layer bottom."""

    name: str
    thickness: float
    blocks: tuple[Block, ...] = ()
    fill: str | None = None
    resolution: str = "package"
    dz: float | None = None
    role: str = ""


def assemble_stack(
    materials: Mapping[str, Material] | Iterable[Material],
    layers: Sequence[LayerSpec],
    *,
    footprint: tuple[float, float, float, float] | None = None,
    ambient_temperature: float = 25.0,
    boundary: Boundary | None = None,
    onis: Sequence[OniLayout] = (),
    device_layers: Mapping[str, Sequence[Block]] | None = None,
) -> ChipStack:
    """Resolve z-coordinates, add filler blocks and validate the stack.

    ``footprint`` is ``(xmin, ymin, xmax, ymax)``; by default it is the
    x/y bounding box of all blocks.  ``device_layers`` maps layer names to
    extra device blocks whose z is relative to that layer.
    """
    if not isinstance(materials, Mapping):
        materials = {m.name: m for m in materials}
    materials = dict(materials)
    if boundary is None:
        boundary = Boundary()
    if not layers:
        raise GeometryError("stack needs at least one layer")
    device_layers = dict(device_layers or {})
    unknown = set(device_layers) - {spec.name for spec in layers}
    if unknown:
        raise GeometryError(f"devices reference unknown layers {sorted(unknown)}")

    if footprint is None:
        all_blocks = [b for spec in layers for b in spec.blocks]
        all_blocks += [b for blocks in device_layers.values() for b in blocks]
        if not all_blocks:
            raise GeometryError("cannot infer a footprint from an empty stack")
        footprint = (
            min(b.origin[0] for b in all_blocks),
            min(b.origin[1] for b in all_blocks),
            max(b.origin[0] + b.size[0] for b in all_blocks),
            max(b.origin[1] + b.size[1] for b in all_blocks),
        )
    fx0, fy0, fx1, fy1 = footprint
    if fx1 - fx0 <= 0 or fy1 - fy0 <= 0:
        raise GeometryError(f"degenerate footprint {footprint}")

    names: set[str] = set()
    resolved = []
    z = 0.0
    for spec in layers:
        if not spec.thickness > 0:
            raise GeometryError(f"layer {spec.name!r} has zero thickness")
        lo = np.array([fx0, fy0, z])
        hi = np.array([fx1, fy1, z + spec.thickness])
        blocks = []
        for b in list(spec.blocks) + list(device_layers.get(spec.name, ())):
            if b.material not in materials:
                raise GeometryError(f"block {b.name!r} references undeclared material {b.material!r}")
            if b.name in names:
                raise GeometryError(f"duplicate block name {b.name!r}")
            names.add(b.name)
            blocks.append(replace(b, origin=(b.origin[0], b.origin[1], b.origin[2] + z)))
        if spec.fill is not None:
            if spec.fill not in materials:
                raise GeometryError(f"layer {spec.name!r} fill references undeclared material {spec.fill!r}")
            pairs = _overlap_pairs(blocks)
            if pairs:
                a, c = pairs[0]
                raise GeometryError(
                    f"layer {spec.name!r}: blocks {blocks[a].name!r} and {blocks[c].name!r} overlap"
                )
            rects = _fill_rectangles(lo, hi, [(b.lo, b.hi) for b in blocks])
            for n, (r_lo, r_hi) in enumerate(rects):
                blocks.append(
                    Block(
                        f"{spec.name}.fill{n}",
                        tuple(float(v) for v in r_lo),
                        tuple(float(v) for v in r_hi - r_lo),
                        spec.fill,
                        tag="fill",
                    )
                )
        if not blocks:
            raise GeometryError(f"layer {spec.name!r} is empty and has no fill material")
        _check_layer(spec.name, lo, hi, blocks)
        resolved.append(
            Layer(
                spec.name,
                z,
                spec.thickness,
                tuple(blocks),
                resolution=spec.resolution,
                dz=spec.dz,
                role=spec.role,
            )
        )
        z += spec.thickness

    stack = ChipStack(materials, tuple(resolved), float(ambient_temperature), boundary, tuple(onis))
    if boundary.is_adiabatic:
        raise GeometryError("all faces are adiabatic: at least one face must remove heat")
    return _relink_devices(stack)


def _relink_devices(stack: ChipStack) -> ChipStack:
    """Make the ONI device records point to the resolved (absolute) blocks."""
    if not stack.onis:
        return stack
    by_name = {b.name: b for b in stack.blocks}
    onis = []
    for oni in stack.onis:
        devices = tuple(replace(d, block=by_name[d.block.name]) for d in oni.devices)
        onis.append(replace(oni, devices=devices))
    return replace(stack, onis=tuple(onis))


def total_power(stack: ChipStack) -> float:
    """Sum of all block powers (die sources and devices), mW."""
    return math.fsum(b.power for b in stack.blocks)


def _map_blocks(stack: ChipStack, new_power: Mapping[str, float]) -> ChipStack:
    layers = []
    for layer in stack.layers:
        blocks = tuple(
            b.with_power(new_power[b.name]) if b.name in new_power else b for b in layer.blocks
        )
        layers.append(replace(layer, blocks=blocks))
    return _relink_devices(replace(stack, layers=tuple(layers)))


# ---------------------------------------------------------------------------
# activity scenarios


@dataclass(frozen=True)
class ActivityScenario:
    """Power assignment (mW) for die heat-source blocks, keyed by block name."""

    name: str
    powers: Mapping[str, float]

    def __post_init__(self) -> None:
        bad = {k: v for k, v in self.powers.items() if v < 0}
        if bad:
            raise ValueError(f"scenario {self.name!r}: negative powers {bad}")

    @property
    def total(self) -> float:
        return math.fsum(self.powers.values())


def _sources_or_raise(stack: ChipStack) -> list[Block]:
    blocks = stack.source_blocks()
    if not blocks:
        raise ValueError("stack has no die heat-source blocks")
    return blocks


def uniform_activity(stack: ChipStack, total_mw: float) -> ActivityScenario:
    blocks = _sources_or_raise(stack)
    each = total_mw / len(blocks)
    return ActivityScenario("uniform", {b.name: each for b in blocks})


def zero_activity(stack: ChipStack) -> ActivityScenario:
    return ActivityScenario("zero", {b.name: 0.0 for b in stack.source_blocks()})


def quadrant_of(stack: ChipStack, block: Block) -> str:
    """'ur', 'ul', 'bl' or 'br' from the block centroid w.r.t. the die centre."""
    blocks = _sources_or_raise(stack)
    x0 = min(b.origin[0] for b in blocks)
    x1 = max(b.origin[0] + b.size[0] for b in blocks)
    y0 = min(b.origin[1] for b in blocks)
    y1 = max(b.origin[1] + b.size[1] for b in blocks)
    cx, cy, _ = block.centroid
    right = cx > (x0 + x1) / 2.0
    upper = cy > (y0 + y1) / 2.0
    return ("u" if upper else "b") + ("r" if right else "l")


def diagonal_activity(stack: ChipStack, low_mw: float, high_mw: float) -> ActivityScenario:
    """Upper-right and bottom-left quadrants dissipate ``low_mw`` each,
    upper-left and bottom-right ``high_mw`` each (quadrant totals)."""
    blocks = _sources_or_raise(stack)
    groups: dict[str, list[Block]] = {"ur": [], "ul": [], "bl": [], "br": []}
    for b in blocks:
        groups[quadrant_of(stack, b)].append(b)
    powers = {}
    for quad, members in groups.items():
        if not members:
            raise ValueError(f"die quadrant {quad!r} holds no source block")
        total = low_mw if quad in ("ur", "bl") else high_mw
        for b in members:
            powers[b.name] = total / len(members)
    return ActivityScenario("diagonal", powers)


def random_activity(stack: ChipStack, total_mw: float, seed: int = 0) -> ActivityScenario:
    """Seeded uniform draw per block, rescaled to ``total_mw``."""
    blocks = _sources_or_raise(stack)
    weights = np.random.default_rng(seed).uniform(0.0, 1.0, size=len(blocks))
    weights = weights / weights.sum()
    return ActivityScenario("random", {b.name: float(total_mw * w) for b, w in zip(blocks, weights)})


def apply_activity(stack: ChipStack, scenario: ActivityScenario) -> ChipStack:
    """Replace die heat-source powers; device powers are left untouched."""
    sources = {b.name for b in stack.source_blocks()}
    unknown = sorted(set(scenario.powers) - sources)
    if unknown:
        raise KeyError(f"scenario {scenario.name!r} references unknown die blocks {unknown[:5]}")
    return _map_blocks(stack, {k: float(v) for k, v in scenario.powers.items()})


def set_device_powers(
    stack: ChipStack,
    *,
    p_vcsel: float | None = None,
    p_driver: float | None = None,
    p_heater: float | None = None,
) -> ChipStack:
    """Uniform power knobs for every VCSEL, driver and MR heater (mW)."""
    knobs = {"VCSEL": p_vcsel, "Driver": p_driver, "Heater": p_heater}
    for kind, value in knobs.items():
        if value is not None and value < 0:
            raise ValueError(f"{kind} power must be >= 0, got {value}")
    new = {
        d.name: float(knobs[d.kind])
        for d in stack.devices
        if d.kind in knobs and knobs[d.kind] is not None
    }
    return _map_blocks(stack, new)


def set_oni_device_powers(stack: ChipStack, kind: str, by_oni: Mapping[int, float]) -> ChipStack:
    """Per-ONI power (mW) for every device of ``kind`` in the listed ONIs."""
    if kind not in DEVICE_KINDS:
        raise ValueError(f"unknown device kind {kind!r}")
    if any(v < 0 for v in by_oni.values()):
        raise ValueError(f"{kind} power must be >= 0")
    new = {d.name: float(by_oni[d.oni_id]) for d in stack.devices if d.kind == kind and d.oni_id in by_oni}
    return _map_blocks(stack, new)


# ---------------------------------------------------------------------------
# ONI generation


@dataclass(frozen=True)
class OniGeometry:
    """Chessboard ONI: ``tracks`` waveguides, each alternating transmitters
    (VCSEL over a driver, fed by two TSVs) and receivers (MR with a heater on
    top, next to a photodetector)."""

    tracks: int = 4
    slots: int = 8  # per track: 4 transmitters + 4 receivers
    slot_pitch: float = 20.0
    track_pitch: float = 35.0
    vcsel_size: tuple[float, float] = (15.0, 30.0)
    mr_size: tuple[float, float] = (10.0, 10.0)
    pd_size: tuple[float, float] = (10.0, 10.0)
    tsv_size: float = 5.0
    # (z0, z1) tiers relative to their layer
    tsv_tier: tuple[float, float] = (0.0, 10.0)
    device_tier: tuple[float, float] = (10.0, 14.0)
    heater_tier: tuple[float, float] = (14.0, 16.0)
    driver_tier: tuple[float, float] = (0.0, 2.0)
    materials: Mapping[str, str] = field(
        default_factory=lambda: {
            "VCSEL": "iii_v",
            "MR": "silicon",
            "Photodetector": "germanium",
            "Heater": "heater_metal",
            "TSV": "copper",
            "Driver": "silicon",
        }
    )

    def __post_init__(self) -> None:
        if self.vcsel_size[0] > self.slot_pitch or self.vcsel_size[1] > self.track_pitch:
            raise GeometryError("VCSEL footprint does not fit in its slot")
        if self.device_tier[1] - self.device_tier[0] > 4.0 + GEOM_TOL:
            raise GeometryError("VCSEL thickness must be <= 4 µm")
        if self.mr_size[1] + self.pd_size[1] > self.track_pitch:
            raise GeometryError("MR and photodetector do not fit in one slot")

    @property
    def width(self) -> float:
        return self.slots * self.slot_pitch

    @property
    def height(self) -> float:
        return self.tracks * self.track_pitch

    def is_transmitter(self, track: int, slot: int) -> bool:
        return (track + slot) % 2 == 0


def make_oni(
    oni_id: int,
    center: tuple[float, float],
    geom: OniGeometry,
    *,
    p_vcsel: float = 0.0,
    p_driver: float = 0.0,
    p_heater: float = 0.0,
) -> tuple[OniLayout, dict[str, list[Block]]]:
    """Build one ONI. Returns the layout and its blocks keyed by tier name
    ('tsv', 'device', 'heater', 'driver') with z relative to the tier's layer."""
    x0 = center[0] - geom.width / 2.0
    y0 = center[1] - geom.height / 2.0
    mats = geom.materials
    tiers: dict[str, list[Block]] = {"tsv": [], "device": [], "heater": [], "driver": []}
    devices: list[Device] = []

    def add(kind: str, tier: str, xy: tuple[float, float], wh: tuple[float, float], zr, power, t, s, suffix=""):
        name = f"oni{oni_id}.t{t}.s{s}.{kind.lower()}{suffix}"
        block = Block(
            name,
            (xy[0], xy[1], zr[0]),
            (wh[0], wh[1], zr[1] - zr[0]),
            mats[kind],
            power=power,
            tag="device",
        )
        tiers[tier].append(block)
        devices.append(Device(kind, block, oni_id, t, s))

    for t in range(geom.tracks):
        ty = y0 + t * geom.track_pitch
        for s in range(geom.slots):
            sx = x0 + s * geom.slot_pitch
            if geom.is_transmitter(t, s):
                vw, vh = geom.vcsel_size
                add("VCSEL", "device", (sx, ty), (vw, vh), geom.device_tier, p_vcsel, t, s)
                add("Driver", "driver", (sx, ty), (vw, vh), geom.driver_tier, p_driver, t, s)
                ts = geom.tsv_size
                tx = sx + (vw - ts) / 2.0
                add("TSV", "tsv", (tx, ty), (ts, ts), geom.tsv_tier, 0.0, t, s, "0")
                add("TSV", "tsv", (tx, ty + vh - ts), (ts, ts), geom.tsv_tier, 0.0, t, s, "1")
            else:
                mw, mh = geom.mr_size
                pw, ph = geom.pd_size
                add("MR", "device", (sx, ty), (mw, mh), geom.device_tier, 0.0, t, s)
                add("Heater", "heater", (sx, ty), (mw, mh), geom.heater_tier, p_heater, t, s)
                add("Photodetector", "device", (sx, ty + geom.track_pitch - ph - 5.0), (pw, ph),
                    geom.device_tier, 0.0, t, s)
    bbox = (x0, y0, x0 + geom.width, y0 + geom.height)
    return OniLayout(oni_id, (float(center[0]), float(center[1])), bbox, tuple(devices)), tiers


def grid_ring_order(cols: int, rows: int) -> list[tuple[int, int]]:
    """Hamiltonian cycle through a cols x rows grid of nearest neighbours.

    Needs an even number of rows (cols >= 2): bottom row left to right, then a
    serpentine over columns 1.. on the upper rows, closing down column 0.
    """
    if rows % 2 or cols < 2:
        raise ValueError("grid ring needs an even row count and at least 2 columns")
    order = [(c, 0) for c in range(cols)]
    for r in range(1, rows):
        cs = range(cols - 1, 0, -1) if r % 2 == 1 else range(1, cols)
        order.extend((c, r) for c in cs)
    order.extend((0, r) for r in range(rows - 1, 0, -1))
    return order


# ---------------------------------------------------------------------------
# configuration


def _vec(value, n: int, where: str) -> tuple[float, ...]:
    if not isinstance(value, (list, tuple)) or len(value) != n:
        raise ConfigError(f"{where}: expected a list of {n} numbers, got {value!r}")
    return tuple(float(v) for v in value)


def _blocks_from_table(table: Mapping, layer: str, where: str) -> list[Block]:
    blocks = []
    for n, raw in enumerate(table.get("blocks", [])):
        w = f"{where}.blocks[{n}]"
        try:
            blocks.append(
                Block(
                    raw.get("name", f"{layer}.b{n}"),
                    _vec(raw["origin"], 3, w + ".origin"),
                    _vec(raw["size"], 3, w + ".size"),
                    raw["material"],
                    power=float(raw.get("power", 0.0)),
                    tag=raw.get("tag", "source" if raw.get("power", 0.0) else "passive"),
                )
            )
        except KeyError as exc:
            raise ConfigError(f"{w}: missing key {exc}") from None
        except GeometryError as exc:
            raise ConfigError(f"{w}: {exc}") from None
    for n, raw in enumerate(table.get("arrays", [])):
        w = f"{where}.arrays[{n}]"
        try:
            origin = _vec(raw["origin"], 3, w + ".origin")
            size = _vec(raw["size"], 3, w + ".size")
            count = [int(c) for c in raw["count"]]
            pitch = _vec(raw.get("pitch", size[:2]), 2, w + ".pitch")
            prefix = raw.get("name", f"{layer}.a{n}")
            for j in range(count[1]):
                for i in range(count[0]):
                    blocks.append(
                        Block(
                            f"{prefix}{j * count[0] + i}",
                            (origin[0] + i * pitch[0], origin[1] + j * pitch[1], origin[2]),
                            size,
                            raw["material"],
                            power=float(raw.get("power", 0.0)),
                            tag=raw.get("tag", "source"),
                        )
                    )
        except KeyError as exc:
            raise ConfigError(f"{w}: missing key {exc}") from None
    return blocks


def _boundary_from_table(table: Mapping, where: str) -> Boundary:
    faces = {}
    for name, raw in table.items():
        try:
            faces[name] = FaceCondition(
                raw.get("kind", "convective"),
                h=float(raw.get("h", 0.0)),
                temperature=raw.get("temperature"),
            )
        except ValueError as exc:
            raise ConfigError(f"{where}.{name}: {exc}") from None
    try:
        return Boundary(faces)
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def load_config(path: str | Path) -> dict:
    """Parse a TOML system description; syntax errors report line/column."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    data["_path"] = str(path)
    return data


def oni_geometry_from_config(config: Mapping) -> OniGeometry:
    raw = dict(config.get("oni", {}).get("geometry", {}))
    kwargs = {}
    for key, value in raw.items():
        if key == "materials":
            mats = dict(OniGeometry().materials)
            mats.update(value)
            kwargs[key] = mats
        elif isinstance(value, list):
            kwargs[key] = tuple(float(v) for v in value)
        elif key in ("tracks", "slots"):
            kwargs[key] = int(value)
        else:
            kwargs[key] = float(value)
    try:
        return OniGeometry(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{config.get('_path', '<config>')}: [oni.geometry]: {exc}") from None


def oni_centers(config: Mapping, pitch: float | None = None) -> list[tuple[float, float]]:
    """ONI centres along the ring order for a grid placement."""
    oni = config.get("oni", {})
    cols, rows = (int(v) for v in oni.get("grid", (6, 4)))
    pitch = float(oni.get("pitch", 750.0)) if pitch is None else float(pitch)
    cx, cy = _vec(oni.get("center", [0.0, 0.0]), 2, "oni.center")
    x0 = cx - (cols - 1) * pitch / 2.0
    y0 = cy - (rows - 1) * pitch / 2.0
    return [(x0 + c * pitch, y0 + r * pitch) for c, r in grid_ring_order(cols, rows)]


def build_stack(config: Mapping, *, oni_pitch: float | None = None) -> ChipStack:
    """Build and validate a :class:`ChipStack` from a parsed configuration.

    Layers are stacked bottom-up in file order. ONIs (if an ``[oni]`` table is
    present) are generated on a grid, numbered in ring order; ``oni_pitch``
    overrides the configured centre-to-centre pitch.
    """
    where = config.get("_path", "<config>")
    try:
        materials = {
            name: Material(name, float(k)) for name, k in config.get("materials", {}).items()
        }
    except ValueError as exc:
        raise ConfigError(f"{where}: [materials]: {exc}") from None
    layer_specs = []
    for n, raw in enumerate(config.get("layers", [])):
        w = f"{where}: layers[{n}]"
        name = raw.get("name", f"layer{n}")
        if "thickness" not in raw:
            raise ConfigError(f"{w}: missing key 'thickness'")
        layer_specs.append(
            LayerSpec(
                name,
                float(raw["thickness"]),
                tuple(_blocks_from_table(raw, name, w)),
                fill=raw.get("fill"),
                resolution=raw.get("resolution", "package"),
                dz=float(raw["dz"]) if "dz" in raw else None,
                role=raw.get("role", ""),
            )
        )
    footprint = None
    if "footprint" in config:
        fp = config["footprint"]
        o = _vec(fp["origin"], 2, "footprint.origin")
        s = _vec(fp["size"], 2, "footprint.size")
        footprint = (o[0], o[1], o[0] + s[0], o[1] + s[1])

    onis: list[OniLayout] = []
    device_blocks: dict[str, list[Block]] = {}
    if "oni" in config:
        oni = config["oni"]
        geom = oni_geometry_from_config(config)
        tier_layer = {
            "tsv": oni.get("layer", "optical"),
            "device": oni.get("layer", "optical"),
            "heater": oni.get("layer", "optical"),
            "driver": oni.get("driver_layer", oni.get("layer", "optical")),
        }
        for oni_id, center in enumerate(oni_centers(config, oni_pitch)):
            layout, tiers = make_oni(
                oni_id,
                center,
                geom,
                p_vcsel=float(oni.get("p_vcsel", 0.0)),
                p_driver=float(oni.get("p_driver", oni.get("p_vcsel", 0.0))),
                p_heater=float(oni.get("p_heater", 0.0)),
            )
            onis.append(layout)
            for tier, blocks in tiers.items():
                device_blocks.setdefault(tier_layer[tier], []).extend(blocks)

    try:
        return assemble_stack(
            materials,
            layer_specs,
            footprint=footprint,
            ambient_temperature=float(config.get("ambient_temperature", 25.0)),
            boundary=_boundary_from_table(config.get("boundary", {}), f"{where}: [boundary]"),
            onis=onis,
            device_layers=device_blocks,
        )
    except GeometryError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def bundled_config_path(name: str = "scc24.toml") -> Path:
    return Path(__file__).parent / "data" / name
