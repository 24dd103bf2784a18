"""
Steady-state heat conduction on non-uniform structured grids (finite volumes).

Every layer is cut along z wherever its set of blocks changes, and each of
these slabs gets its own axis-aligned planes: block edges are always planes,
and the intervals between them are subdivided according to the region they
lie in (ONI interfaces, heat-source area, rest of the package).  Each cell is
a control volume with a single conductivity.  Faces inside a slab use the
series (distance-weighted harmonic) conductance; stacked slabs exchange heat
through the overlap areas of their cells.  The assembled matrix is symmetric
positive definite as soon as one face exchanges heat with the ambient.

Units are converted to SI only in :func:`assemble`: coordinates are µm,
powers mW and temperatures °C everywhere else.
"""

from __future__ import annotations

import logging
import math
import threading
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .chipmodel import FACES, Boundary, ChipStack, OniLayout

log = logging.getLogger(__name__)

UM = 1e-6
MW = 1e-3
_AXES = "xyz"


class MeshResolutionError(ValueError):
    """Two adjacent features are closer than the minimum cell size."""

    def __init__(self, message: str, pair: tuple[str, str]):
        super().__init__(message)
        self.pair = pair


class ThermalSolveError(RuntimeError):
    """The linear solver did not reach the requested tolerance."""

    def __init__(self, message: str, iterations: int, residual: float):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


@dataclass(frozen=True)
class ResolutionPolicy:
    """Target cell sizes (µm).

    ``fine`` applies in-plane inside ONI bounding boxes, ``source`` over the
    die heat-source area and ``package`` elsewhere.  Along z each layer uses
    its own ``dz`` or the size of its resolution class.
    """

    fine: float = 5.0
    source: float = 100.0
    package: float = 500.0
    min_spacing: float = 0.5
    fine_margin: float = 0.0

    def size(self, cls: str) -> float:
        return {"fine": self.fine, "source": self.source, "package": self.package}[cls]


# ---------------------------------------------------------------------------
# mesh


def _merge_intervals(intervals: Iterable[tuple[float, float]]) -> list[tuple[float, float]]:
    out: list[list[float]] = []
    for a, b in sorted(intervals):
        if out and a <= out[-1][1]:
            out[-1][1] = max(out[-1][1], b)
        else:
            out.append([a, b])
    return [(a, b) for a, b in out]


def _inside(x: float, intervals: Sequence[tuple[float, float]]) -> bool:
    return any(a <= x <= b for a, b in intervals)


def _subdivide(forced: np.ndarray, sizes: Sequence[float]) -> np.ndarray:
    planes = [forced[0]]
    for a, b, h in zip(forced[:-1], forced[1:], sizes):
        n = max(1, int(math.ceil((b - a) / h - 1e-9)))
        planes.extend(a + (b - a) * np.arange(1, n + 1) / n)
        planes[-1] = b
    return np.asarray(planes, dtype=float)


def _check_spacing(axis: str, forced: np.ndarray, owner: dict[float, str], min_spacing: float) -> None:
    gaps = np.diff(forced)
    bad = np.flatnonzero(gaps < min_spacing)
    for i in bad:
        a, b = owner[forced[i]], owner[forced[i + 1]]
        if a != b:
            raise MeshResolutionError(
                f"cannot separate {a!r} and {b!r}: {axis}-planes {forced[i]:.6g} and "
                f"{forced[i + 1]:.6g} µm are closer than the {min_spacing} µm minimum cell",
                (a, b),
            )


def _overlaps(pa: np.ndarray, pb: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pairs (i, j, length) of intervals of ``pa`` and ``pb`` that overlap."""
    cuts = np.union1d(pa, pb)
    cuts = cuts[(cuts >= max(pa[0], pb[0])) & (cuts <= min(pa[-1], pb[-1]))]
    mid = 0.5 * (cuts[:-1] + cuts[1:])
    length = np.diff(cuts)
    keep = length > 0
    i = np.searchsorted(pa, mid[keep]) - 1
    j = np.searchsorted(pb, mid[keep]) - 1
    return i, j, length[keep]


class LayerGrid:
    """Structured grid of one layer; cells are numbered x-major from ``offset``."""

    def __init__(self, name: str, planes: Sequence[np.ndarray], conductivity: np.ndarray, offset: int):
        self.name = name
        self.planes = tuple(np.asarray(p, dtype=float) for p in planes)
        self.conductivity = conductivity
        self.shape = tuple(len(p) - 1 for p in self.planes)
        self.offset = offset
        self.size = int(np.prod(self.shape))

    def widths(self, axis: int) -> np.ndarray:
        return np.diff(self.planes[axis])

    def centers(self, axis: int) -> np.ndarray:
        p = self.planes[axis]
        return 0.5 * (p[:-1] + p[1:])

    def cell_volumes(self) -> np.ndarray:
        dx, dy, dz = (self.widths(a) for a in range(3))
        return dx[:, None, None] * dy[None, :, None] * dz[None, None, :]

    def view(self, flat: np.ndarray) -> np.ndarray:
        return flat[self.offset : self.offset + self.size].reshape(self.shape)

    def flat_index(self, i, j, k):
        return self.offset + (np.asarray(i) * self.shape[1] + np.asarray(j)) * self.shape[2] + np.asarray(k)


class Grid:
    """Per-layer structured grids stacked along z; caches assembled operators.

    Adjacent layers need not share their in-plane planes: they exchange heat
    through the overlap area of each pair of facing cells.
    """

    def __init__(self, layers: Sequence[LayerGrid]):
        self.layers = tuple(layers)
        self.n_cells = sum(g.size for g in self.layers)
        self._operators: dict = {}
        self._lock = threading.Lock()

    def cell_volumes(self) -> np.ndarray:
        return np.concatenate([g.cell_volumes().ravel() for g in self.layers])

    def cell_centers(self) -> np.ndarray:
        out = []
        for g in self.layers:
            X, Y, Z = np.meshgrid(*(g.centers(a) for a in range(3)), indexing="ij")
            out.append(np.column_stack([X.ravel(), Y.ravel(), Z.ravel()]))
        return np.concatenate(out)

    def locate(self, point: Sequence[float]) -> tuple[int, tuple[int, int, int]]:
        """(layer index, cell index) of the cell holding ``point``.

        A point on a face shared by two cells belongs to the lower-index
        cell (and to the lower layer on a layer interface).
        """
        z = point[2]
        lo, hi = self.layers[0].planes[2][0], self.layers[-1].planes[2][-1]
        if not (lo - 1e-9 <= z <= hi + 1e-9):
            raise ValueError(f"point {tuple(point)} lies outside the mesh along z [{lo}, {hi}]")
        for n, g in enumerate(self.layers):
            if z <= g.planes[2][-1] + 1e-9:
                return n, cell_index(g.planes, point)
        raise AssertionError("unreachable")

    def operator(self, boundary: Boundary) -> "Operator":
        key = _boundary_key(boundary)
        with self._lock:
            op = self._operators.get(key)
            if op is None:
                op = assemble(self, boundary)
                self._operators[key] = op
            return op


@dataclass(frozen=True, eq=False)
class Mesh:
    """A :class:`Grid` plus the per-cell heat sources (mW, flat)."""

    grid: Grid
    sources: np.ndarray
    block_cells: dict = field(repr=False)  # block name -> [(slab index, slices)]
    signature: int = 0
    ambient_temperature: float = 25.0
    boundary: Boundary = field(default_factory=Boundary)

    @property
    def layers(self) -> tuple[LayerGrid, ...]:
        return self.grid.layers

    @property
    def n_cells(self) -> int:
        return self.grid.n_cells

    @property
    def total_source(self) -> float:
        return math.fsum(self.sources)

    def layer_sources(self, layer: int) -> np.ndarray:
        return self.grid.layers[layer].view(self.sources)

    def with_powers(self, stack: ChipStack) -> Mesh:
        """Same geometry, sources taken from ``stack`` (which must share it)."""
        if _geometry_signature(stack) != self.signature:
            raise ValueError("stack geometry differs from the meshed one")
        sources = _distribute(self.grid, self.block_cells, stack)
        return replace(self, sources=sources, ambient_temperature=stack.ambient_temperature,
                       boundary=stack.boundary)

    def scaled(self, factor: float) -> Mesh:
        return replace(self, sources=self.sources * factor)


def _geometry_signature(stack: ChipStack) -> int:
    return hash(
        tuple((b.name, b.origin, b.size, b.material) for b in stack.blocks)
        + tuple((n, m.thermal_conductivity) for n, m in sorted(stack.materials.items()))
    )


def _distribute(grid: Grid, block_cells: dict, stack: ChipStack) -> np.ndarray:
    sources = np.zeros(grid.n_cells)
    vols = [g.cell_volumes() for g in grid.layers]
    for b in stack.blocks:
        if b.power <= 0:
            continue
        parts = block_cells[b.name]
        total = math.fsum(vols[li][sl].sum() for li, sl in parts)
        for li, sl in parts:
            grid.layers[li].view(sources)[sl] += b.power * vols[li][sl] / total
    return sources


def _slabs(layer) -> list[tuple[float, float, list]]:
    """Split a layer along z where the set of blocks changes.

    Returns ``(z0, z1, blocks)`` runs; consecutive z-intervals crossed by
    the same blocks are merged so their cells share in-plane planes.
    """
    edges = sorted({round(v, 6) for b in layer.blocks for v in (b.lo[2], b.hi[2])})
    runs: list[list] = []
    for z0, z1 in zip(edges[:-1], edges[1:]):
        mid = 0.5 * (z0 + z1)
        inside = [b for b in layer.blocks if b.lo[2] < mid < b.hi[2]]
        names = {b.name for b in inside}
        if runs and runs[-1][3] == names:
            runs[-1][1] = z1
        else:
            runs.append([z0, z1, inside, names])
    return [(z0, z1, blocks) for z0, z1, blocks, _ in runs]


def _slab_planes(blocks, z_range, layer, policy: ResolutionPolicy, fine, source):
    lo = [min(b.origin[a] for b in blocks) for a in range(2)]
    hi = [max(b.origin[a] + b.size[a] for b in blocks) for a in range(2)]
    fine_here = fine if any(b.tag == "device" for b in blocks) else ([], [])
    source_here = source if layer.resolution in ("fine", "source") else ([], [])
    planes, forced_index = [], []
    for axis in range(2):
        owner: dict[float, str] = {}
        for b in blocks:
            for v in (b.origin[axis], b.origin[axis] + b.size[axis]):
                owner.setdefault(round(v, 6), b.name)
        for a, b in fine_here[axis] + source_here[axis]:
            for v in (a, b):
                if lo[axis] < v < hi[axis]:
                    owner.setdefault(round(v, 6), "<refinement region>")
        forced = np.array(sorted(owner))
        _check_spacing(_AXES[axis], forced, owner, policy.min_spacing)
        sizes = []
        for a, b in zip(forced[:-1], forced[1:]):
            mid = 0.5 * (a + b)
            if _inside(mid, fine_here[axis]):
                sizes.append(policy.fine)
            elif _inside(mid, source_here[axis]):
                sizes.append(policy.source)
            else:
                sizes.append(policy.package)
        p = _subdivide(forced, sizes)
        planes.append(p)
        forced_index.append({round(v, 6): i for i, v in enumerate(p) if round(v, 6) in owner})
    dz = layer.dz if layer.dz else policy.size(layer.resolution)
    planes.append(_subdivide(np.array(z_range), [dz]))
    return planes, forced_index


def build_mesh(stack: ChipStack, policy: ResolutionPolicy | None = None) -> Mesh:
    """Conforming mesh of ``stack``; block powers spread over covered cells
    in proportion to cell volume.

    Each layer is cut into z-slabs wherever its set of blocks changes, and
    every slab gets its own in-plane planes: ``policy.fine`` inside ONI
    bounding boxes (slabs holding devices), ``policy.source`` over the die
    heat-source area (non-package layers) and ``policy.package`` elsewhere.
    Along z each slab uses its layer's ``dz`` or the size of its class.
    """
    policy = policy or ResolutionPolicy()
    m = policy.fine_margin
    fine = (
        _merge_intervals((o.bbox[0] - m, o.bbox[2] + m) for o in stack.onis),
        _merge_intervals((o.bbox[1] - m, o.bbox[3] + m) for o in stack.onis),
    )
    src = stack.source_blocks()
    source = tuple(
        _merge_intervals((b.origin[a], b.origin[a] + b.size[a]) for b in src) for a in range(2)
    )

    slab_grids = []
    block_cells: dict[str, list] = {}
    offset = 0
    for layer in stack.layers:
        owner = {}
        for b in layer.blocks:
            for v in (b.lo[2], b.hi[2]):
                owner.setdefault(round(v, 6), b.name)
        _check_spacing("z", np.array(sorted(owner)), owner, min(policy.min_spacing, 0.1))
        slabs = _slabs(layer)
        for n, (z0, z1, blocks) in enumerate(slabs):
            planes, forced_index = _slab_planes(blocks, (z0, z1), layer, policy, fine, source)
            shape = tuple(len(p) - 1 for p in planes)
            k = np.full(shape, np.nan)
            for b in blocks:
                sl = tuple(
                    slice(
                        forced_index[a][round(b.origin[a], 6)],
                        forced_index[a][round(b.origin[a] + b.size[a], 6)],
                    )
                    for a in range(2)
                ) + (slice(None),)
                k[sl] = stack.materials[b.material].thermal_conductivity
                if b.tag != "fill":
                    block_cells.setdefault(b.name, []).append((len(slab_grids), sl))
            if np.isnan(k).any():
                raise ValueError(f"layer {layer.name!r}: mesh cells not covered by any block")
            name = layer.name if len(slabs) == 1 else f"{layer.name}.{n}"
            g = LayerGrid(name, planes, k, offset)
            offset += g.size
            slab_grids.append(g)

    grid = Grid(slab_grids)
    sources = _distribute(grid, block_cells, stack)
    log.debug("mesh: %s = %d cells", [g.shape for g in slab_grids], grid.n_cells)
    return Mesh(
        grid,
        sources,
        block_cells,
        _geometry_signature(stack),
        stack.ambient_temperature,
        stack.boundary,
    )


# ---------------------------------------------------------------------------
# assembly and solve


def _boundary_key(boundary: Boundary) -> tuple:
    return tuple(
        (f, boundary.face(f).kind, boundary.face(f).h, boundary.face(f).temperature) for f in FACES
    )


@dataclass
class Operator:
    matrix: sp.csr_matrix
    # face name -> (flat cell indices, conductance W/K)
    faces: dict[str, tuple[np.ndarray, np.ndarray]]
    boundary: Boundary
    _preconditioner: Callable | None = None
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)


def _face_slice(shape: tuple[int, int, int], face: str) -> tuple:
    axis = _AXES.index(face[0])
    sl = [slice(None)] * 3
    sl[axis] = 0 if face.endswith("min") else shape[axis] - 1
    return tuple(sl)


def _intra_layer(g: LayerGrid, rows, cols, vals, diag) -> None:
    shape = g.shape
    k = g.conductivity
    d = [g.widths(a) * UM for a in range(3)]
    idx = g.offset + np.arange(g.size).reshape(shape)
    for axis in range(3):
        if shape[axis] < 2:
            continue
        others = [a for a in range(3) if a != axis]
        area = np.expand_dims(d[others[0]][:, None] * d[others[1]][None, :], axis)
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[axis] = slice(0, -1)
        hi[axis] = slice(1, None)
        lo, hi = tuple(lo), tuple(hi)
        half = np.expand_dims(d[axis], others) / 2.0
        r = half[lo] / k[lo] + half[hi] / k[hi]
        _couple(idx[lo].ravel(), idx[hi].ravel(), (area / r).ravel(), rows, cols, vals, diag)


def _couple(a, b, g, rows, cols, vals, diag) -> None:
    rows.extend((a, b))
    cols.extend((b, a))
    vals.extend((-g, -g))
    np.add.at(diag, a, g)
    np.add.at(diag, b, g)


def _inter_layer(lower: LayerGrid, upper: LayerGrid, rows, cols, vals, diag) -> None:
    ia, ib, lx = _overlaps(lower.planes[0], upper.planes[0])
    ja, jb, ly = _overlaps(lower.planes[1], upper.planes[1])
    area = (lx[:, None] * ly[None, :]) * UM * UM
    ka = lower.conductivity[ia[:, None], ja[None, :], -1]
    kb = upper.conductivity[ib[:, None], jb[None, :], 0]
    r = (lower.widths(2)[-1] * UM / 2.0) / ka + (upper.widths(2)[0] * UM / 2.0) / kb
    a = lower.flat_index(ia[:, None], ja[None, :], lower.shape[2] - 1)
    b = upper.flat_index(ib[:, None], jb[None, :], 0)
    _couple(a.ravel(), b.ravel(), (area / r).ravel(), rows, cols, vals, diag)


def assemble(grid: Grid, boundary: Boundary) -> Operator:
    """Conductance matrix (W/K) acting on the temperature rise above ambient."""
    if boundary.is_adiabatic:
        raise ValueError("all-adiabatic boundary: the conduction matrix is singular")
    n = grid.n_cells
    rows, cols, vals = [], [], []
    diag = np.zeros(n)
    for g in grid.layers:
        _intra_layer(g, rows, cols, vals, diag)
    for lower, upper in zip(grid.layers[:-1], grid.layers[1:]):
        _inter_layer(lower, upper, rows, cols, vals, diag)

    faces = {}
    for face in FACES:
        cond = boundary.face(face)
        if cond.kind == "adiabatic":
            continue
        axis = _AXES.index(face[0])
        if axis == 2:
            layers = [grid.layers[0] if face == "zmin" else grid.layers[-1]]
        else:
            layers = grid.layers
        cells, conductance = [], []
        for g in layers:
            others = [a for a in range(3) if a != axis]
            d = [g.widths(a) * UM for a in range(3)]
            sl = _face_slice(g.shape, face)
            area = d[others[0]][:, None] * d[others[1]][None, :]
            width = d[axis][0 if face.endswith("min") else -1]
            r = (width / 2.0) / g.conductivity[sl]
            if cond.kind == "convective":
                r = r + 1.0 / cond.h
            idx = (g.offset + np.arange(g.size).reshape(g.shape))[sl]
            cells.append(idx.ravel())
            conductance.append((area / r).ravel())
        cells = np.concatenate(cells)
        conductance = np.concatenate(conductance)
        np.add.at(diag, cells, conductance)
        faces[face] = (cells, conductance)
    rows.append(np.arange(n))
    cols.append(np.arange(n))
    vals.append(diag)
    matrix = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )
    return Operator(matrix, faces, boundary)


PRECONDITIONERS = ("auto", "jacobi", "amg")


def _jacobi(matrix: sp.csr_matrix) -> Callable[[np.ndarray], np.ndarray]:
    inv = 1.0 / matrix.diagonal()
    return lambda r: inv * r


def _preconditioner(op: Operator, kind: str) -> Callable[[np.ndarray], np.ndarray]:
    if kind == "auto":
        with op._lock:
            if op._preconditioner is None:
                op._preconditioner = _build_preconditioner(op, kind)
            return op._preconditioner
    return _build_preconditioner(op, kind)


def _build_preconditioner(op: Operator, kind: str) -> Callable[[np.ndarray], np.ndarray]:
    n = op.matrix.shape[0]
    if kind == "jacobi" or (kind == "auto" and n < 4000):
        return _jacobi(op.matrix)
    import pyamg  # imported lazily: small problems never need it

    # plain (unsmoothed) aggregation on the diagonally scaled operator: the
    # smoothed prolongator fills in badly on thin, strongly anisotropic slabs
    s = 1.0 / np.sqrt(op.matrix.diagonal())
    scaled = sp.diags(s) @ op.matrix @ sp.diags(s)
    ml = pyamg.smoothed_aggregation_solver(
        scaled.tocsr(),
        symmetry="hermitian",
        strength=("symmetric", {"theta": 0.1}),
        smooth=None,
        max_coarse=500,
    )
    cycle = ml.aspreconditioner(cycle="V")
    return lambda r: s * cycle(s * r)


@dataclass
class PcgInfo:
    iterations: int
    residual: float  # ||b - Ax|| / ||b||
    imbalance: float  # |sum(b - Ax)| / |sum(b)|
    converged: bool


def pcg(
    matrix,
    rhs: np.ndarray,
    precondition: Callable[[np.ndarray], np.ndarray] | None = None,
    *,
    x0: np.ndarray | None = None,
    tol: float = 1e-8,
    max_iterations: int = 10000,
) -> tuple[np.ndarray, PcgInfo]:
    """Preconditioned conjugate gradients for an SPD ``matrix``.

    Stops when the relative residual norm is below ``tol`` *and* the summed
    residual (the global heat imbalance for a conduction matrix) is below
    ``tol`` times the summed right-hand side.
    """
    if precondition is None:
        precondition = lambda r: r  # noqa: E731
    x = np.zeros_like(rhs) if x0 is None else np.array(x0, dtype=float)
    bnorm = np.linalg.norm(rhs)
    bsum = abs(rhs.sum()) or np.abs(rhs).sum()
    if bnorm == 0.0:
        return np.zeros_like(rhs), PcgInfo(0, 0.0, 0.0, True)
    r = rhs - matrix @ x

    def done(res: np.ndarray) -> tuple[bool, float, float]:
        rel = np.linalg.norm(res) / bnorm
        imb = abs(res.sum()) / bsum
        return rel <= tol and imb <= tol, rel, imb

    ok, rel, imb = done(r)
    it = 0
    # the recursive residual drifts from b - Ax; restart from the true one
    # until both agree, the budget runs out or a restart stops paying off
    previous = math.inf
    while not ok and it < max_iterations and rel < 0.5 * previous:
        previous = rel
        z = precondition(r)
        p = z.copy()
        rz = r @ z
        while it < max_iterations:
            it += 1
            ap = matrix @ p
            alpha = rz / (p @ ap)
            x += alpha * p
            r -= alpha * ap
            if done(r)[0]:
                break
            z = precondition(r)
            rz_new = r @ z
            p = z + (rz_new / rz) * p
            rz = rz_new
        r = rhs - matrix @ x
        ok, rel, imb = done(r)
    return x, PcgInfo(it, rel, imb, ok)


@dataclass(frozen=True, eq=False)
class ThermalMap:
    mesh: Mesh
    temperature: np.ndarray  # °C, flat over all layers
    ambient_temperature: float
    residual: float
    iterations: int
    boundary_outflow: float  # mW, total over all non-adiabatic faces
    face_outflow: dict = field(default_factory=dict)

    def field(self, layer: int | str) -> np.ndarray:
        """Temperature of one layer as an (nx, ny, nz) array."""
        layers = self.mesh.layers
        if isinstance(layer, str):
            names = [g.name for g in layers]
            if layer not in names:
                raise KeyError(f"no layer {layer!r}")
            layer = names.index(layer)
        return layers[layer].view(self.temperature)

    @property
    def max_temperature(self) -> float:
        return float(self.temperature.max())


def solve_steady(
    mesh: Mesh,
    boundary: Boundary | None = None,
    tolerance: float = 1e-8,
    *,
    ambient_temperature: float | None = None,
    max_iterations: int = 10000,
    preconditioner: str = "auto",
    initial: ThermalMap | None = None,
) -> ThermalMap:
    """Solve for the steady temperature field of ``mesh``.

    ``boundary`` and ``ambient_temperature`` default to those of the stack
    the mesh was built from. Raises :class:`ThermalSolveError` (with the
    iteration count and residual) instead of returning an unconverged map.
    """
    if not tolerance > 0:
        raise ValueError("tolerance must be > 0")
    if preconditioner not in PRECONDITIONERS:
        raise ValueError(f"unknown preconditioner {preconditioner!r}; expected one of {PRECONDITIONERS}")
    boundary = mesh.boundary if boundary is None else boundary
    ambient = mesh.ambient_temperature if ambient_temperature is None else ambient_temperature
    op = mesh.grid.operator(boundary)
    rhs = mesh.sources * MW
    fixed_targets = {}
    for face, (cells, g) in op.faces.items():
        cond = boundary.face(face)
        if cond.kind == "fixed":
            target = cond.temperature - ambient
            fixed_targets[face] = target
            np.add.at(rhs, cells, g * target)
    x0 = None
    if initial is not None and initial.mesh.grid is mesh.grid:
        x0 = initial.temperature - ambient
    theta, info = pcg(
        op.matrix,
        rhs,
        _preconditioner(op, preconditioner),
        x0=x0,
        tol=tolerance,
        max_iterations=max_iterations,
    )
    if not info.converged:
        raise ThermalSolveError(
            f"PCG did not converge in {info.iterations} iterations "
            f"(relative residual {info.residual:.3e}, heat imbalance {info.imbalance:.3e})",
            info.iterations,
            info.residual,
        )
    face_out = {}
    for face, (cells, g) in op.faces.items():
        face_out[face] = math.fsum(g * (theta[cells] - fixed_targets.get(face, 0.0))) / MW
    log.debug("solve: %d iterations, residual %.2e", info.iterations, info.residual)
    return ThermalMap(
        mesh,
        theta + ambient,
        ambient,
        info.residual,
        info.iterations,
        math.fsum(face_out.values()),
        face_out,
    )


# ---------------------------------------------------------------------------
# queries


def cell_index(planes: Sequence[np.ndarray], point: Sequence[float]) -> tuple[int, int, int]:
    """Index of the cell containing ``point``; a point on a shared face
    belongs to the lower-index cell."""
    out = []
    for axis, (p, v) in enumerate(zip(planes, point)):
        if not (p[0] - 1e-9 <= v <= p[-1] + 1e-9):
            raise ValueError(
                f"point {tuple(point)} lies outside the mesh along {_AXES[axis]} "
                f"[{p[0]}, {p[-1]}]"
            )
        i = int(np.searchsorted(p, v, side="left")) - 1
        out.append(min(max(i, 0), len(p) - 2))
    return tuple(out)


def temperature_at(tmap: ThermalMap, point: Sequence[float]) -> float:
    """Temperature of the cell containing ``point`` (no interpolation)."""
    layer, idx = tmap.mesh.grid.locate(point)
    return float(tmap.field(layer)[idx])


@dataclass(frozen=True)
class OniThermalStats:
    oni_id: int
    avg_temperature: float
    gradient: float
    vcsel_temperature: float  # mean over VCSELs
    mr_temperature: float  # mean over MRs
    flagged: bool  # gradient above the limit


def device_temperatures(tmap: ThermalMap, oni: OniLayout, kinds=("VCSEL", "MR")) -> dict[str, float]:
    out = {}
    for d in oni.devices:
        if d.kind in kinds:
            try:
                out[d.name] = temperature_at(tmap, d.block.centroid)
            except ValueError as exc:
                raise ValueError(f"device {d.name!r} is outside the thermal map: {exc}") from None
    return out


def oni_stats(tmap: ThermalMap, layouts: Sequence[OniLayout], limit: float = 1.0) -> list[OniThermalStats]:
    """Per-ONI mean of VCSEL/MR centroid temperatures and their max - min."""
    stats = []
    for oni in layouts:
        temps = device_temperatures(tmap, oni)
        if not temps:
            raise ValueError(f"ONI {oni.oni_id} has no VCSEL or MR")
        values = np.array(list(temps.values()))
        kinds = {d.name: d.kind for d in oni.devices}
        vcsel = [t for n, t in temps.items() if kinds[n] == "VCSEL"]
        mr = [t for n, t in temps.items() if kinds[n] == "MR"]
        gradient = float(values.max() - values.min())
        stats.append(
            OniThermalStats(
                oni.oni_id,
                float(values.mean()),
                gradient,
                float(np.mean(vcsel)) if vcsel else float("nan"),
                float(np.mean(mr)) if mr else float("nan"),
                gradient > limit,
            )
        )
    return stats


# ---------------------------------------------------------------------------
# export


def write_csv(tmap: ThermalMap, path: str | Path) -> None:
    """One row per cell centre: x_um, y_um, z_um, T_C."""
    data = np.column_stack([tmap.mesh.grid.cell_centers(), tmap.temperature])
    np.savetxt(path, data, delimiter=",", fmt="%.6f", header="x_um,y_um,z_um,T_C", comments="")


_DUMP_MAGIC = "photonoc-grid 2"


def write_grid_dump(tmap: ThermalMap, path: str | Path) -> None:
    """ASCII header (per layer: name, shape, planes) then float64 data.

    Layers follow each other in the data block, each stored row-major
    with z varying fastest.
    """
    layers = tmap.mesh.layers
    header = [_DUMP_MAGIC, f"layers {len(layers)}"]
    for g in layers:
        header.append(f"layer {g.name} " + " ".join(str(n) for n in g.shape))
        for axis, p in zip(_AXES, g.planes):
            header.append(f"{axis}_um " + " ".join(repr(float(v)) for v in p))
    header.append("data float64-le")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(np.ascontiguousarray(tmap.temperature, dtype="<f8").tobytes())


@dataclass(frozen=True)
class DumpLayer:
    name: str
    planes: tuple[np.ndarray, ...]
    temperature: np.ndarray


def read_grid_dump(path: str | Path) -> list[DumpLayer]:
    with open(path, "rb") as fh:
        if fh.readline().decode("ascii").strip() != _DUMP_MAGIC:
            raise ValueError(f"{path}: not a grid dump")
        n_layers = int(fh.readline().split()[1])
        heads = []
        for _ in range(n_layers):
            parts = fh.readline().decode("ascii").split()
            shape = tuple(int(v) for v in parts[2:5])
            planes = tuple(
                np.array([float(v) for v in fh.readline().split()[1:]]) for _ in range(3)
            )
            heads.append((parts[1], shape, planes))
        fh.readline()
        data = np.frombuffer(fh.read(), dtype="<f8")
    out, start = [], 0
    for name, shape, planes in heads:
        size = int(np.prod(shape))
        out.append(DumpLayer(name, planes, data[start : start + size].reshape(shape).copy()))
        start += size
    if start != data.size:
        raise ValueError(f"{path}: data size does not match the header")
    return out
