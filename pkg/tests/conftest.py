from __future__ import annotations

import numpy as np
import pytest

from photonoc.chipmodel import (
    Block,
    Boundary,
    FaceCondition,
    LayerSpec,
    Material,
    assemble_stack,
    bundled_config_path,
    load_config,
)
from photonoc.snr import Channel, RingNetwork
from photonoc.thermal import ResolutionPolicy, build_mesh

# (criterion, passed, detail) rows collected by the acceptance suite
ACCEPTANCE: list[tuple[str, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, passed, detail in sorted(ACCEPTANCE, key=lambda r: int(r[0].split()[0])):
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] criterion {criterion}: {detail}")


def slab_stack(cells: int, *, thickness=100.0, power=50.0, k=10.0, width=1000.0, top="fixed", h=1e5,
               bottom="adiabatic"):
    """One-layer slab with a uniform volumetric source and ``cells`` cells along z."""
    faces = {}
    faces["zmax"] = FaceCondition("fixed", temperature=25.0) if top == "fixed" else FaceCondition("convective", h=h)
    if bottom == "fixed":
        faces["zmin"] = FaceCondition("fixed", temperature=25.0)
    block = Block("src", (0.0, 0.0, 0.0), (width, width, thickness), "m", power=power, tag="source")
    stack = assemble_stack(
        [Material("m", k)],
        [LayerSpec("slab", thickness, (block,), dz=thickness / cells)],
        ambient_temperature=25.0,
        boundary=Boundary(faces),
    )
    policy = ResolutionPolicy(fine=width, source=width, package=width)
    return stack, build_mesh(stack, policy)


def three_layer_stack(source_pitch: float = 25.0):
    """2 x 2 mm die / oxide / spreader stack with 16 unequal tiles (~50k cells)."""
    mats = [Material("si", 130.0), Material("ox", 1.4), Material("cu", 400.0)]
    tiles = []
    for i in range(4):
        for j in range(4):
            tiles.append(Block(f"t{i}{j}", (i * 500.0, j * 500.0, 80.0), (500.0, 500.0, 20.0), "si",
                               power=50.0 + 25.0 * ((3 * i + j) % 5), tag="source"))
    stack = assemble_stack(
        mats,
        [
            LayerSpec("die", 100.0, tuple(tiles), fill="si", dz=20.0, resolution="source", role="die"),
            LayerSpec("oxide", 10.0, fill="ox", dz=10.0, resolution="source"),
            LayerSpec("spreader", 500.0, fill="cu", dz=250.0, resolution="source"),
        ],
        footprint=(0.0, 0.0, 2000.0, 2000.0),
        ambient_temperature=30.0,
        boundary=Boundary({"zmax": FaceCondition("convective", h=2e4),
                           "zmin": FaceCondition("convective", h=50.0)}),
    )
    policy = ResolutionPolicy(fine=source_pitch, source=source_pitch, package=source_pitch)
    return stack, build_mesh(stack, policy)


def random_ring(rng: np.random.Generator) -> RingNetwork:
    """Seeded ring with 2-8 ONIs, random lengths, temperatures and channels."""
    n = int(rng.integers(2, 9))
    order = tuple(int(v) for v in rng.permutation(100)[:n])
    lengths = tuple(float(v) for v in rng.uniform(0.0, 1.5, size=n))
    temps = {o: float(rng.uniform(40.0, 70.0)) for o in order}
    channels = []
    for i in range(int(rng.integers(1, 2 * n + 1))):
        s, d = rng.choice(n, size=2, replace=False)
        channels.append(Channel(order[s], order[d], float(rng.uniform(1530.0, 1570.0)),
                                float(rng.uniform(0.01, 2.0)), rx_position=int(rng.integers(0, 4))))
    lasers = {o: temps[o] + float(rng.uniform(-2.0, 2.0)) for o in order} if rng.random() < 0.5 else None
    return RingNetwork(order, lengths, tuple(channels), temps, laser_temperatures=lasers,
                       terminate_at_destination=bool(rng.random() < 0.3))


@pytest.fixture(scope="session")
def config():
    return load_config(bundled_config_path())


@pytest.fixture(scope="session")
def system(config):
    from photonoc.explore import System

    return System(config)
