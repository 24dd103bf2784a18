"""Acceptance criteria 1-9.

Each test records one pass/fail line (printed in the terminal summary) at the
criterion's tolerance, then asserts it.
"""

from __future__ import annotations

import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE, random_ring, slab_stack, three_layer_stack
from photonoc.cli import run as cli_run
from photonoc.explore import Knobs, ScenarioSpec, System, ring_variants
from photonoc.photonics import MrModel, VcselModel, mr_drop_ratio, vcsel_efficiency, vcsel_operating_point
from photonoc.snr import ledgers_match, oracle_propagate, propagate_channel, snr
from photonoc.thermal import solve_steady


def record(criterion: str, passed: bool, detail: str) -> None:
    ACCEPTANCE.append((criterion, bool(passed), detail))
    assert passed, f"criterion {criterion}: {detail}"


def slab_error(cells: int) -> tuple[float, float]:
    """Max error against the analytic parabola, relative to the peak rise, and outflow balance."""
    thickness, power, k, width = 100.0, 50.0, 10.0, 1000.0
    _, mesh = slab_stack(cells, thickness=thickness, power=power, k=k, width=width)
    tmap = solve_steady(mesh)
    z = mesh.grid.cell_centers()[:, 2] * 1e-6
    q = power * 1e-3 / (width * width * thickness * 1e-18)  # W/m³
    length = thickness * 1e-6
    exact = 25.0 + q / (2.0 * k) * (length**2 - z**2)
    err = float(np.max(np.abs(tmap.temperature - exact)) / np.max(exact - 25.0))
    return err, abs(tmap.boundary_outflow - power) / power


# ---------------------------------------------------------------------------


def test_criterion_1_slab_against_parabola():
    t0 = time.perf_counter()
    err10, _ = slab_error(10)
    err100, _ = slab_error(100)
    elapsed = time.perf_counter() - t0
    ok = err10 <= 0.01 and err100 <= 0.001 and elapsed < 1.0
    record("1", ok, f"1D slab max rel error {err10:.3%} at 10 cells (<= 1%), {err100:.4%} at 100 cells "
                    f"(<= 0.1%), {elapsed:.3f} s (< 1 s)")


def test_criterion_2_superposition():
    t0 = time.perf_counter()
    _, mesh = three_layer_stack()
    base = solve_steady(mesh, tolerance=1e-10)
    alpha = 3.7
    scaled = solve_steady(mesh.scaled(alpha), tolerance=1e-10)
    rise, rise_a = base.temperature - base.ambient_temperature, scaled.temperature - scaled.ambient_temperature
    rel = float(np.max(np.abs(rise_a - alpha * rise)) / np.max(np.abs(alpha * rise)))
    elapsed = time.perf_counter() - t0
    ok = rel <= 1e-9 and elapsed < 30.0 and mesh.n_cells >= 50_000
    record("2", ok, f"alpha = {alpha} scales the rise to {rel:.2e} relative (<= 1e-9) on a 3-layer "
                    f"{mesh.n_cells}-cell stack, {elapsed:.2f} s (< 30 s)")


def test_criterion_3_energy_balance(system):
    tol = 1e-8
    cases = []
    for cells in (10, 100):
        _, mesh = slab_stack(cells)
        cases.append((f"slab{cells}", mesh))
    for top in ("convective",):
        _, mesh = slab_stack(40, top=top)
        cases.append(("slab-convective", mesh))
    _, mesh = three_layer_stack()
    cases.append(("3-layer", mesh))
    cases.append(("bundled chip", system.mesh.with_powers(system.stack_for(Knobs()))))
    worst, name_w = 0.0, ""
    for name, mesh in cases:
        tmap = solve_steady(mesh, tolerance=tol)
        err = abs(tmap.boundary_outflow - mesh.total_source) / mesh.total_source
        if err >= worst:
            worst, name_w = err, name
    record("3", worst <= tol, f"boundary outflow matches the source power to {worst:.2e} relative "
                              f"(worst: {name_w}) on {len(cases)} stacks (<= solver tolerance {tol:g})")


def test_criterion_4_microring_points():
    mr = MrModel()
    d0 = mr_drop_ratio(mr, 0.0)
    dhalf = mr_drop_ratio(mr, 0.775)
    grid = np.linspace(0.0, 10.0, 1000)
    vals = np.array([mr_drop_ratio(mr, d) for d in grid])
    mirrored = np.array([mr_drop_ratio(mr, -d) for d in grid])
    even = bool(np.array_equal(vals, mirrored))
    decreasing = bool(np.all(np.diff(vals) < 0))
    ok = d0 == 1.0 and dhalf == 0.5 and even and decreasing
    record("4", ok, f"drop(0) = {d0!r}, drop(0.775 nm) = {dhalf!r} (exact 1.0 / 0.5), even: {even}, "
                    f"strictly decreasing over 1000 points: {decreasing}")


def _bisect(g, lo: float, hi: float, tol: float = 1e-10) -> float:
    glo = g(lo)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        gm = g(mid)
        if (gm > 0) == (glo > 0):
            lo, glo = mid, gm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def test_criterion_5_vcsel_anchors_and_fixed_point():
    model = VcselModel()
    e40 = vcsel_efficiency(model, 40.0, 2.4)
    e60 = vcsel_efficiency(model, 60.0, 2.4)
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(20):
        t0, slope, curve = rng.uniform(25.0, 55.0), rng.uniform(0.5, 6.0), rng.uniform(0.0, 0.05)
        current = rng.uniform(1.0, 4.0)

        def local(p, t0=t0, slope=slope, curve=curve):
            return t0 + slope * p + curve * p * p

        op = vcsel_operating_point(model, current, local, tol=0.01)
        p_elec = model.electrical_power(current)
        root = _bisect(lambda t: local(p_elec * (1.0 - vcsel_efficiency(model, t, current))) - t, -50.0, 500.0)
        worst = max(worst, abs(op.temperature - root))
    ok = math.isclose(e40, 0.15, abs_tol=1e-15) and math.isclose(e60, 0.04, abs_tol=1e-15) and worst <= 0.01
    record("5", ok, f"eta(40 C) = {e40:g}, eta(60 C) = {e60:g} (0.15 / 0.04); fixed point vs bisection "
                    f"max |dT| = {worst:.2e} C over 20 seeded callbacks (<= 0.01 C)")


def test_criterion_6_closed_form_equals_oracle():
    rng = np.random.default_rng(6)
    t0 = time.perf_counter()
    mismatches, count, worst = 0, 0, 0.0
    for _ in range(200):
        net = random_ring(rng)
        for i in range(len(net.channels)):
            a, b = propagate_channel(net, i), oracle_propagate(net, i)
            count += 1
            if not ledgers_match(a, b, 1e-9):
                mismatches += 1
            worst = max(worst, abs(a.residual - b.residual) / a.injected,
                        max((abs(pa - pb) / a.injected for (_, _, pa), (_, _, pb) in zip(a.drops, b.drops)),
                            default=0.0))
    elapsed = time.perf_counter() - t0
    ok = mismatches == 0 and elapsed < 10.0
    record("6", ok, f"{count} channels on 200 seeded rings (N = 2..8): {mismatches} mismatches, worst "
                    f"deviation {worst:.1e} relative (<= 1e-9), {elapsed:.2f} s (< 10 s)")


def test_criterion_7_conservation(system):
    rng = np.random.default_rng(7)
    worst, runs = 0.0, 0
    for _ in range(50):
        rep = snr(random_ring(rng))
        runs += 1
        worst = max([worst] + [lg.conservation_error() for lg in rep.ledgers])
    sample = system.evaluate(Knobs())
    runs += 1
    worst = max([worst] + [lg.conservation_error() for lg in sample.report.ledgers])
    record("7", worst <= 1e-9, f"injected = drops + dissipation + residual to {worst:.1e} relative "
                               f"(<= 1e-9) over {runs} SNR runs incl. the bundled chip")


# ---------------------------------------------------------------------------
# criterion 8: trends on the bundled chip


@pytest.fixture(scope="module")
def trend_systems(config):
    return {name: System(config, pitch=pitch) for name, pitch in ring_variants(config).items()}


def test_criterion_8_trends(config, system, trend_systems):
    t0 = time.perf_counter()
    parts = []

    # (a) affine in P_chip, strictly increasing in P_VCSEL
    chips = [12500.0, 25000.0, 37500.0]
    t_chip = [system.evaluate(Knobs(p_chip=p), with_snr=False).mean_temperature for p in chips]
    curvature = abs(t_chip[2] - 2.0 * t_chip[1] + t_chip[0]) / abs(t_chip[2] - t_chip[0])
    vcsels = [2.0, 3.6, 6.0]
    t_vcsel = [system.evaluate(Knobs(p_vcsel=p), with_snr=False).mean_temperature for p in vcsels]
    ok_a = curvature <= 1e-6 and all(b > a for a, b in zip(t_vcsel, t_vcsel[1:]))
    parts.append((ok_a, f"(a) P_chip curvature {curvature:.1e} (<= 1e-6), mean T at P_VCSEL 2/3.6/6 mW = "
                        + "/".join(f"{t:.2f}" for t in t_vcsel) + " C"))

    # (b) interior heater optimum at P_VCSEL = 6 mW
    heaters = np.linspace(0.0, 6.0, 9)
    grads = [system.max_gradient(Knobs(p_vcsel=6.0, p_heater=float(h))) for h in heaters]
    k = int(np.argmin(grads))
    ok_b = 0 < k < len(heaters) - 1 and grads[k] < grads[0]
    parts.append((ok_b, f"(b) gradient {grads[0]:.2f} C without heater, minimum {grads[k]:.2f} C at "
                        f"P_heater = {heaters[k]:.2f} mW"))

    # (c) + (d) ring lengths and activity patterns
    total = ScenarioSpec.from_config(config).total
    uniform, diagonal = ScenarioSpec("uniform", total=total), ScenarioSpec("diagonal", total=total)
    snr_u, rows_d = [], []
    for name, sys_ in trend_systems.items():
        su = sys_.with_scenario(uniform).evaluate(Knobs())
        sd = sys_.with_scenario(diagonal).evaluate(Knobs())
        snr_u.append(su.worst_snr)
        rows_d.append((name, su.temperature_spread, sd.temperature_spread, su.worst_snr, sd.worst_snr))
    ok_c = all(b < a for a, b in zip(snr_u, snr_u[1:]))
    parts.append((ok_c, "(c) uniform worst SNR " + " > ".join(f"{v:.3f}" for v in snr_u) + " dB"))
    ok_d = all(sd > su and qd < qu for _, su, sd, qu, qd in rows_d)
    parts.append((ok_d, "(d) " + "; ".join(f"{n}: spread {su:.2f}->{sd:.2f} C, SNR {qu:.2f}->{qd:.2f} dB"
                                         for n, su, sd, qu, qd in rows_d)))

    elapsed = time.perf_counter() - t0
    ok_t = elapsed < 600.0
    ok = all(p for p, _ in parts) and ok_t
    detail = " | ".join(("" if p else "FAILED ") + text for p, text in parts)
    record("8", ok, f"{detail} | {elapsed:.0f} s (< 600 s)")


def test_criterion_9_determinism(tmp_path):
    outputs = []
    for run in ("a", "b"):
        out = tmp_path / run
        argv_sweep = ["sweep", "--variable", "P_heater", "--range", "0", "2", "3", "--activity", "random:25W",
                      "--seed", "3", "--out", str(out / "sweep")]
        argv_snr = ["snr", "--variant", "18mm", "--activity", "random:25W", "--seed", "3", "--ledger",
                    "--out", str(out / "snr")]
        codes = (cli_run(argv_sweep), cli_run(argv_snr))
        assert all(c in (0, 2) for c in codes)
        outputs.append({p.relative_to(out): p.read_bytes() for p in sorted(out.rglob("*")) if p.is_file()})
    a, b = outputs
    csvs = [p for p in a if p.suffix == ".csv"]
    same = a.keys() == b.keys() and all(a[p] == b[p] for p in a)
    record("9", same and len(csvs) >= 4, f"{len(csvs)} CSV files (and {len(a) - len(csvs)} other outputs) "
                                         f"byte-identical across two runs: {same}")
