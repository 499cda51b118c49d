"""End-to-end acceptance checks, one test per criterion.

The trained-network criteria use desk-scale runs cached by ``desk.trained``;
the first run trains them (up to about two and a half hours on one core).  Each of those
criteria may try up to three seeds.
"""
import math

import numpy as np
import pytest

from desk import trained
from mcfnet.constrained import multiphase_step, steiner_solve
from mcfnet.formats import (
    METRICS_HEADER,
    MetricRow,
    checkpoint_from_bytes,
    checkpoint_to_bytes,
    csv_bytes,
    field_from_bytes,
    field_to_bytes,
    metrics_write,
    read_csv,
)
from mcfnet.grid import Grid
from mcfnet.network import init_net, loss_and_gradient, loss_only, param_count
from mcfnet.phasefield import Ball, field_from_shape, radius_estimate, volume_estimate
from mcfnet.schemes import cahn_hilliard_energy, stepper
from mcfnet.training import Checkpoint, ball_field, radius_at
from test_cli import run_pipeline
from test_network import _gradient_problem, relative_errors, richardson_gradient

SEEDS = (0, 1, 2)


@pytest.mark.criterion(1)
def test_structural_counts(report):
    g = Grid(2, 128)
    counts = {k: param_count(init_net(k, g, np.random.default_rng(0))) for k in ("s1", "s2")}
    report(f"s1 {counts['s1']}, s2 {counts['s2']}")
    assert counts == {"s1": 336, "s2": 724}


@pytest.mark.criterion(2)
def test_gradient_correctness(report):
    worst = {}
    for kind in ("s1", "s2"):
        g, net, inputs, targets = _gradient_problem(kind)
        _, grad = loss_and_gradient(net, inputs, targets, g.cell_volume)
        f = lambda th: loss_only(net.with_theta(th), inputs, targets, g.cell_volume)
        worst[kind] = float(relative_errors(grad, richardson_gradient(f, net.theta)).max())
    report(", ".join(f"{k} worst rel err {v:.2e}" for k, v in worst.items()))
    assert max(worst.values()) < 1e-6


@pytest.mark.criterion(3)
def test_lie_radius_law(report):
    g = Grid(2, 256)
    step = stepper("lie", g)
    u = ball_field(g, 0.3, "oriented")
    errors = []
    n = 0
    while 0.09 - 2 * n * g.delta_t > (6 * g.epsilon) ** 2:
        r = math.sqrt(0.09 - 2 * n * g.delta_t)
        errors.append(abs(radius_estimate(u, g, "oriented") - r) / r)
        u = step(u)
        n += 1
    errors = np.array(errors)
    over = np.flatnonzero(errors >= 0.03)
    first = int(over[0]) if over.size else None
    report(f"{len(errors)} steps, worst rel err {errors.max():.3f}, first step over 3%: {first}")
    assert errors.max() < 0.03


@pytest.mark.criterion(4)
def test_eyre_energy_stability(report):
    g = Grid(2, 256)
    u = np.random.default_rng(0).random(g.shape)
    step = stepper("eyre", g, 2.0)
    energies = [cahn_hilliard_energy(u, g)]
    for _ in range(500):
        u = step(u)
        energies.append(cahn_hilliard_energy(u, g))
    rises = np.diff(energies)
    report(f"energy {energies[0]:.4f} -> {energies[-1]:.4f}, largest step change {rises.max():.2e}")
    assert np.all(rises <= 0)


def volume_errors(step, g: Grid, iterations: int):
    """Volume trajectory and |V - V_exact| for the R=0.3 oriented disk."""
    u = ball_field(g, 0.3, "oriented")
    vols, errs = [], []
    for n in range(iterations + 1):
        exact = ball_field(g, radius_at(0.3, n * g.delta_t, 2), "oriented")
        v = float(volume_estimate(u, g))
        vols.append(v)
        errs.append(abs(v - float(volume_estimate(exact, g))))
        u = step(u)
    return np.array(vols), np.array(errs)


def oriented_report(net, report):
    # the disk lasts ~184 steps at N=128, so iteration 250 is read at N=256
    # where the same grid-unit net applies (dt = eps^2 = (2 dx)^2)
    g = Grid(2, 256)
    vols, errs = volume_errors(net, g, 250)
    _, lie = volume_errors(stepper("lie", g), g, 250)
    g128 = Grid(2, 128)
    _, errs128 = volume_errors(net, g128, 250)
    _, lie128 = volume_errors(stepper("lie", g128), g128, 250)
    report(f"N=256 it250 net {errs[250]:.2e} lie {lie[250]:.2e}; N=128 it166 net {errs128[166]:.2e} "
           f"lie {lie128[166]:.2e}, it250 net {errs128[250]:.2e} lie {lie128[250]:.2e}; "
           f"soft beats-baseline at N=256 it250: {errs[250] < lie[250]}")
    return errs[250] <= 2 * lie[250] and bool(np.all(np.diff(vols) <= 0))


@pytest.mark.slow
@pytest.mark.criterion(5)
def test_oriented_training(report):
    ok = False
    for seed in SEEDS:
        ck = trained("s1-oriented", seed)
        report(f"seed {seed} best epoch {ck.epoch}")
        if oriented_report(ck.net, report):
            ok = True
            break
    assert ok


def circle_area_errors(net, g: Grid):
    """Relative error of pi r_est^2 against pi (R0^2 - 2t) until R < 8 eps."""
    u = ball_field(g, 0.3, "unoriented")
    errs = []
    n = 0
    while 0.09 - 2 * n * g.delta_t >= (8 * g.epsilon) ** 2:
        exact = math.pi * (0.09 - 2 * n * g.delta_t)
        with np.errstate(all="ignore"):
            est = math.pi * radius_estimate(u, g, "unoriented") ** 2
        errs.append(abs(est - exact) / exact if math.isfinite(est) else math.inf)
        u = net(u)
        n += 1
    return np.array(errs)


@pytest.mark.slow
@pytest.mark.criterion(6)
def test_unoriented_training(report):
    g = Grid(2, 128)
    ok = False
    for seed in SEEDS:
        ck = trained("s2-unoriented", seed)
        errs = circle_area_errors(ck.net, g)
        report(f"s2 seed {seed} epoch {ck.epoch}: worst area rel err {errs.max():.3f} over {len(errs)} steps")
        if errs.max() < 0.10:
            ok = True
            break
    # recorded, not gated
    s1 = circle_area_errors(trained("s1-unoriented", 0).net, g)
    report(f"s1 (not gated) worst area rel err {s1.max():.3f}, within 10%: {s1.max() < 0.10}")
    assert ok


@pytest.mark.criterion(7)
def test_multiphase_exactness(report):
    g = Grid(2, 128)
    a = field_from_shape(g, Ball((0.3, 0.5), 0.15), "oriented")
    b = field_from_shape(g, Ball((0.7, 0.5), 0.2), "oriented")
    c = field_from_shape(g, Ball((0.5, 0.8), 0.1), "oriented")
    u = np.stack([a, b, c, 1 - a - b - c])
    vols = volume_estimate(u, g)
    worst_p = worst_v = 0.0
    for name in ("lie", "eyre"):
        step = stepper(name, g)
        v = u
        for _ in range(100):
            v = multiphase_step(v, step, g, vols)
            worst_p = max(worst_p, float(np.max(np.abs(v.sum(axis=0) - 1))))
            worst_v = max(worst_v, float(np.max(np.abs(volume_estimate(v, g) - vols))))
    report(f"partition {worst_p:.1e}, volume {worst_v:.1e}")
    assert worst_p < 1e-12 and worst_v < 1e-8


@pytest.mark.slow
@pytest.mark.criterion(8)
def test_steiner_triangle(report):
    # trained at N=128, run at N=256 where the end-cap bias is 7% of the optimum
    g = Grid(2, 256)
    side = 0.4
    h = side * math.sqrt(3) / 2
    pts = [(0.5 - side / 2, 0.5 - h / 3), (0.5 + side / 2, 0.5 - h / 3), (0.5, 0.5 + 2 * h / 3)]
    optimum = math.sqrt(3) * side
    ok = False
    for seed in SEEDS:
        res = steiner_solve(pts, trained("s2-unoriented", seed).net, g)
        rel = abs(res.measure - optimum) / optimum
        report(f"seed {seed}: converged {res.converged} after {res.iterations}, "
               f"length {res.measure:.4f} vs {optimum:.4f} (rel {rel:.3f})")
        if res.converged and rel < 0.10:
            ok = True
            break
    assert ok


@pytest.mark.criterion(9)
def test_determinism_and_formats(tmp_path, report):
    hashes = {}
    for net, profile in (("s1", "oriented"), ("s2", "unoriented")):
        a = run_pipeline(tmp_path / f"{net}a", net, profile)
        b = run_pipeline(tmp_path / f"{net}b", net, profile)
        assert a == b
        hashes[net] = len(a)
    rng = np.random.default_rng(5)
    for d, n in ((1, 16), (2, 16), (3, 8)):
        g = Grid(d, n)
        u = rng.standard_normal(g.shape)
        v, g2 = field_from_bytes(field_to_bytes(u, g))
        assert v.tobytes() == u.tobytes() and g2 == g
        assert field_to_bytes(v, g2) == field_to_bytes(u, g)
    for kind in ("s1", "s2"):
        ck = Checkpoint(12, init_net(kind, Grid(2, 64), rng), 0.1 + 1e-17, math.pi)
        buf = checkpoint_to_bytes(ck)
        back = checkpoint_from_bytes(buf)
        assert checkpoint_to_bytes(back) == buf and back.net.theta.tobytes() == ck.net.theta.tobytes()
    rows = [MetricRow(0, 0.1, 1 / 3, 0.0, 2e-300, math.pi, math.nan)]
    path = tmp_path / "m.csv"
    metrics_write(rows, path)
    back = read_csv(path)[0]
    for key, value in zip(METRICS_HEADER, (0, 0.1, 1 / 3, 0.0, 2e-300, math.pi, math.nan)):
        got = float(back[key])
        assert got == value or (math.isnan(got) and math.isnan(value))
    assert path.read_bytes() == csv_bytes(METRICS_HEADER, rows)
    report(f"pipelines identical ({hashes['s1']} and {hashes['s2']} files); field, checkpoint round trips bit-exact")
