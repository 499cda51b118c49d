"""Command-line driver.

Usage: ``mcfnet <command> [config] [--set key=value ...]``.  Exit codes: 0 ok,
1 usage, 2 configuration, 3 numerical divergence, 4 I/O or file format.
"""
from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, load_config
from .constrained import (
    ConstraintInfeasible,
    multiphase_step,
    plateau_solve,
    steiner_solve,
)
from .formats import (
    FIELD_MAGIC,
    MetricRow,
    atomic_write,
    checkpoint_read,
    checkpoint_write,
    csv_bytes,
    field_read,
    field_write,
    metrics_write,
    train_trace_write,
)
from .grid import Grid
from .network import NETS, FormatError, init_net, param_count
from .phasefield import Ball, Profile, SampledCurve, field_from_shape, radius_estimate, volume_estimate
from .schemes import cahn_hilliard_energy, stepper
from .training import (
    Checkpoint,
    Dataset,
    DivergenceError,
    TrainConfig,
    generate_dataset,
    last_step_before_extinction,
    radius_at,
    train,
    validation_El,
)

log = logging.getLogger("mcfnet")

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_DIVERGENCE, EXIT_IO = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------- helpers

def make_grid(cfg: RunConfig) -> Grid:
    try:
        return Grid(cfg["d"], cfg["n"], cfg["L"], cfg["epsilon"], cfg["delta_t"])
    except ValueError as exc:
        raise ConfigError("n", str(exc)) from None


def train_config(cfg: RunConfig, grid: Grid) -> TrainConfig:
    tc = TrainConfig(
        n_train=cfg["n_train"], radius_min=cfg["radius_min"], radius_max=cfg["radius_max"], k=cfg["k"],
        batch_size=cfg["batch_size"], epochs=cfg["epochs"], lr=cfg["lr"], beta1=cfg["beta1"],
        beta2=cfg["beta2"], adam_eps=cfg["adam_eps"], seed=cfg["seed"],
        checkpoint_every=cfg["checkpoint_every"], validation_radii=tuple(cfg["validation_radii"]),
    )
    try:
        tc.validate(grid)
    except ValueError as exc:
        raise ConfigError("radius_min" if "radius" in str(exc) else "n_train", str(exc)) from None
    return tc


def dataset_save(data: Dataset, grid: Grid, profile: Profile, path) -> None:
    import io

    buf = io.BytesIO()
    np.savez(buf, radii=data.radii, inputs=data.inputs, targets=data.targets,
             grid=np.array([grid.d, grid.n, grid.L, grid.epsilon, grid.delta_t]),
             profile=np.array(profile.value))
    atomic_write(path, buf.getvalue())


def dataset_load(path):
    try:
        with np.load(path, allow_pickle=False) as z:
            d, n, L, eps, dt = z["grid"]
            grid = Grid(int(d), int(n), float(L), float(eps), float(dt))
            return Dataset(z["radii"], z["inputs"], z["targets"]), grid, Profile.parse(str(z["profile"]))
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{path}: not a dataset file ({exc})") from None


def check_grid_match(net, grid: Grid) -> None:
    if net.d != grid.d:
        raise ConfigError("d", f"checkpoint is {net.d}-d but the grid is {grid.d}-d")
    if net.kernel_size > grid.n:
        raise ConfigError("n", f"grid size {grid.n} smaller than kernel size {net.kernel_size}")


def load_net(cfg: RunConfig, grid: Grid):
    cfg.require("checkpoint")
    net = checkpoint_read(cfg["checkpoint"]).net
    check_grid_match(net, grid)
    return net


def make_stepper(cfg: RunConfig, grid: Grid):
    if cfg["stepper"] == "net":
        return load_net(cfg, grid)
    try:
        return stepper(cfg["stepper"], grid, cfg["alpha"])
    except ValueError as exc:
        raise ConfigError("alpha", str(exc)) from None


def ball_center(cfg: RunConfig, grid: Grid) -> tuple:
    c = cfg["center"]
    if c is None:
        return tuple(grid.center())
    if len(c) != grid.d:
        raise ConfigError("center", f"expected {grid.d} coordinates, got {len(c)}")
    return tuple(c)


def observe(u, n: int, grid: Grid, profile: Profile, reference) -> MetricRow:
    t = n * grid.delta_t
    vol = float(volume_estimate(u, grid))
    if reference is not None:
        exact = reference(t)
        vol_err = abs(vol - float(volume_estimate(exact, grid)))
        l2 = float(grid.cell_volume * np.sum((u - exact) ** 2))
    else:
        vol_err = l2 = math.nan
    try:
        rad = radius_estimate(u, grid, profile)
    except ValueError:
        rad = math.nan
    return MetricRow(n, t, vol, vol_err, l2, cahn_hilliard_energy(u, grid), rad)


def run_trajectory(step, u0, iterations: int, grid: Grid, profile: Profile, reference,
                   snapshot_every: int = 0, out_dir=None, prefix: str = "snap"):
    u = u0
    rows = [observe(u, 0, grid, profile, reference)]
    if out_dir is not None and snapshot_every:
        field_write(u, grid, Path(out_dir) / f"{prefix}_{0:06d}.pff")
    with np.errstate(all="ignore"):
        for n in range(1, iterations + 1):
            u = step(u)
            if not np.all(np.isfinite(u)):
                raise DivergenceError(f"non-finite field at iteration {n}")
            rows.append(observe(u, n, grid, profile, reference))
            if out_dir is not None and snapshot_every and n % snapshot_every == 0:
                field_write(u, grid, Path(out_dir) / f"{prefix}_{n:06d}.pff")
    return u, rows


def ball_reference(grid: Grid, center, r0: float, profile: Profile):
    def exact(t):
        r = radius_at(r0, t, grid.d)
        if not r > 0:
            return np.zeros(grid.shape)
        return field_from_shape(grid, Ball(center, r), profile)
    return exact


def initial_condition(cfg: RunConfig, grid: Grid, profile: Profile):
    """Field and analytic reference (``None`` when the field comes from a file)."""
    if cfg["init_field"] is not None:
        u, g = field_read(cfg["init_field"])
        if g.shape != grid.shape:
            raise ConfigError("init_field", f"field shape {g.shape} does not match grid {grid.shape}")
        return u, None
    center = ball_center(cfg, grid)
    if cfg["radius"] >= grid.L / 2:
        raise ConfigError("radius", f"must be below L/2 = {grid.L / 2}")
    ref = ball_reference(grid, center, cfg["radius"], profile)
    return ref(0.0), ref


# ---------------------------------------------------------------- commands

def cmd_gen_data(cfg: RunConfig) -> int:
    cfg.require("dataset")
    grid = make_grid(cfg)
    profile = Profile.parse(cfg["profile"])
    tc = train_config(cfg, grid)
    try:
        data = generate_dataset(grid, profile, tc)
    except ValueError as exc:
        raise ConfigError("radius_min", str(exc)) from None
    dataset_save(data, grid, profile, cfg["dataset"])
    print(f"wrote {len(data)} pairs (k={tc.k}) to {cfg['dataset']}")
    return EXIT_OK


def cmd_train(cfg: RunConfig) -> int:
    cfg.require("output_dir")
    out = Path(cfg["output_dir"])
    if cfg["dataset"] is not None:
        data, grid, profile = dataset_load(cfg["dataset"])
        for key in ("d", "n", "profile"):
            if key in cfg.explicit and cfg[key] != {"d": grid.d, "n": grid.n, "profile": profile.value}[key]:
                raise ConfigError(key, "conflicts with the dataset")
    else:
        grid = make_grid(cfg)
        profile = Profile.parse(cfg["profile"])
        data = generate_dataset(grid, profile, train_config(cfg, grid))
    tc = train_config(cfg, grid)
    if data.targets.shape[1] < tc.k:
        raise ConfigError("k", f"dataset holds {data.targets.shape[1]} steps, fewer than k={tc.k}")
    if cfg["kernel_size"] > grid.n:
        raise ConfigError("kernel_size", f"larger than grid size {grid.n}")
    net = init_net(cfg["net"], grid, np.random.default_rng(tc.seed), cfg["kernel_size"])
    result = train(net, data, tc, grid, profile, checkpoint_dir=out / "checkpoints")
    checkpoint_write(result.best, out / "best.drn")
    last = result.trace[-1]
    checkpoint_write(Checkpoint(last[0], result.final, last[1], validation_El(result.final, tc.validation_radii, grid, profile)),
                     out / "final.drn")
    train_trace_write(result.trace, out / "train_metrics.csv")
    print(f"best epoch {result.best.epoch} E_l {result.best.validation_score!r} loss {result.best.train_loss!r}")
    return EXIT_OK


def cmd_evolve(cfg: RunConfig) -> int:
    cfg.require("output_dir")
    grid = make_grid(cfg)
    profile = Profile.parse(cfg["profile"])
    step = make_stepper(cfg, grid)
    u0, ref = initial_condition(cfg, grid, profile)
    out = Path(cfg["output_dir"])
    _, rows = run_trajectory(step, u0, cfg["iterations"], grid, profile, ref, cfg["snapshot_every"], out)
    metrics_write(rows, out / "metrics.csv")
    print(f"{len(rows)} rows written to {out / 'metrics.csv'}")
    return EXIT_OK


def cmd_validate(cfg: RunConfig) -> int:
    grid = make_grid(cfg)
    profile = Profile.parse(cfg["profile"])
    net = load_net(cfg, grid)
    radii = cfg["validation_radii"]
    print(f"E_l {validation_El(net, radii, grid, profile)!r}")
    for r0 in radii:
        ref = ball_reference(grid, tuple(grid.center()), r0, profile)
        _, rows = run_trajectory(net, ref(0.0), last_step_before_extinction(r0, grid), grid, profile, ref)
        worst = 0.0
        for row in rows:
            r = radius_at(r0, row.time, grid.d)
            if r > 6 * grid.epsilon and math.isfinite(row.radius_estimate):
                worst = max(worst, abs(row.radius_estimate - r) / r)
        print(f"radius {r0!r}: max relative radius error {worst!r}")
    return EXIT_OK


def cmd_compare(cfg: RunConfig) -> int:
    cfg.require("output_dir", "checkpoint")
    grid = make_grid(cfg)
    profile = Profile.parse(cfg["profile"])
    u0, ref = initial_condition(cfg, grid, profile)
    out = Path(cfg["output_dir"])
    steppers = {"net": load_net(cfg, grid)}
    if profile is Profile.ORIENTED:
        steppers["lie"] = stepper("lie", grid)
        steppers["eyre"] = stepper("eyre", grid, cfg["alpha"])
    for name, step in steppers.items():
        _, rows = run_trajectory(step, u0, cfg["iterations"], grid, profile, ref)
        metrics_write(rows, out / f"compare_{name}.csv")
        print(f"{name}: final volume_error {rows[-1].volume_error!r} l2_error {rows[-1].l2_error!r}")
    return EXIT_OK


def cmd_multiphase(cfg: RunConfig) -> int:
    cfg.require("output_dir", "phases")
    grid = make_grid(cfg)
    step = make_stepper(cfg, grid)
    balls = cfg["phases"]
    if any(len(b) != grid.d + 1 for b in balls):
        raise ConfigError("phases", f"each phase needs {grid.d} center coordinates and a radius")
    fields = [field_from_shape(grid, Ball(tuple(b[:-1]), b[-1]), Profile.ORIENTED) for b in balls]
    fields.append(1.0 - np.sum(fields, axis=0))
    u = np.stack(fields)
    # exact targets from the initial data, which already sums to one
    volumes = volume_estimate(u, grid) if cfg["volume_constraint"] else None
    out = Path(cfg["output_dir"])
    rows = []
    header = ("iter", "time", "partition_error") + tuple(f"volume_{k}" for k in range(len(u)))

    def record(n):
        rows.append((n, n * grid.delta_t, float(np.abs(u.sum(axis=0) - 1).max()),
                     *[float(v) for v in volume_estimate(u, grid)]))
        if cfg["snapshot_every"] and n % cfg["snapshot_every"] == 0:
            for k, uk in enumerate(u):
                field_write(uk, grid, out / f"phase{k}_{n:06d}.pff")

    record(0)
    for n in range(1, cfg["iterations"] + 1):
        u = multiphase_step(u, step, grid, volumes)
        if not np.all(np.isfinite(u)):
            raise DivergenceError(f"non-finite phase field at iteration {n}")
        record(n)
    atomic_write(out / "multiphase.csv", csv_bytes(header, rows))
    print(f"max partition error {max(r[2] for r in rows)!r}")
    return EXIT_OK


def _write_obstacle_result(res, grid, out: Path, name: str) -> None:
    field_write(res.field, grid, out / f"{name}_final.pff")
    atomic_write(out / f"{name}.csv", csv_bytes(("iter", "measure"), list(enumerate(res.history))))
    state = "converged" if res.converged else "not converged"
    print(f"{name}: measure {res.measure!r} after {res.iterations} iterations ({state})")


def cmd_steiner(cfg: RunConfig) -> int:
    cfg.require("output_dir", "points")
    grid = make_grid(cfg)
    if grid.d != 2:
        raise ConfigError("d", "Steiner problems are 2-d")
    pts = cfg["points"]
    if len(pts) < 2 or any(len(p) != 2 for p in pts):
        raise ConfigError("points", "need at least two 2-d points")
    step = make_stepper(cfg, grid)
    res = steiner_solve(pts, step, grid, cfg["max_iters"], cfg["stall_tol"])
    _write_obstacle_result(res, grid, Path(cfg["output_dir"]), "steiner")
    return EXIT_OK


def plateau_curve(cfg: RunConfig, grid: Grid) -> SampledCurve:
    if cfg["curve_points"] is not None:
        pts = cfg["curve_points"]
        if len(pts) < 3 or any(len(p) != 3 for p in pts):
            raise ConfigError("curve_points", "need at least three 3-d points")
        return SampledCurve(tuple(pts), closed=True)
    c = np.asarray(cfg["curve_center"] if cfg["curve_center"] is not None else grid.center(), dtype=float)
    if c.shape != (3,):
        raise ConfigError("curve_center", "expected 3 coordinates")
    theta = np.linspace(0.0, 2 * np.pi, cfg["curve_samples"], endpoint=False)
    r = cfg["curve_radius"]
    pts = np.stack([c[0] + r * np.cos(theta), c[1] + r * np.sin(theta), np.full_like(theta, c[2])], axis=1)
    return SampledCurve(tuple(map(tuple, pts)), closed=True)


def cmd_plateau(cfg: RunConfig) -> int:
    cfg.require("output_dir")
    grid = make_grid(cfg)
    if grid.d != 3:
        raise ConfigError("d", "Plateau problems are 3-d")
    step = make_stepper(cfg, grid)
    res = plateau_solve(plateau_curve(cfg, grid), step, grid, None, cfg["max_iters"], cfg["stall_tol"])
    _write_obstacle_result(res, grid, Path(cfg["output_dir"]), "plateau")
    return EXIT_OK


def cmd_info(path) -> int:
    print(f"mcfnet {__version__}")
    if path is None:
        for name, cls in NETS.items():
            print(f"{name} ({cls.tag.decode()}): {cls.structural_count(2)} parameters in 2-d, "
                  f"{cls.structural_count(3)} in 3-d (kernel size 17)")
        return EXIT_OK
    head = Path(path).read_bytes()[:4]
    if head == FIELD_MAGIC:
        u, g = field_read(path)
        print(f"field PFF1: d={g.d} dims={u.shape} epsilon={g.epsilon!r} delta_t={g.delta_t!r} L={g.L!r}")
        return EXIT_OK
    ck = checkpoint_read(path)
    net = ck.net
    print(f"checkpoint {net.tag.decode()}: parameter count {param_count(net)} (d={net.d}, kernel size {net.kernel_size})")
    print(f"epoch {ck.epoch} train_loss {ck.train_loss!r} validation_score {ck.validation_score!r}")
    return EXIT_OK


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "evolve": cmd_evolve,
    "validate": cmd_validate,
    "compare": cmd_compare,
    "multiphase": cmd_multiphase,
    "steiner": cmd_steiner,
    "plateau": cmd_plateau,
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mcfnet", description="Phase-field mean curvature flow with trained networks.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("config", nargs="?", help="flat key = value config file")
        s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    s = sub.add_parser("info")
    s.add_argument("file", nargs="?", help="field or checkpoint file")
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "info":
            return cmd_info(args.file)
        cfg = load_config(args.config) if args.config else RunConfig()
        for item in args.set:
            if "=" not in item:
                print(f"usage error: --set expects KEY=VALUE, got {item!r}", file=sys.stderr)
                return EXIT_USAGE
            key, value = item.split("=", 1)
            cfg.set(key, value)
        return COMMANDS[args.command](cfg)
    except (ConfigError, ConstraintInfeasible) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DivergenceError, FloatingPointError) as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (OSError, FormatError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
