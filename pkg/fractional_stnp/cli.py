# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
r"""
Experiment Command Line
^^^^^^^^^^^^^^^^^^^^^^^

Subcommands that run the solver experiments from a configuration file and emit plot-ready CSV tables, each with a
JSON metadata sidecar.

.. code-block:: bash

    fractional-stnp solve --config stnp_examples/config/fbefl_shock.yaml --out runs/shock

"""
import copy
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
from jsonargparse import ArgumentParser
from lightning_utilities.core.imports import module_available
from pytorch_lightning.utilities import rank_zero_info
from pytorch_lightning.utilities.exceptions import MisconfigurationException

from fractional_stnp.__about__ import __version__
from fractional_stnp.ansatz import eval_u, fit_initial
from fractional_stnp.config import (
    build_ansatz,
    build_grid,
    build_model,
    build_optimizer,
    build_oracle_config,
    build_projection,
    build_stepper,
    config_hash,
    initial_condition,
    load_run_config,
    manufactured_initial,
    ModelKind,
    RunConfig,
    save_run_config,
)
from fractional_stnp.exceptions import NumericalError, STNPError
from fractional_stnp.fracops import DTYPE, UniformGrid
from fractional_stnp.models import FbeflConfig, manufactured_solution
from fractional_stnp.reference import (
    boundary_samples,
    central_diff_fbefl,
    classical_cole_hopf,
    HopfColeOracle,
    load_oracle,
    relative_l2_error,
    save_oracle,
    spline_trace,
    total_variation,
    Trajectory,
    upwind_fbefl,
)
from fractional_stnp.stnp import run, segment_ends, Snapshot, StnpProblem
from fractional_stnp.timestepping import Scheme, StepDiagnostics

log = logging.getLogger(__name__)

_RICH_AVAILABLE = module_available("rich")
if _RICH_AVAILABLE:
    from rich.console import Console
    from rich.table import Table

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

DIAGNOSTIC_COLUMNS = (
    "t",
    "dt",
    "delta",
    "energy",
    "sigma_min",
    "sigma_max",
    "contraction",
    "trunc_proxy",
    "budget",
    "m_bound",
    "error_estimate",
    "budget_holds",
    "contracts_hold",
)

TraceTable = Optional[Tuple[np.ndarray, np.ndarray]]


class OutputWriter:
    """Writes comma-separated tables with 17 significant digits, each next to a JSON sidecar holding the config hash,
    the package version and the seed."""

    def __init__(self, directory: Union[str, Path], cfg: RunConfig) -> None:
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.meta = {"config_hash": config_hash(cfg), "version": __version__, "seed": cfg.ansatz.seed}
        self.written: List[Path] = []

    def csv(self, name: str, columns: Sequence[str], rows: Sequence[Sequence[float]]) -> Path:
        path = self.dir / f"{name}.csv"
        path.parent.mkdir(parents=True, exist_ok=True)
        table = np.asarray(rows, dtype=np.float64).reshape(len(rows), len(columns))
        np.savetxt(path, table, fmt="%.17g", delimiter=",", header=",".join(columns), comments="")
        self.json(name, {**self.meta, "file": path.name, "columns": list(columns)})
        self.written.append(path)
        return path

    def json(self, name: str, payload: Dict[str, Any]) -> Path:
        path = self.dir / f"{name}.json"
        with open(path, "w") as fp:
            json.dump(payload, fp, indent=2, sort_keys=True)
        return path

    def diagnostics(self, steps: Sequence[StepDiagnostics], name: str = "diagnostics") -> Path:
        rows = [[float(getattr(s, c)) for c in DIAGNOSTIC_COLUMNS] for s in steps]
        return self.csv(name, DIAGNOSTIC_COLUMNS, rows)


def _print_table(title: str, columns: Sequence[str], rows: Sequence[Sequence[Any]]) -> None:
    cells = [[f"{v:.6g}" if isinstance(v, float) else str(v) for v in row] for row in rows]
    if _RICH_AVAILABLE:
        table = Table(title=title)
        for col in columns:
            table.add_column(col)
        for row in cells:
            table.add_row(*row)
        Console().print(table)
    else:
        rank_zero_info("\n".join([title, ", ".join(columns)] + [", ".join(row) for row in cells]))


def _variant(cfg: RunConfig, updates: Dict[str, Any]) -> RunConfig:
    """A copy of ``cfg`` with dotted-path fields replaced."""
    new = copy.deepcopy(cfg)
    for dotted, value in updates.items():
        section, key = dotted.split(".")
        setattr(getattr(new, section), key, value)
    return new


def _time_label(t: float) -> str:
    return f"{t:.6g}"


def _test_grid(cfg: RunConfig) -> UniformGrid:
    return UniformGrid(cfg.grid.a, cfg.grid.b, cfg.output.test_points)


def _worker_init() -> None:
    torch.set_num_threads(1)


def _map(fn: Callable[..., Any], jobs: Sequence[Tuple[Any, ...]], threads: int) -> List[Any]:
    """Apply ``fn`` to every job; in a process pool when ``threads > 1``. Results keep the job order."""
    if threads <= 1 or len(jobs) <= 1:
        return [fn(*job) for job in jobs]
    with ProcessPoolExecutor(max_workers=threads, initializer=_worker_init) as pool:
        return list(pool.map(fn, *zip(*jobs)))


def build_problem(
    cfg: RunConfig,
    trace: TraceTable = None,
    scheme: Optional[Scheme] = None,
    checkpoint_dir: Optional[Path] = None,
) -> StnpProblem:
    """Assemble the run from a configuration; ``trace`` holds sampled Dirichlet data for FBENN."""
    return StnpProblem(
        model=build_model(cfg),
        ansatz=build_ansatz(cfg, None if trace is None else spline_trace(*trace)),
        grid=build_grid(cfg),
        projection=build_projection(cfg),
        stepper=build_stepper(cfg, scheme),
        fit=build_optimizer(cfg),
        proxy_every=cfg.output.proxy_every,
        snapshot_times=tuple(cfg.output.snapshot_times),
        checkpoint_every=cfg.output.checkpoint_every,
        checkpoint_dir=checkpoint_dir,
    )


def _command(body: Callable[[RunConfig, OutputWriter, int], int]) -> Callable[..., int]:
    """Wrap a subcommand body with configuration loading, flag overrides and exit-code mapping."""

    def command(
        config: Union[str, Path], seed: Optional[int] = None, out: Optional[Union[str, Path]] = None, threads: int = 1
    ) -> int:
        try:
            overrides: Dict[str, Any] = {}
            if seed is not None:
                overrides["ansatz"] = {"seed": seed}
            if out is not None:
                overrides["output"] = {"directory": str(out)}
            cfg = load_run_config(config, overrides)
            if threads < 1:
                raise MisconfigurationException(f"--threads must be positive, got {threads}.")
            writer = OutputWriter(cfg.output.directory, cfg)
            save_run_config(cfg, writer.dir / "config.yaml")
            code = body(cfg, writer, threads)
            rank_zero_info(f"Wrote {len(writer.written)} tables to '{writer.dir}'.")
            return code
        except MisconfigurationException as err:
            log.error(f"Configuration error: {err}")
            return EXIT_CONFIG
        except NumericalError as err:
            log.error(f"Numerical failure: {err}")
            return EXIT_NUMERICAL
        except STNPError as err:
            log.error(f"Invalid run parameters: {err}")
            return EXIT_CONFIG

    command.__name__ = body.__name__.lstrip("_")
    command.__doc__ = body.__doc__
    return command


def _fbenn_oracle(cfg: RunConfig) -> Tuple[HopfColeOracle, TraceTable]:
    oracle = HopfColeOracle(initial_condition(cfg), build_oracle_config(cfg))
    trace = None
    if cfg.stepper.t_end > 0:
        trace = boundary_samples(oracle, initial_condition(cfg), cfg.stepper.t_end, cfg.oracle.boundary_samples)
    return oracle, trace


def _oracle_profile(cfg: RunConfig, oracle: HopfColeOracle, t: float, cache_dir: Path) -> torch.Tensor:
    """Oracle values on the test grid, read from or added to the cache."""
    test = _test_grid(cfg)
    if t <= 0:
        return initial_condition(cfg)(test.points)
    meta = {
        **oracle.cfg.describe(),
        "t": t,
        "u0": cfg.model.initial_condition.value,
        "test_grid": [test.a, test.b, test.n_points],
    }
    cached = load_oracle(cache_dir, meta)
    if cached is not None:
        return cached[1]
    values = oracle(test.points, t)
    save_oracle(cache_dir, meta, test.points, values)
    return values


def _cache_dir(cfg: RunConfig, writer: OutputWriter) -> Path:
    return Path(cfg.oracle.cache_dir) if cfg.oracle.cache_dir else writer.dir / "oracle_cache"


def _write_snapshots(cfg: RunConfig, writer: OutputWriter, problem: StnpProblem, snapshots: List[Snapshot]) -> None:
    test = _test_grid(cfg)
    errors = []
    for t, q in snapshots:
        values = eval_u(q, problem.ansatz, test.points, t)
        writer.csv(f"snapshot_t{_time_label(t)}", ("x", "u"), torch.stack([test.points, values], dim=1).tolist())
        if cfg.model.manufactured:
            exact = manufactured_solution(test.points, t)
            errors.append((t, relative_l2_error(values, exact, test.weights)))
    if errors:
        writer.csv("errors", ("t", "rel_l2"), errors)


def _solve(cfg: RunConfig, writer: OutputWriter, threads: int) -> int:
    """Run the solver once and write snapshots, per-step diagnostics, checkpoints and a run report."""
    torch.set_num_threads(threads)
    u0 = initial_condition(cfg)
    trace = _fbenn_oracle(cfg)[1] if cfg.model.kind is ModelKind.FBENN else None
    ckpt_dir = writer.dir / "checkpoints" if cfg.output.checkpoint_every else None
    problem = build_problem(cfg, trace, checkpoint_dir=ckpt_dir)
    try:
        snapshots, report = run(problem, u0)
    except NumericalError as err:
        writer.diagnostics(err.trajectory)
        partial = list(err.snapshots)
        if err.q_last is not None and err.t_last is not None and (not partial or err.t_last > partial[-1][0]):
            partial.append((err.t_last, err.q_last))
        _write_snapshots(cfg, writer, problem, partial)
        raise
    writer.diagnostics(report.steps)
    _write_snapshots(cfg, writer, problem, snapshots)
    writer.json(
        "report",
        {
            **writer.meta,
            "accepted_steps": report.accepted_steps,
            "fit_mse": report.fit_mse,
            "e0": report.e0,
            "energy0": report.energy0,
            "budget": report.budget,
            "delta_integral": report.delta_integral,
            "proxy_integral": report.proxy_integral,
            "lambda_star": report.lambda_star,
            "budget_holds": report.budget_holds,
            "contracts_hold": report.contracts_hold,
        },
    )
    return EXIT_OK


def _convergence_cell(cfg: RunConfig, q_init: torch.Tensor) -> Tuple[float, int, int]:
    """Relative error at the final time for one grid size, GL order and depth."""
    problem = build_problem(cfg)
    try:
        snapshots, report = run(problem, manufactured_initial, q_init=q_init)
    except NumericalError as err:
        log.warning(f"Convergence cell with {cfg.grid.n_points} points failed: {err}")
        return math.nan, len(err.trajectory), 1
    t, q = snapshots[-1]
    test = _test_grid(cfg)
    values = eval_u(q, problem.ansatz, test.points, t)
    return relative_l2_error(values, manufactured_solution(test.points, t), test.weights), report.accepted_steps, 0


def _convergence(cfg: RunConfig, writer: OutputWriter, threads: int) -> int:
    """Sweep grid size, GL order and network depth on the manufactured FBEFL problem."""
    if not cfg.model.manufactured:
        raise MisconfigurationException("The convergence study requires the manufactured FBEFL model.")
    sweep = cfg.sweep
    xs = torch.linspace(cfg.grid.a, cfg.grid.b, cfg.fit.n_samples, dtype=DTYPE)
    fits: Dict[int, torch.Tensor] = {}
    for depth in sweep.depths:
        spec = build_ansatz(_variant(cfg, {"ansatz.depth": depth}))
        fits[depth], mse = fit_initial(spec, (xs, manufactured_initial(xs)), build_optimizer(cfg))
        rank_zero_info(f"Initial fit at depth {depth}: mse={mse:.3e}")

    cells = [(n, order, depth) for depth in sweep.depths for order in sweep.gl_orders for n in sweep.n_points]
    jobs = [
        (
            _variant(
                cfg, {"grid.n_points": n, "model.gl_order": order, "ansatz.depth": depth, "fit.iterations": 0}
            ),
            fits[depth],
        )
        for n, order, depth in cells
    ]
    results = _map(_convergence_cell, jobs, threads)
    rows = [(n, order, depth, err, steps, failed) for (n, order, depth), (err, steps, failed) in zip(cells, results)]
    columns = ("n_points", "gl_order", "depth", "rel_l2", "accepted_steps", "failed")
    writer.csv("convergence", columns, rows)
    _print_table("Relative L2 error versus collocation points", columns, rows)
    return EXIT_OK


def _grid_values(traj: Trajectory, t: float, xs: torch.Tensor) -> torch.Tensor:
    """Linear interpolation of the state recorded at ``t``; ``nan`` when the solver stopped earlier."""
    for t_rec, state in zip(traj.times, traj.states):
        if math.isclose(t_rec, t, rel_tol=1e-12, abs_tol=1e-14):
            return torch.as_tensor(np.interp(xs.numpy(), traj.grid.points.numpy(), state.numpy()), dtype=DTYPE)
    return torch.full_like(xs, math.nan)


def _grid_tv(traj: Trajectory, t: float) -> float:
    for t_rec, state in zip(traj.times, traj.states):
        if math.isclose(t_rec, t, rel_tol=1e-12, abs_tol=1e-14):
            return total_variation(state)
    return math.nan


def _compare(cfg: RunConfig, writer: OutputWriter, threads: int) -> int:
    """Run the solver, the central-difference baseline and the upwind reference on the same FBEFL problem."""
    if cfg.model.kind is not ModelKind.FBEFL:
        raise MisconfigurationException("The comparison runs on FBEFL models only.")
    torch.set_num_threads(threads)
    u0 = initial_condition(cfg)
    problem = build_problem(cfg)
    try:
        snapshots, report = run(problem, u0)
    except NumericalError as err:
        writer.diagnostics(err.trajectory)
        raise
    writer.diagnostics(report.steps)

    model = problem.model
    assert isinstance(model, FbeflConfig)
    times = [t for t, _ in snapshots]
    a, b, t_end, dt = cfg.grid.a, cfg.grid.b, cfg.stepper.t_end, cfg.compare.dt
    central = central_diff_fbefl(UniformGrid(a, b, cfg.compare.central_n), model, u0, dt, t_end, times)
    upwind = upwind_fbefl(UniformGrid(a, b, cfg.compare.upwind_n), model, u0, dt, t_end, times)
    if central.blew_up:
        rank_zero_info(f"The central-difference baseline blew up at t={central.blowup_time:.6g}.")

    test = _test_grid(cfg)
    tv_rows = []
    for t, q in snapshots:
        stnp_values = eval_u(q, problem.ansatz, test.points, t)
        overlay = torch.stack(
            [test.points, stnp_values, _grid_values(central, t, test.points), _grid_values(upwind, t, test.points)],
            dim=1,
        )
        writer.csv(f"compare_t{_time_label(t)}", ("x", "stnp", "central", "upwind"), overlay.tolist())
        tv_rows.append((t, total_variation(stnp_values), _grid_tv(central, t), _grid_tv(upwind, t)))
    columns = ("t", "tv_stnp", "tv_central", "tv_upwind")
    writer.csv("total_variation", columns, tv_rows)
    _print_table("Total variation", columns, tv_rows)
    return EXIT_OK


def _fbenn_member(
    cfg: RunConfig, scheme: Scheme, trace: TraceTable, exact: List[torch.Tensor]
) -> Tuple[List[float], int, int, List[torch.Tensor]]:
    """One ensemble member: errors at every snapshot, accepted steps, failure flag and test-grid values."""
    problem = build_problem(cfg, trace, scheme)
    test = _test_grid(cfg)
    try:
        snapshots, report = run(problem, initial_condition(cfg))
    except NumericalError as err:
        log.warning(f"FBENN run with seed {cfg.ansatz.seed} and {scheme.value} failed: {err}")
        return [math.nan] * len(exact), len(err.trajectory), 1, [torch.full_like(test.points, math.nan)] * len(exact)
    values = [eval_u(q, problem.ansatz, test.points, t) for t, q in snapshots]
    errors = [relative_l2_error(v, e, test.weights) for v, e in zip(values, exact)]
    return errors, report.accepted_steps, 0, values


def _classical_check(cfg: RunConfig, writer: OutputWriter, oracle: HopfColeOracle) -> int:
    test, u0, eps = _test_grid(cfg), initial_condition(cfg), oracle.cfg.epsilon
    rows = []
    for t in sorted(t for t in cfg.output.snapshot_times if t > 0):
        classical = classical_cole_hopf(test.points, t, u0, eps, cfg.grid.a, cfg.grid.b, n=cfg.oracle.fine_n)
        rows.append((t, relative_l2_error(oracle(test.points, t), classical, test.weights)))
    writer.csv("classical_check", ("t", "rel_l2"), rows)
    _print_table("Hopf-Cole oracle versus classical Cole-Hopf", ("t", "rel_l2"), rows)
    return EXIT_OK


def _fbenn(cfg: RunConfig, writer: OutputWriter, threads: int) -> int:
    """Run FBENN seed ensembles per time integrator and compare against the Hopf-Cole oracle."""
    if cfg.model.kind is not ModelKind.FBENN:
        raise MisconfigurationException("The fbenn subcommand requires an FBENN model.")
    oracle, trace = _fbenn_oracle(cfg)
    if cfg.oracle.check_classical:
        return _classical_check(cfg, writer, oracle)

    times = [0.0] + segment_ends(cfg.stepper.t_end, cfg.output.snapshot_times)
    cache_dir = _cache_dir(cfg, writer)
    exact = [_oracle_profile(cfg, oracle, t, cache_dir) for t in times]
    seeds = list(range(cfg.ansatz.seed, cfg.ansatz.seed + cfg.ensemble.size))
    members = [(scheme, seed) for scheme in cfg.ensemble.schemes for seed in seeds]
    jobs = [(_variant(cfg, {"ansatz.seed": seed}), scheme, trace, exact) for scheme, seed in members]
    results = _map(_fbenn_member, jobs, threads)

    test = _test_grid(cfg)
    overlay: Dict[str, List[torch.Tensor]] = {}
    summary = []
    for scheme in cfg.ensemble.schemes:
        runs = [res for (s, _), res in zip(members, results) if s is scheme]
        errors = np.asarray([res[0] for res in runs])
        rows = [
            [t, float(np.mean(errors[:, i])), float(np.std(errors[:, i]))] + errors[:, i].tolist()
            for i, t in enumerate(times)
        ]
        writer.csv(f"errors_{scheme.value}", ["t", "mean", "std"] + [f"seed_{s}" for s in seeds], rows)
        steps = [(seed, res[1], res[0][-1], res[2]) for seed, res in zip(seeds, runs)]
        writer.csv(f"steps_{scheme.value}", ("seed", "accepted_steps", "final_rel_l2", "failed"), steps)
        overlay[scheme.value] = runs[0][3]
        summary.append((scheme.value, float(np.mean([s[1] for s in steps])), rows[-1][1], rows[-1][2]))

    for i, t in enumerate(times):
        columns = ["x", "exact"] + [f"stnp_{name}" for name in overlay]
        data = torch.stack([test.points, exact[i]] + [values[i] for values in overlay.values()], dim=1)
        writer.csv(f"fbenn_t{_time_label(t)}", columns, data.tolist())
    _print_table("FBENN versus the Hopf-Cole solution", ("scheme", "mean_steps", "final_mean", "final_std"), summary)
    return EXIT_OK


def _oracle_cache(cfg: RunConfig, writer: OutputWriter, threads: int) -> int:
    """Precompute Hopf-Cole profiles at the snapshot times."""
    if cfg.model.kind is not ModelKind.FBENN:
        raise MisconfigurationException("The oracle cache is only defined for FBENN models.")
    torch.set_num_threads(threads)
    oracle = HopfColeOracle(initial_condition(cfg), build_oracle_config(cfg))
    cache_dir = _cache_dir(cfg, writer)
    for t in sorted({t for t in cfg.output.snapshot_times if t > 0}):
        _oracle_profile(cfg, oracle, t, cache_dir)
        rank_zero_info(f"Oracle profile at t={t:.6g} cached in '{cache_dir}'.")
    return EXIT_OK


cmd_solve = _command(_solve)
cmd_convergence = _command(_convergence)
cmd_compare = _command(_compare)
cmd_fbenn = _command(_fbenn)
cmd_oracle_cache = _command(_oracle_cache)

COMMANDS: Dict[str, Callable[..., int]] = {
    "solve": cmd_solve,
    "convergence": cmd_convergence,
    "compare": cmd_compare,
    "fbenn": cmd_fbenn,
    "oracle-cache": cmd_oracle_cache,
}


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog="fractional-stnp", description="Neural solvers for fractional Burgers equations.")
    subcommands = parser.add_subcommands(dest="subcommand")
    for name, command in COMMANDS.items():
        sub = ArgumentParser(description=(command.__doc__ or "").strip())
        sub.add_argument("--config", type=str, required=True, help="YAML or JSON run configuration.")
        sub.add_argument("--seed", type=Optional[int], default=None, help="Overrides ansatz.seed.")
        sub.add_argument("--out", type=Optional[str], default=None, help="Overrides output.directory.")
        sub.add_argument("--threads", type=int, default=1, help="Worker processes for sweeps and ensembles.")
        subcommands.add_subcommand(name, sub, help=(command.__doc__ or "").strip().split("\n")[0])
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        if exc.code is None:
            return EXIT_OK
        return exc.code if isinstance(exc.code, int) else EXIT_CONFIG
    name = args.subcommand
    opts = args[name]
    return COMMANDS[name](opts.config, seed=opts.seed, out=opts.out, threads=opts.threads)


if __name__ == "__main__":
    sys.exit(main())
