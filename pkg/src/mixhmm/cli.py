"""Command-line driver: ``mixhmm md-riemann | dataset | train | simulate``.

Every stage writes ``manifest.json`` into its output directory, also when it
fails. Stage errors map to distinct exit codes through their ``exit_code``.
"""

from __future__ import annotations

import argparse
import json
import os
import platform
import sys
import time
import traceback
from dataclasses import replace

import numpy as np

from . import __version__
from .config import STAGES, ConfigError, PipelineConfig, dump_config, emit, parse_config, with_changes
from .continuum import EXAMPLE_1, EXAMPLE_2, frame_solver, run_simulation
from .dataset import DATASET_VERSION, generate_dataset, read_dataset, usable
from .eos import default_eos
from .md.riemann import solve_md_riemann
from .surrogate import MODEL_VERSION, SurrogateMicro, load_params, params_summary, save_params, train

EXIT_OK = 0
EXIT_UNEXPECTED = 1


def exit_code_for(err: BaseException) -> int:
    return int(getattr(err, "exit_code", EXIT_UNEXPECTED))


def versions() -> dict:
    return {
        "mixhmm": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "dataset_format": DATASET_VERSION,
        "model_format": MODEL_VERSION,
    }


def write_manifest(out_dir, config: PipelineConfig, status: str, wall: float, extra: dict | None = None):
    doc = {
        "stage": config.stage,
        "status": status,
        "config_hash": config.hash(),
        "seed": config.seed,
        "versions": versions(),
        "wall_time_s": wall,
        "config": emit(config),
    }
    doc.update(extra or {})
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, default=str)
    return path


def check_paths(config: PipelineConfig) -> None:
    """Input files referenced by the chosen stage must exist."""
    if config.stage == "train" and not os.path.isfile(config.paths.dataset):
        raise ConfigError("paths.dataset", f"dataset file {config.paths.dataset!r} does not exist")
    needs_model = config.stage == "simulate" and config.simulate.sim.solver == "surrogate"
    if needs_model and not os.path.isfile(config.paths.model):
        raise ConfigError("paths.model", f"model file {config.paths.model!r} does not exist")


# ---------------------------------------------------------------------------
# stages


def run_md_riemann(config: PipelineConfig, out: str) -> dict:
    table = config.lj.table(config.md.r_cutoff)
    sol = solve_md_riemann(
        config.riemann.u_minus,
        config.riemann.u_plus,
        config.md,
        seed=config.seed,
        table=table,
        diagnostics_dir=os.path.join(out, "diagnostics"),
    )
    doc = {
        "u_minus": sol.u_minus.tolist(),
        "u_plus": sol.u_plus.tolist(),
        "s": sol.s,
        "s_stderr": sol.s_stderr,
        "s_stderr_ols": sol.s_stderr_ols,
        "degenerate": sol.degenerate,
        "warnings": sol.warnings,
        "units": {"rho": "kg/m3", "m": "kg/(m2 s)", "s": "m/s"},
        "seed": config.seed,
    }
    path = os.path.join(out, "solution.json")
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
    return {"artifacts": [path, os.path.join(out, "diagnostics", "interface_trace.txt")]}


def run_dataset(config: PipelineConfig, out: str) -> dict:
    path = config.paths.dataset or os.path.join(out, "dataset.csv")
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    records = generate_dataset(
        config.dataset.n_samples,
        seed=config.seed,
        params=config.dataset.md,
        path=path,
        jobs=config.dataset.jobs,
        progress=lambda k, rec: print(
            f"record {k + 1}/{config.dataset.n_samples}" + (f" failed: {rec.cause}" if rec.failed else ""),
            file=sys.stderr,
        ),
    )
    n_failed = sum(r.failed for r in records)
    return {"artifacts": [path], "records": len(records), "failed_records": n_failed}


def run_train(config: PipelineConfig, out: str) -> dict:
    records, data_hash = read_dataset(config.paths.dataset)
    X, Y = usable(records)
    result = train(X, Y, replace(config.train, seed=config.seed))
    model = config.paths.model or os.path.join(out, "model.npz")
    parent = os.path.dirname(model)
    if parent:
        os.makedirs(parent, exist_ok=True)
    save_params(result.params, model)
    loss_csv = os.path.join(out, "loss.csv")
    result.write_history(loss_csv)
    return {
        "artifacts": [model, loss_csv],
        "dataset_config_hash": data_hash,
        "usable_records": int(len(X)),
        "best_epoch": result.best_epoch,
        "model": params_summary(result.params),
    }


class MdInterfaceMicro:
    """Rotated-frame micro solver calling the atomistic Riemann solver.

    Each call uses the next seed of a counter started at the stage seed.
    """

    def __init__(self, params, table, seed: int):
        self.params = params
        self.table = table
        self.seed = seed
        self.calls = 0

    def __call__(self, u_minus, u_plus):
        sol = solve_md_riemann(u_minus, u_plus, self.params, seed=self.seed + self.calls, table=self.table)
        self.calls += 1
        return sol.u_minus, sol.u_plus, sol.s


def initial_data(config: PipelineConfig):
    kind = config.simulate.initial
    if kind == "example1":
        return EXAMPLE_1
    if kind == "example2":
        return EXAMPLE_2
    return np.array(config.simulate.u_liquid), np.array(config.simulate.u_vapor)


def run_simulate(config: PipelineConfig, out: str) -> dict:
    sim = config.simulate.sim
    if sim.solver == "surrogate":
        micro = SurrogateMicro(load_params(config.paths.model))
    else:
        micro = MdInterfaceMicro(config.md, config.lj.table(config.md.r_cutoff), config.seed)
    res = run_simulation(sim, frame_solver(micro), initial_data(config), default_eos(), out_dir=out)
    extra = {
        "artifacts": res.snapshots + [os.path.join(out, "interface_trajectory.csv")],
        "steps": int(len(res.times) - 1),
        "simulation_status": res.status,
        "error": res.error,
    }
    if res.status != "completed":
        extra["exit_code"] = 60
    return extra


RUNNERS = {
    "md-riemann": run_md_riemann,
    "dataset": run_dataset,
    "train": run_train,
    "simulate": run_simulate,
}


def execute(config: PipelineConfig, out: str | None = None) -> int:
    """Run the configured stage; returns the exit status. The manifest is always written."""
    out = out or config.paths.out
    t0 = time.perf_counter()
    try:
        os.makedirs(out, exist_ok=True)
        check_paths(config)
        extra = RUNNERS[config.stage](config, out)
    except Exception as err:
        code = exit_code_for(err)
        write_manifest(
            out, config, "failed", time.perf_counter() - t0,
            {"exit_code": code, "error": f"{type(err).__name__}: {err}"},
        )  # fmt: skip
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        if code == EXIT_UNEXPECTED:
            traceback.print_exc()
        return code
    code = int(extra.pop("exit_code", EXIT_OK))
    write_manifest(out, config, "completed" if code == EXIT_OK else "failed", time.perf_counter() - t0, extra)
    return code


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mixhmm", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"mixhmm {__version__}")
    sub = parser.add_subparsers(dest="stage", required=True)
    for stage in STAGES:
        p = sub.add_parser(stage)
        p.add_argument("--config", help="YAML configuration file (defaults when omitted)")
        p.add_argument("--seed", type=int, help="stage seed (unsigned 64-bit)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--print-config", action="store_true", help="print the resolved configuration and exit")
        if stage == "simulate":
            p.add_argument("--solver", choices=("surrogate", "md"))
        if stage == "dataset":
            p.add_argument("--jobs", type=int)
    return parser


def resolve_config(args) -> PipelineConfig:
    config = parse_config(args.config)
    changes = {"stage": args.stage}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.out is not None:
        changes["paths.out"] = args.out
    if getattr(args, "solver", None) is not None:
        changes["simulate.sim.solver"] = args.solver
    if getattr(args, "jobs", None) is not None:
        changes["dataset.jobs"] = args.jobs
    return with_changes(config, **changes)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = resolve_config(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        out = args.out or "out"
        extra = {"exit_code": err.exit_code, "error": str(err)}
        write_manifest(out, PipelineConfig(stage=args.stage), "failed", 0.0, extra)
        return err.exit_code
    if args.print_config:
        sys.stdout.write(dump_config(config))
        return EXIT_OK
    return execute(config)


if __name__ == "__main__":
    sys.exit(main())
