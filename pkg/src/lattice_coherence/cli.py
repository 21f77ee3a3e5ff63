"""Command-line front end.

Every subcommand takes a model (``--model`` file, or the ``[model]`` table of a
``--config`` file or named ``--preset``) and writes CSV/JSON files into
``--out``.  Exit status is 0 on success, 3 when the model is inadmissible or
unstable and 4 on a precondition failure (lattice too small, bad input).
"""
from __future__ import annotations

import argparse
import datetime as _dt
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .admissibility import (
    INADMISSIBLE,
    NECESSARY_FAIL,
    HypothesisNotApplicable,
    InstabilityError,
    find_critical_L,
    hurwitz_grid_check,
    necessary_conditions_consensus,
    necessary_conditions_vehicular,
)
from .lattice import PreconditionError
from .models import Kind, ModelError, load_model, model_from_dict, tomllib
from .scaling import FIT_FIELDS, fit_scaling
from .simulator import (
    SUMMARY_FIELDS,
    SimConfig,
    simulate,
    summary_row,
    write_positions_csv,
    write_trace_csv,
)
from .spectral import REPORT_FIELDS, control_effort, density_rows, per_site_variance, report_rows, write_csv

EXIT_OK, EXIT_INADMISSIBLE, EXIT_PRECONDITION = 0, 3, 4

PRESETS = ("fig6_static", "fig6_dynamic", "fig7", "theorem1_table")


def _header(command: str) -> str:
    stamp = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    return f"generated {stamp} by lattice-coherence {__version__} {command}"


def load_config(args) -> tuple[dict, Path]:
    """Parsed experiment config (preset or file) and the directory it lives in."""
    if args.preset:
        if args.preset not in PRESETS:
            raise PreconditionError(f"unknown preset {args.preset!r}; choose from {', '.join(PRESETS)}")
        ref = resources.files("lattice_coherence") / "presets" / f"{args.preset}.toml"
        return tomllib.loads(ref.read_text()), Path(".")
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise PreconditionError(f"config file {path} does not exist")
        return tomllib.loads(path.read_text()), path.parent
    return {}, Path(".")


def resolve_models(args, config: dict, base: Path) -> list[tuple[str, object]]:
    if args.model:
        path = Path(args.model)
        if not path.exists():
            raise PreconditionError(f"model file {path} does not exist")
        return [(path.stem, load_model(path))]
    if "model" in config:
        return [(config["model"].get("name", "model"), model_from_dict(config["model"], base))]
    if "models" in config:
        return [(name, model_from_dict(doc, base)) for name, doc in config["models"].items()]
    raise PreconditionError("no model given: use --model, --config or --preset")


def _section(config: dict, name: str) -> dict:
    return dict(config.get(name, {}))


def _L_values(args, section: dict, default=None) -> list[int]:
    Ls = args.L if args.L else section.get("L", default)
    if Ls is None:
        raise PreconditionError("no lattice sizes given (--L)")
    if isinstance(Ls, int):
        Ls = [Ls]
    return sorted({int(L) for L in Ls})


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- commands ---------------------------------------------------------------------------


def cmd_density(args, config, models) -> int:
    sec = _section(config, "density")
    grid = args.grid if args.grid is not None else sec.get("grid", 64)
    out = _out_dir(args)
    for name, model in models:
        d = model.dimension
        axis = np.linspace(-np.pi, np.pi, grid + 1)[1:] if grid > 0 else np.array([])
        thetas = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1).reshape(-1, d) if grid > 0 else []
        rows = density_rows(model, thetas)
        fields = [f"theta_{i + 1}" for i in range(d)] + ["p_hat", "flag"]
        write_csv(out / f"density_{name}.csv", rows, fields, _header("density"))
    return EXIT_OK


def cmd_variance(args, config, models) -> int:
    sec = _section(config, "variance")
    Ls = _L_values(args, sec)
    oracle = args.oracle or sec.get("oracle", False)
    bounds = sec.get("bounds", True)
    out = _out_dir(args)
    for name, model in models:
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            reports = list(pool.map(lambda L: per_site_variance(model, L, oracle=oracle, bounds=bounds), Ls))
        write_csv(out / f"variance_{name}.csv", report_rows(reports), REPORT_FIELDS, _header("variance"))
    return EXIT_OK


def cmd_admissible(args, config, models) -> int:
    sec = _section(config, "admissible")
    grid = args.grid if args.grid is not None else sec.get("grid")
    L_max = args.L_max if args.L_max is not None else sec.get("L_max", 512)
    out = _out_dir(args)
    status = EXIT_OK
    for name, model in models:
        record = {"model": name, "template": model.template}
        necessary = None
        try:
            if model.kind is Kind.CONSENSUS_DYNAMIC:
                necessary = necessary_conditions_consensus(model)
            elif model.kind is Kind.VEHICULAR_DYNAMIC:
                necessary = necessary_conditions_vehicular(model)
        except HypothesisNotApplicable as exc:
            record["necessary_conditions"] = {"applicable": False, "reason": str(exc)}
        if necessary is not None:
            record["necessary_conditions"] = necessary.to_dict()
        verdict = hurwitz_grid_check(model, grid)
        record["grid"] = verdict.to_dict()
        crit = find_critical_L(model, L_max)
        record["critical_L"] = crit.to_dict()
        bad = (
            verdict.verdict == INADMISSIBLE
            or crit.verdict == INADMISSIBLE
            or (necessary is not None and necessary.verdict == NECESSARY_FAIL)
        )
        record["verdict"] = "inadmissible" if bad else "admissible (grid evidence)"
        if bad:
            status = EXIT_INADMISSIBLE
        (out / f"verdict_{name}.json").write_text(json.dumps(record, indent=2) + "\n")
        print(f"{name}: {record['verdict']}")
    return status


def cmd_scaling(args, config, models) -> int:
    sec = _section(config, "scaling")
    Ls = _L_values(args, sec, default=[32, 64, 128, 256, 512])
    out = _out_dir(args)
    rows = [fit_scaling(model, Ls, name).row() for name, model in models]
    write_csv(out / "scaling.csv", rows, FIT_FIELDS, _header("scaling"))
    return EXIT_OK


def _sim_config(args, sec: dict, L: int, topology: str) -> SimConfig:
    kw = {k: sec[k] for k in ("dt", "t_end", "warmup", "noise_intensity", "trajectories", "delta_x", "record_every") if k in sec}
    for k in ("dt", "t_end", "warmup", "trajectories", "record_every"):
        v = getattr(args, k, None)
        if v is not None:
            kw[k] = v
    seed = args.seed if args.seed is not None else sec.get("seed", 0)
    return SimConfig(L=L, topology=topology, seed=seed, **kw)


def cmd_simulate(args, config, models) -> int:
    sec = _section(config, "simulate")
    Ls = _L_values(args, sec, default=[20])
    topologies = [args.topology] if args.topology else sec.get("topologies", [sec.get("topology", "ring")])
    out = _out_dir(args)
    header = _header("simulate")
    for name, model in models:
        jobs = [(L, topo) for topo in topologies for L in Ls]

        def run(job):
            L, topo = job
            return job, simulate(model, _sim_config(args, sec, L, topo))

        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            results = list(pool.map(run, jobs))
        rows = []
        for (L, topo), trace in results:
            rows.append(summary_row(trace))
            if trace.samples.shape[0]:
                stride = sec.get("export_stride", 1)
                write_trace_csv(trace, out / f"trace_{name}_{topo}_L{L}.csv", stride, header)
                write_positions_csv(trace, out / f"positions_{name}_{topo}_L{L}.csv", stride, header)
        write_csv(out / f"summary_{name}.csv", rows, SUMMARY_FIELDS, header)
    return EXIT_OK


def cmd_effort(args, config, models) -> int:
    sec = _section(config, "effort")
    Ls = _L_values(args, sec, default=[16])
    out = _out_dir(args)
    fields = ("L", "effort", "bound_f", "bound_ab", "satisfies_bounds")
    for name, model in models:
        rows = []
        for L in Ls:
            e = control_effort(model, L)
            rows.append({"L": L, "effort": e.effort, "bound_f": e.bound_f, "bound_ab": e.bound_ab,
                         "satisfies_bounds": e.satisfies_bounds})
        write_csv(out / f"effort_{name}.csv", rows, fields, _header("effort"))
    return EXIT_OK


COMMANDS = {
    "density": cmd_density,
    "variance": cmd_variance,
    "admissible": cmd_admissible,
    "scaling": cmd_scaling,
    "simulate": cmd_simulate,
    "effort": cmd_effort,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--model", help="model file (TOML or JSON)")
    common.add_argument("--config", help="experiment config file (TOML)")
    common.add_argument("--preset", help=f"named experiment: {', '.join(PRESETS)}")
    common.add_argument("--out", default="out", help="output directory (default: out)")
    common.add_argument("--L", type=int, nargs="+", help="lattice side(s)")
    common.add_argument("--grid", type=int, help="frequency grid points per dimension")
    common.add_argument("--seed", type=int, help="random seed")
    common.add_argument("--threads", type=int, default=1, help="maximum worker threads")
    common.add_argument("--oracle", action="store_true", help="also run the dense real-space oracle")
    common.add_argument("--topology", choices=("ring", "string"), help="simulation topology")

    parser = argparse.ArgumentParser(prog="lattice-coherence", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("density", "variance", "scaling", "effort"):
        sub.add_parser(name, parents=[common])
    adm = sub.add_parser("admissible", parents=[common])
    adm.add_argument("--L-max", dest="L_max", type=int, help="largest lattice side scanned")
    sim = sub.add_parser("simulate", parents=[common])
    sim.add_argument("--dt", type=float)
    sim.add_argument("--t-end", dest="t_end", type=float)
    sim.add_argument("--warmup", type=float)
    sim.add_argument("--trajectories", type=int)
    sim.add_argument("--record-every", dest="record_every", type=int)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config, base = load_config(args)
        models = resolve_models(args, config, base)
        return COMMANDS[args.command](args, config, models)
    except InstabilityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INADMISSIBLE
    except (PreconditionError, ModelError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
