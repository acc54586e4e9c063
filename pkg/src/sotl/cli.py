"""Command-line entry point: ``sotl simulate | fit | crime``.

Exit codes: 0 on success, 1 on a runtime or data failure, 2 on a usage error.
Results go to ``--out`` or, when it is omitted, to ``$SOTL_OUTPUT_DIR`` (falling
back to ``./sotl-output``). Every run writes a manifest listing its config,
seed, timestamps and output files.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .datamodel import DataError, GroupData, MultiSourceProblem
from .l0solve import L0Options
from .l1solve import LassoPathConfig
from .select import default_gamma_max, fit_sjets, fit_sotl
from .stacking import build_stacked

log = logging.getLogger("sotl")

OUTPUT_ENV = "SOTL_OUTPUT_DIR"
DEFAULT_OUTPUT = "sotl-output"
METHOD_NAMES = ("sotl", "sjets")


class UsageError(Exception):
    pass


@dataclass
class RunManifest:
    command: str
    config: dict
    base_seed: int
    version: str = __version__
    started: str = ""
    finished: str = ""
    outputs: list[str] = field(default_factory=list)

    def write(self, path: Path) -> Path:
        path.write_text(json.dumps(asdict(self), indent=2))
        return path


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _out_dir(arg) -> Path:
    d = Path(arg) if arg else Path(os.environ.get(OUTPUT_ENV, DEFAULT_OUTPUT))
    d.mkdir(parents=True, exist_ok=True)
    return d


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _methods(text: str) -> tuple[str, ...]:
    ms = tuple(m.strip() for m in text.split(",") if m.strip())
    bad = [m for m in ms if m not in METHOD_NAMES]
    if not ms or bad:
        raise argparse.ArgumentTypeError(f"methods must be a subset of {','.join(METHOD_NAMES)}, got {text!r}")
    return ms


def _tag(v: float) -> str:
    return f"{v:g}".replace("-", "m")


def cmd_simulate(args) -> int:
    from .simlab import ScenarioConfig, SimulationError, run_replications, write_grid_table

    if not args.sigma or not args.n:
        raise UsageError("--sigma and --n need at least one value")
    ws = [0.0] if args.example == 3 else args.w
    try:
        grid = {
            (sigma, w): [
                ScenarioConfig(
                    example_id=args.example, n_t=n, sigma=sigma, w=w, p=args.p, s=args.s,
                    r=args.r, test_n=args.test_n, base_seed=args.seed, gamma_max=args.gamma_max,
                )
                for n in args.n
            ]
            for sigma in args.sigma
            for w in ws
        }
    except ValueError as exc:
        raise UsageError(str(exc)) from None

    out = _out_dir(args.out)
    manifest = RunManifest(
        "simulate",
        {"example": args.example, "sigma": args.sigma, "w": ws, "n": args.n, "p": args.p, "s": args.s,
         "r": args.r, "test_n": args.test_n, "methods": list(args.methods), "gamma_max": args.gamma_max,
         "jobs": args.jobs},
        args.seed,
        started=_now(),
    )
    try:
        for (sigma, w), configs in grid.items():
            blocks = []
            for cfg in configs:
                log.info("example %d sigma=%g w=%g n=%d: %d replications", cfg.example_id, sigma, w, cfg.n_t, cfg.r)
                blocks.append((cfg, run_replications(cfg, args.methods, args.jobs)))
            stem = out / f"example{args.example}_sigma{_tag(sigma)}_w{_tag(w)}"
            manifest.outputs.extend(str(p) for p in write_grid_table(blocks, stem))
    except SimulationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    manifest.finished = _now()
    manifest.write(out / "simulate.manifest.json")
    for path in manifest.outputs:
        if path.endswith(".csv"):
            print(Path(path).read_text(), end="")
    return 0


def read_group_csv(path) -> GroupData:
    """Headered CSV; the column named ``y`` is the response, the rest are features."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if "y" not in header:
            raise DataError(f"{path}: no column named 'y' in header")
        yi = header.index("y")
        rows = []
        for lineno, fields in enumerate(reader, start=2):
            if not fields:
                continue
            if len(fields) != len(header):
                raise DataError(f"{path}: line {lineno} has {len(fields)} fields, expected {len(header)}")
            try:
                rows.append([float(v) for v in fields])
            except ValueError:
                raise DataError(f"{path}: line {lineno}: non-numeric value") from None
    if not rows:
        raise DataError(f"{path}: no data rows")
    a = np.array(rows)
    return GroupData(np.delete(a, yi, axis=1), a[:, yi])


def cmd_fit(args) -> int:
    started = _now()
    groups = [read_group_csv(p) for p in args.groups]
    ps = {g.p for g in groups}
    if len(ps) != 1:
        detail = ", ".join(f"{p}: {g.p} features" for p, g in zip(args.groups, groups))
        raise DataError(f"feature counts differ across group files ({detail})")
    system = build_stacked(MultiSourceProblem(tuple(groups), 0))
    config = {"groups": [str(p) for p in args.groups], "method": args.method}
    if args.method == "sotl":
        gamma_max = args.gamma_max if args.gamma_max is not None else default_gamma_max(system)
        config["gamma_max"] = gamma_max
        config["gamma_max_default"] = args.gamma_max is None
        fit = fit_sotl(system, gamma_max, L0Options())
    else:
        lasso = LassoPathConfig(cv_folds=args.folds)
        config["lasso"] = asdict(lasso)
        fit = fit_sjets(system, lasso, args.seed)
    out = _out_dir(args.out)
    manifest = RunManifest("fit", config, args.seed, started=started)
    result_path = out / f"fit_{args.method}.json"
    result_path.write_text(fit.to_json(indent=2))
    manifest.outputs.append(str(result_path))
    manifest.finished = _now()
    manifest.write(out / "fit.manifest.json")
    print(json.dumps({"method": fit.method, "gamma_opt": fit.gamma_opt,
                      "support": np.flatnonzero(fit.beta_target).tolist(), "output": str(result_path)}))
    return 0


def cmd_crime(args) -> int:
    from .dataio import EmpiricalConfig, load_crime_csv, run_empirical, write_distribution

    table = load_crime_csv(args.data)
    for name, reason in table.provenance:
        log.info("dropped %s (%s)", name, reason)
    log.info("%d rows, %d retained predictors", table.n_rows, table.p_c)
    out = _out_dir(args.out)
    manifest = RunManifest(
        "crime",
        {"data": str(args.data), "experiment": args.experiment, "repeats": args.repeats,
         "methods": list(args.methods), "jobs": args.jobs, "p_c": table.p_c,
         "dropped_columns": [n for n, _ in table.provenance]},
        args.seed,
        started=_now(),
    )
    result = run_empirical(
        table, args.experiment, args.repeats, args.methods, EmpiricalConfig(base_seed=args.seed), args.jobs
    )
    manifest.outputs.extend(str(p) for p in write_distribution(result, out / f"crime_experiment{args.experiment}"))
    manifest.finished = _now()
    manifest.write(out / f"crime_experiment{args.experiment}.manifest.json")
    print(json.dumps(result.summary(), indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sotl", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed_help="base random seed"):
        p.add_argument("--seed", type=int, default=0, help=seed_help)
        p.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV} or ./{DEFAULT_OUTPUT})")
        p.add_argument("--jobs", type=int, default=os.cpu_count() or 1, help="parallel workers")

    sim = sub.add_parser("simulate", help="Monte Carlo tables for the synthetic examples")
    sim.add_argument("--example", type=int, required=True, choices=(1, 2, 3))
    sim.add_argument("--sigma", type=_float_list, required=True, help="noise levels, comma-separated")
    sim.add_argument("--w", type=_float_list, default=[0.0], help="offset magnitudes (ignored by example 3)")
    sim.add_argument("--n", type=_int_list, required=True, help="target sample sizes, comma-separated")
    sim.add_argument("--r", type=int, default=50, help="replications")
    sim.add_argument("--p", type=int, default=600)
    sim.add_argument("--s", type=int, default=10)
    sim.add_argument("--test-n", type=int, default=1000)
    sim.add_argument("--gamma-max", type=int, default=None)
    sim.add_argument("--methods", type=_methods, default=METHOD_NAMES)
    common(sim)
    sim.set_defaults(func=cmd_simulate)

    fit = sub.add_parser("fit", help="fit one method to user CSV files")
    fit.add_argument("groups", nargs="+", type=Path, help="headered CSVs with a 'y' column; first is the target")
    fit.add_argument("--method", choices=METHOD_NAMES, default="sotl")
    fit.add_argument("--gamma-max", type=int, default=None, help="largest support size (SOTL)")
    fit.add_argument("--folds", type=int, default=10, help="CV folds (S-JETS)")
    common(fit, "CV seed (S-JETS)")
    fit.set_defaults(func=cmd_fit)

    crime = sub.add_parser("crime", help="Communities and Crime transfer experiments")
    crime.add_argument("--data", type=Path, required=True, help="raw headerless communities.data file")
    crime.add_argument("--experiment", type=int, required=True, choices=(1, 2))
    crime.add_argument("--repeats", type=int, default=100)
    crime.add_argument("--methods", type=_methods, default=METHOD_NAMES)
    common(crime)
    crime.set_defaults(func=cmd_crime)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if getattr(args, "jobs", 1) < 1:
        parser.error("--jobs must be at least 1")
    if getattr(args, "repeats", 1) < 1:
        parser.error("--repeats must be at least 1")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except (DataError, OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
