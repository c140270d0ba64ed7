"""Command line front end: ``strainedfilm evolve|stability|probe|sweep``.

Exit codes: 0 clean finish, 2 terminal event during an evolution (slope bound
active or pinch-off), 1 on any error.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import itertools
import json
import logging
import math
import multiprocessing
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .config import RunConfig, load_config, parse_config
from .elasticity import LameParams
from .errors import FilmError
from .geometry import volume
from .probes import DEFAULT_PARAMS, PROBE_IDS, probe_interpolation
from .stability import stability_report
from .stepper import TRACE_COLUMNS, evolve

EXIT_OK, EXIT_ERROR, EXIT_TERMINAL = 0, 1, 2
log = logging.getLogger("strainedfilm")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def gnuplot_script(trace_file: str, profiles_file: str) -> str:
    cols = {name: i + 1 for i, name in enumerate(TRACE_COLUMNS)}
    return "\n".join(
        [
            "# gnuplot script: load 'plot.gp'",
            "set datafile separator ','",
            "set key autotitle columnhead",
            "set multiplot layout 2,2",
            f"plot '{trace_file}' using {cols['t']}:{cols['E_total']} with lines title 'E_total'",
            f"plot '{trace_file}' using {cols['t']}:{cols['max_slope']} with lines title 'max slope'",
            f"plot '{trace_file}' using {cols['t']}:{cols['hminus1_velocity']} with lines title 'H^-1 velocity'",
            f"plot '{trace_file}' using {cols['t']}:{cols['min_h']} with lines title 'min h'",
            "unset multiplot",
            f"# profiles: '{profiles_file}' holds step, t, then node values per row",
            "",
        ]
    )


def run_config(cfg: RunConfig) -> dict:
    """Run one configured evolution and write its outputs; returns the summary."""
    h0 = cfg.initial_profile()
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    trace = evolve(h0, cfg.flow, cfg.psi, cfg.elastic_model(), t_end=cfg.t_end, **cfg.step_options)
    trace.write_csv(cfg.trace_path)
    trace.write_profiles(cfg.profiles_path, stride=cfg.snapshot_stride)
    cfg.plot_path.write_text(gnuplot_script(cfg.trace_name, cfg.profiles_name))
    v0 = volume(h0)
    drift = max(abs(r["volume"] - v0) / abs(v0) for r in trace.rows)
    return {
        "reason": trace.reason,
        "T0": trace.T0,
        "steps": len(trace.steps),
        "initial_energy": trace.rows[0]["E_total"],
        "final_energy": trace.rows[-1]["E_total"],
        "max_volume_drift": drift,
        "dissipation": trace.dissipation,
        "dissipation_constant": trace.dissipation_constant,
    }


def _print_summary(summary: dict, stream=None) -> None:
    stream = stream or sys.stdout
    print(f"steps: {summary['steps']}", file=stream)
    print(f"final energy: {summary['final_energy']!r} (initial {summary['initial_energy']!r})", file=stream)
    print(f"max relative volume drift: {summary['max_volume_drift']:.3e}", file=stream)
    if summary["T0"] is not None:
        print(f"slope bound active: T0 = {summary['T0']!r}", file=stream)
    print(f"termination: {summary['reason']}", file=stream)


def _exit_code(summary: dict) -> int:
    return EXIT_OK if summary["reason"] in ("t_end", "callback") else EXIT_TERMINAL


def cmd_evolve(args) -> int:
    cfg = load_config(args.config)
    if args.output_dir:
        cfg.output_dir = args.output_dir
    summary = run_config(cfg)
    _print_summary(summary)
    return _exit_code(summary)


def cmd_stability(args) -> int:
    params = LameParams(args.mu, args.lam, args.e0)
    rep = stability_report(args.b, params, args.psi11, numeric=args.numeric, nx=args.nx, ny=args.ny)
    print(f"nu_p = {rep.nu_p!r}")
    print(f"rhs = {rep.rhs_value!r}")
    print("d_loc = inf" if math.isinf(rep.d_loc) else f"d_loc = {rep.d_loc!r}")
    if args.numeric:
        thr = rep.numeric_threshold
        print("numeric threshold = inf" if math.isinf(thr) else f"numeric threshold = {thr!r}")
        if rep.relative_gap is not None:
            print(f"relative gap = {rep.relative_gap:.3e}")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            fh.write("# strainedfilm second variation v1\n")
            w = csv.writer(fh)
            w.writerow(["d", "k", "second_variation"])
            for k, d, val in rep.per_mode_second_variation:
                w.writerow([repr(d), k, repr(val)])
    if args.json:
        Path(args.json).write_text(json.dumps({"version": 1, **rep.to_dict()}, sort_keys=True, indent=2) + "\n")
    return EXIT_OK


def _parse_param(items) -> dict:
    out = {}
    for item in items or ():
        key, sep, val = item.partition("=")
        if not sep:
            raise FilmError(f"probe parameter {item!r} is not key=value")
        out[key.strip()] = float(val)
    return out


def cmd_probe(args, parser) -> int:
    if args.id not in PROBE_IDS:
        parser.print_usage(sys.stderr)
        print(f"error: unknown probe id {args.id!r}; valid ids: {', '.join(PROBE_IDS)}", file=sys.stderr)
        return EXIT_ERROR
    prm = _parse_param(args.param)
    report = probe_interpolation(
        args.id,
        prm,
        trials=args.trials,
        seed=args.seed,
        n=args.n,
        decay=args.decay,
        dim=args.dim,
        witness=args.witness,
        workers=args.workers,
    )
    text = report.to_json() + "\n"
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _sweep_job(job):
    text, base_dir, overrides, out_dir = job
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp.read_string(text)
    for (section, key), value in overrides.items():
        if not cp.has_section(section):
            cp.add_section(section)
        cp.set(section, key, value)
    if not cp.has_section("output"):
        cp.add_section("output")
    cp.set("output", "directory", out_dir)
    buf = io.StringIO()
    cp.write(buf)
    try:
        summary = run_config(parse_config(buf.getvalue(), base_dir=base_dir))
        return {"status": "ok", **summary}
    except FilmError as exc:
        return {"status": f"error: {exc}"}


def cmd_sweep(args) -> int:
    path = Path(args.config)
    load_config(path)  # validate the base configuration up front
    text = path.read_text()
    grid = []
    for item in args.set:
        key, sep, values = item.partition("=")
        section, dot, name = key.partition(".")
        if not sep or not dot:
            raise FilmError(f"--set {item!r} must look like section.key=v1,v2")
        grid.append(((section, name), [v.strip() for v in values.split(",")]))
    combos = list(itertools.product(*[vals for _, vals in grid])) if grid else [()]
    out_root = Path(args.output_dir)
    jobs = []
    for i, combo in enumerate(combos):
        overrides = {key: val for (key, _), val in zip(grid, combo)}
        jobs.append((text, str(path.parent), overrides, str((out_root / f"run_{i:03d}").resolve())))
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers, mp_context=multiprocessing.get_context("spawn")) as pool:
            results = list(pool.map(_sweep_job, jobs))
    else:
        results = [_sweep_job(j) for j in jobs]
    out_root.mkdir(parents=True, exist_ok=True)
    fields = ["run"] + [f"{s}.{k}" for (s, k), _ in grid] + ["status", "reason", "steps", "final_energy", "max_volume_drift"]
    with open(out_root / "sweep.csv", "w", newline="") as fh:
        fh.write("# strainedfilm sweep v1\n")
        w = csv.writer(fh)
        w.writerow(fields)
        for i, (combo, res) in enumerate(zip(combos, results)):
            w.writerow([i, *combo] + [res.get(k, "") for k in ("status", "reason", "steps", "final_energy", "max_volume_drift")])
    print(f"{len(results)} runs written to {out_root / 'sweep.csv'}")
    if any(r["status"] != "ok" for r in results):
        return EXIT_ERROR
    return EXIT_OK if all(r["reason"] in ("t_end", "callback") for r in results) else EXIT_TERMINAL


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="strainedfilm", description="Strained-film surface diffusion toolkit")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    ev = sub.add_parser("evolve", help="run a configured evolution")
    ev.add_argument("config")
    ev.add_argument("--output-dir", help="override [output] directory")

    st = sub.add_parser("stability", help="flat-film stability threshold")
    st.add_argument("--mu", type=float, required=True)
    st.add_argument("--lambda", dest="lam", type=float, required=True)
    st.add_argument("--e0", type=float, required=True)
    st.add_argument("--psi11", type=float, default=1.0)
    st.add_argument("--b", type=float, required=True)
    st.add_argument("--numeric", action="store_true", help="also locate the finite-element threshold")
    st.add_argument("--nx", type=int, default=256)
    st.add_argument("--ny", type=int, default=64)
    st.add_argument("--csv", help="write (d, k, second_variation) rows here")
    st.add_argument("--json", help="write the summary JSON here")

    pr = sub.add_parser("probe", help="randomized interpolation-inequality probe")
    pr.add_argument("--id", required=True, help=f"one of {', '.join(PROBE_IDS)}")
    pr.add_argument("--trials", type=int, default=200)
    pr.add_argument("--seed", type=int, default=0)
    pr.add_argument("--n", type=int, default=64)
    pr.add_argument("--dim", type=int)
    pr.add_argument("--decay", type=float, default=2.0)
    pr.add_argument("--witness", choices=("random", "pure"), default="random")
    pr.add_argument("--param", action="append", help="exponent override key=value, e.g. q=6")
    pr.add_argument("--workers", type=int, default=1)
    pr.add_argument("--output", help="write JSON here instead of stdout")

    sw = sub.add_parser("sweep", help="run a grid of evolutions across a worker pool")
    sw.add_argument("config")
    sw.add_argument("--set", action="append", default=[], help="section.key=v1,v2,... (repeatable)")
    sw.add_argument("--output-dir", default="sweep")
    sw.add_argument("--workers", type=int, default=1)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "evolve":
            return cmd_evolve(args)
        if args.command == "stability":
            return cmd_stability(args)
        if args.command == "probe":
            return cmd_probe(args, parser)
        return cmd_sweep(args)
    except (FilmError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
