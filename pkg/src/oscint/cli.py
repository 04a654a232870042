"""Command-line entry point.

Every command writes its outputs plus a manifest.json into --out-dir.  Exit
codes: 0 success, 2 precondition/parameter errors, 3 resolution errors,
64 usage errors.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__

EXIT_OK, EXIT_PRECONDITION, EXIT_RESOLUTION, EXIT_USAGE = 0, 2, 3, 64


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


@dataclass
class RunManifest:
    command: str
    config: dict
    seeds: list
    version: str = __version__
    started: str = ""
    finished: str = ""
    outputs: list = field(default_factory=list)
    status: str = "ok"

    def write(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True, default=str)

    @classmethod
    def read(cls, path) -> "RunManifest":
        with open(path) as fh:
            return cls(**json.load(fh))


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


# shared builders ------------------------------------------------------------------------------

def _load_phase(spec: str):
    from .experiments import build_phase
    from .phase import phase_from_json
    p = Path(spec)
    if p.suffix == ".json" or p.exists():
        return phase_from_json(json.loads(p.read_text()))
    return build_phase(spec)


def _input(recipe: str, dim: int, lam: float, seed: int):
    from .experiments import build_input
    kind, _, arg = recipe.partition(":")
    d = {"kind": kind}
    if kind == "modulated":
        d["q"] = arg or "{lam}*w1^2/2"
    if kind == "random":
        d["seed"] = int(arg) if arg else seed
    return build_input(d, dim, lam)


def _floats(s: str) -> list[float]:
    return [float(v) for v in s.split(",") if v.strip()]


# commands ------------------------------------------------------------------------------------

def cmd_exponents(a, out: Path, man: RunManifest) -> None:
    from . import exponents as X
    if a.action == "table":
        text = X.format_table(a.n_max, a.format)
        sys.stdout.write(text)
        path = out / ("exponents.csv" if a.format == "csv" else "exponents.md")
        path.write_text(text)
        man.outputs.append(str(path))
    else:
        mode = {"pd": "positive-definite", "general": "general"}.get(a.mode, a.mode)
        broad = (lambda k: X.pbar(k, a.n)) if a.broad == "pbar" else X.bct_exponent
        conv = X.broad_to_linear(a.n, broad, mode)
        rec = conv.to_dict()
        sys.stdout.write(json.dumps(rec, indent=2) + "\n")
        path = out / "conversion.json"
        path.write_text(json.dumps(rec, indent=2))
        man.outputs.append(str(path))


def cmd_evaluate(a, out: Path, man: RunManifest) -> None:
    from .field import AmplitudeSpec, Lattice, ball_grid, ball_stratified, evaluate, evaluate_grid
    ph = _load_phase(a.phase)
    amp = AmplitudeSpec(a.amplitude)
    f = _input(a.f, ph.n - 1, a.lam, a.seed)
    lat = Lattice.covering(f.center, f.radius, a.h) if a.h else None
    radius = a.radius * a.lam
    region = {"kind": "ball", "center": [0.0] * ph.n, "radius": radius}
    if a.grid:
        if a.fast_transform in ("on", "audit") and ph.is_extension and lat is None:
            k = int(np.floor(radius / a.grid))
            ax = np.arange(-k, k + 1) * a.grid
            vals, err = evaluate_grid(ph, amp, a.lam, f, [ax] * (ph.n - 1), ax,
                                      audit=a.fast_transform == "audit")
            X = np.stack(np.meshgrid(*([ax] * ph.n), indexing="ij"), -1)
            inside = np.linalg.norm(X, axis=-1) <= radius
            pts = X[inside]
            vals = np.moveaxis(vals, 0, -1)[inside] if ph.n > 1 else vals
            from .field import SampledField
            fld = SampledField(pts, vals, a.lam, region, "grid", a.seed, a.grid ** ph.n)
            if err is not None:
                man.config["audit_deviation"] = err
        else:
            pts = ball_grid(np.zeros(ph.n), radius, a.grid)
            fld = evaluate(ph, amp, a.lam, f, pts, lattice=lat, region=region, scheme="grid",
                           seed=a.seed, cell_volume=a.grid ** ph.n)
    else:
        pts = ball_stratified(np.zeros(ph.n), radius, a.samples, a.seed)
        fld = evaluate(ph, amp, a.lam, f, pts, lattice=lat, region=region, scheme="random", seed=a.seed)
    csv_path, json_path = out / "field.csv", out / "field.json"
    fld.write(csv_path, json_path)
    man.outputs += [str(csv_path), str(json_path)]


def cmd_decompose(a, out: Path, man: RunManifest) -> None:
    from .wavepacket import decompose
    ph = _load_phase(a.phase)
    f = _input(a.f, ph.n - 1, a.lam, a.seed)
    dec = decompose(f, a.R, a.delta, a.lam)
    path = out / "packets.csv"
    dec.to_csv(path, ph, a.R)
    summary = {"packets": len(dec.packets), "residual": dec.residual, "defect": dec.defect,
               "f_norm": dec.f_norm, "pou_error": dec.pou_error, "dropped": dec.dropped}
    spath = out / "decomposition.json"
    spath.write_text(json.dumps(summary, indent=2, default=float))
    sys.stdout.write(json.dumps(summary, default=float) + "\n")
    man.outputs += [str(path), str(spath)]


def cmd_kbroad(a, out: Path, man: RunManifest) -> None:
    from . import kbroad as KB
    cfg = KB.KBroadConfig(a.k, a.A, a.p, a.K, n=a.n, frames=a.frames, seed=a.seed, mode=a.mode)
    if a.phase:
        from .field import AmplitudeSpec
        ph = _load_phase(a.phase)
        f = _input(a.f, ph.n - 1, a.lam, a.seed)
        rng = np.random.default_rng(a.seed)
        balls = rng.uniform(-a.lam / 4, a.lam / 4, (a.balls, ph.n))
        cf = KB.capfield_from_operator(ph, AmplitudeSpec(), a.lam, f, a.K, balls, a.samples, a.seed)
    else:
        cf = KB.random_capfield(a.n, a.K, a.caps, a.balls, a.samples, a.seed)
    res = KB.bl_norm(cf, {"kind": "all"}, cfg)
    path = out / "mu.csv"
    KB.write_mu_csv(path, res, cf)
    summary = {"BL": res.value, "balls": int(len(res.balls)), "max_gap": res.max_gap}
    spath = out / "kbroad.json"
    spath.write_text(json.dumps(summary, indent=2))
    sys.stdout.write(json.dumps(summary) + "\n")
    man.outputs += [str(path), str(spath)]


def cmd_partition(a, out: Path, man: RunManifest) -> None:
    from .variety import partition
    if a.points:
        pts = np.loadtxt(a.points, delimiter=",", ndmin=2)
    else:
        pts = np.random.default_rng(a.seed).uniform(0, 1, (a.random, a.dim))
    part = partition(pts, a.D, seed=a.seed)
    path = out / "cells.csv"
    part.to_csv(path)
    summary = {"degree": part.degree, "cells": len(part.cells), "weight_ratio": part.weight_ratio()}
    spath = out / "partition.json"
    spath.write_text(json.dumps(summary, indent=2))
    sys.stdout.write(json.dumps(summary) + "\n")
    man.outputs += [str(path), str(spath)]


def cmd_experiment(a, out: Path, man: RunManifest) -> None:
    from .experiments import run_named
    cfg = {}
    if a.config:
        cfg.update(json.loads(Path(a.config).read_text()))
    if a.n is not None:
        cfg["n"] = a.n
    if a.lambdas:
        cfg["lam_list"] = [int(v) if float(v).is_integer() else v for v in _floats(a.lambdas)]
    if a.seed is not None:
        cfg["seed"] = a.seed
    man.config["experiment_config"] = cfg
    rep = run_named(a.name, cfg)
    json_path = Path(a.out) if a.out else out / f"{a.name}.json"
    csv_path = json_path.with_suffix(".csv")
    rep.write(json_path, csv_path)
    line = {"experiment": a.name, "slope": rep.slope, "flags": rep.flags}
    if rep.fit is not None:
        line["ci95"] = list(rep.fit.ci)
    sys.stdout.write(json.dumps(line, default=float) + "\n")
    man.outputs += [str(json_path), str(csv_path)]


# parser ------------------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="oscint", description="Oscillatory integral operator experiments.")
    p.add_argument("--out-dir", default="oscint-out", help="directory for outputs and manifest.json")
    p.add_argument("--threads", type=int, default=None, help="cap on worker threads (else OSCINT_THREADS)")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    e = sub.add_parser("exponents", help="exact exponent tables and conversions")
    esub = e.add_subparsers(dest="action", required=True, parser_class=_Parser)
    t = esub.add_parser("table")
    t.add_argument("--n-max", type=int, default=20)
    t.add_argument("--format", choices=["markdown", "csv"], default="markdown")
    c = esub.add_parser("convert")
    c.add_argument("--n", type=int, required=True)
    c.add_argument("--mode", choices=["pd", "positive-definite", "general"], default="pd")
    c.add_argument("--broad", choices=["pbar", "bct"], default="pbar")

    def operator_args(q, need_lambda=True):
        q.add_argument("--phase", default="paraboloid:2", help="JSON file or paraboloid:n / kakeya:n / bourgain:n")
        q.add_argument("--lambda", dest="lam", type=float, required=need_lambda, default=None if need_lambda else 256.0)
        q.add_argument("--f", default="bump", help="zero | bump | random[:seed] | modulated[:q] | concentration")
        q.add_argument("--seed", type=int, default=0)

    ev = sub.add_parser("evaluate", help="sample T^lambda f on a ball of radius r*lambda")
    operator_args(ev)
    ev.add_argument("--amplitude", default="constant-one-on-Omega")
    ev.add_argument("--radius", type=float, default=0.25, help="ball radius as a multiple of lambda")
    ev.add_argument("--samples", type=int, default=2000)
    ev.add_argument("--grid", type=float, default=None, help="use a grid of this spacing instead of samples")
    ev.add_argument("--fast-transform", choices=["on", "off", "audit"], default="audit")
    ev.add_argument("--h", type=float, default=None, help="input lattice spacing (default: chosen automatically)")

    d = sub.add_parser("decompose", help="wave packet decomposition")
    operator_args(d)
    d.add_argument("--R", type=float, required=True)
    d.add_argument("--delta", type=float, default=0.1)

    k = sub.add_parser("kbroad", help="k-broad norm of a cap field")
    k.add_argument("--k", type=int, required=True)
    k.add_argument("--A", type=int, required=True)
    k.add_argument("--p", type=float, required=True)
    k.add_argument("--K", type=float, required=True)
    k.add_argument("--n", type=int, default=3)
    k.add_argument("--frames", type=int, default=2000)
    k.add_argument("--seed", type=int, default=0)
    k.add_argument("--mode", choices=["auto", "exhaustive", "greedy"], default="auto")
    k.add_argument("--caps", type=int, default=6)
    k.add_argument("--balls", type=int, default=8)
    k.add_argument("--samples", type=int, default=32)
    k.add_argument("--phase", default=None, help="sample an operator instead of a synthetic field")
    k.add_argument("--lambda", dest="lam", type=float, default=64.0)
    k.add_argument("--f", default="bump")

    pa = sub.add_parser("partition", help="polynomial partitioning of a point set")
    pa.add_argument("--D", type=int, required=True)
    pa.add_argument("--points", default=None, help="CSV of points, one per row")
    pa.add_argument("--random", type=int, default=10000)
    pa.add_argument("--dim", type=int, default=2)
    pa.add_argument("--seed", type=int, default=0)

    x = sub.add_parser("experiment", help="scaling experiments")
    xsub = x.add_subparsers(dest="action", required=True, parser_class=_Parser)
    r = xsub.add_parser("run")
    r.add_argument("name")
    r.add_argument("--config", default=None)
    r.add_argument("--out", default=None)
    r.add_argument("--n", type=int, default=None)
    r.add_argument("--lambdas", default=None, help="comma-separated lambda list")
    r.add_argument("--seed", type=int, default=None)
    return p


COMMANDS = {"exponents": cmd_exponents, "evaluate": cmd_evaluate, "decompose": cmd_decompose,
            "kbroad": cmd_kbroad, "partition": cmd_partition, "experiment": cmd_experiment}


def run(argv: Optional[list] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        sys.stderr.write(str(exc))
        return EXIT_USAGE

    from ._kernel import set_threads
    if args.threads:
        os.environ["OSCINT_THREADS"] = str(args.threads)
    set_threads(args.threads)

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = {k: v for k, v in vars(args).items()}
    seeds = [cfg["seed"]] if cfg.get("seed") is not None else []
    man = RunManifest(" ".join([args.command] + ([args.action] if hasattr(args, "action") else [])),
                      {"argv": argv, **cfg}, seeds, started=_now())
    from .field import ResolutionError
    from .wavepacket import RootFindingError
    code = EXIT_OK
    try:
        COMMANDS[args.command](args, out, man)
    except (ResolutionError, RootFindingError) as exc:
        sys.stderr.write(f"resolution error: {exc}\n")
        man.status, code = f"resolution error: {exc}", EXIT_RESOLUTION
    except (ValueError, KeyError, FileNotFoundError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        man.status, code = f"error: {exc}", EXIT_PRECONDITION
    man.finished = _now()
    mpath = out / "manifest.json"
    man.write(mpath)
    return code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
