"""Batch command line front end.

Exit codes: 0 success, 2 invalid configuration or input, 3 invariant violation.
"""
import argparse
import csv
import io
import json
import os
import re
import sys
import tempfile

import numpy as np

from . import analysis as an
from . import render as rd
from . import scheme as sc
from . import strain as st
from .errors import ConfigError, InvariantViolation, MicrolamError

CONFIG_VERSION = 1
METRIC_COLUMNS = ["k", "n_cells", "frozen_fraction", "unresolved_area", "max_well_dist",
                  "area_weighted_well_dist", "elastic_energy_exact", "bv_energy_exact", "wall_ms"]
PRESETS = {
    "case-i": [0.33, 0.33, 0.34],
    "case-ii": [0.2, 0.2, 0.6],
    "case-iii": [0.45, 0.45, 0.1],
}
DEFAULTS = {
    "version": CONFIG_VERSION,
    "scheme": "rectangle",
    "boundary": {"bary": PRESETS["case-i"]},
    "omega": [[0.0, 0.0], [1.0, 0.0], [0.5, float(np.sqrt(3.0) / 2.0)]],
    "iterations": 3,
    "v": 0.75,
    "max_depth": 5,
    "min_cell_area": None,
    "eps0": "auto",
    "max_cells": 200_000,
    "sigma": 0.55,
    "check": True,
    "energies": True,
    "outputs": [
        {"kind": "state-json", "path": "state.json"},
        {"kind": "metrics-csv", "path": "metrics.csv"},
        {"kind": "svg", "path": "field.svg"},
    ],
    "analysis": None,
}
OUTPUT_KINDS = ("svg", "png", "state-json", "metrics-csv")


def atomic_write(path, data):
    """Write bytes or text through a temporary file in the same directory."""
    path = os.path.abspath(path)
    os.makedirs(os.path.dirname(path), exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path), prefix=".tmp-")
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"newline": ""})) as fh:
            fh.write(data)
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def boundary_matrix(boundary):
    if not isinstance(boundary, dict):
        raise ConfigError("expected an object with 'bary' or 'matrix'", "boundary")
    if "bary" in boundary:
        lam = np.asarray(boundary["bary"], dtype=float)
        if lam.shape != (3,) or abs(lam.sum() - 1.0) > 1e-9 or np.any(lam < 0):
            raise ConfigError("barycentric coordinates must be 3 nonnegative numbers summing to 1",
                              "boundary.bary")
        return st.from_barycentric(lam)
    if "matrix" in boundary:
        M = np.asarray(boundary["matrix"], dtype=float)
        if M.shape != (2, 2):
            raise ConfigError("matrix must be 2 x 2", "boundary.matrix")
        return M
    raise ConfigError("expected 'bary' or 'matrix'", "boundary")


def validate_config(cfg):
    """Fill defaults and check types and ranges; returns a new dict."""
    if not isinstance(cfg, dict):
        raise ConfigError("configuration must be a JSON object")
    unknown = set(cfg) - set(DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown keys {sorted(unknown)}", sorted(unknown)[0])
    out = {**DEFAULTS, **cfg}
    if out["version"] != CONFIG_VERSION:
        raise ConfigError(f"unsupported version {out['version']}", "version")
    if out["scheme"] not in ("rectangle", "diamond"):
        raise ConfigError("must be 'rectangle' or 'diamond'", "scheme")
    if not isinstance(out["iterations"], int) or out["iterations"] < 0:
        raise ConfigError("must be an integer >= 0", "iterations")
    if not 0.0 < float(out["v"]) < 1.0:
        raise ConfigError("must lie in (0, 1)", "v")
    if not isinstance(out["max_depth"], int) or out["max_depth"] < 0:
        raise ConfigError("must be an integer >= 0", "max_depth")
    if not isinstance(out["max_cells"], int) or out["max_cells"] < 1:
        raise ConfigError("must be a positive integer", "max_cells")
    if out["eps0"] != "auto" and not (isinstance(out["eps0"], (int, float)) and out["eps0"] > 0):
        raise ConfigError("must be 'auto' or a positive number", "eps0")
    if out["min_cell_area"] is not None and float(out["min_cell_area"]) < 0:
        raise ConfigError("must be nonnegative", "min_cell_area")
    omega = np.asarray(out["omega"], dtype=float)
    if omega.shape != (3, 2):
        raise ConfigError("must be three 2D vertices", "omega")
    boundary_matrix(out["boundary"])
    for j, o in enumerate(out["outputs"]):
        if not isinstance(o, dict) or o.get("kind") not in OUTPUT_KINDS or "path" not in o:
            raise ConfigError(f"each output needs kind in {OUTPUT_KINDS} and a path", f"outputs[{j}]")
    if out["analysis"] is not None:
        a = out["analysis"]
        if not isinstance(a, dict) or "path" not in a:
            raise ConfigError("analysis block needs a path", "analysis")
    return out


def metrics_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_COLUMNS)
    for r in rows:
        w.writerow([_cell(r[c]) for c in METRIC_COLUMNS])
    return buf.getvalue()


def _cell(x):
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def parse_eps_grid(text):
    """'2^-3..2^-8' or a comma separated list of numbers."""
    m = re.fullmatch(r"\s*2\^(-?\d+)\s*\.\.\s*2\^(-?\d+)\s*", text)
    if m:
        a, b = int(m.group(1)), int(m.group(2))
        step = 1 if b >= a else -1
        return [2.0 ** j for j in range(a, b + step, step)]
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as err:
        raise ConfigError(f"cannot parse {text!r}", "eps-grid") from err


def parse_window(text):
    """'x0,y0,x1,y1' for a rectangle or 'x,y;x,y;...' for a convex polygon."""
    if text is None:
        return None
    try:
        if ";" in text:
            return np.array([[float(v) for v in p.split(",")] for p in text.split(";")])
        vals = [float(v) for v in text.split(",")]
    except ValueError as err:
        raise ConfigError(f"cannot parse {text!r}", "window") from err
    if len(vals) != 4:
        raise ConfigError("expected x0,y0,x1,y1", "window")
    x0, y0, x1, y1 = vals
    return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]])


def analyze_csv(Fd, eps_grid, N=1024):
    v = an.rasterize(Fd, N, quantity="v")
    pairs = []
    lines = ["eps,mollified_energy"]
    for e in eps_grid:
        E = an.mollified_energy(Fd, e, v=v)
        pairs.append((e, E))
        lines.append(f"{e!r},{E!r}")
    if len(pairs) >= 5:
        fit = an.scaling_fit(pairs)
        lines.append(f"mu_fit,{fit.mu!r}")
        lines.append(f"r2,{fit.r2!r}")
    return "\n".join(lines) + "\n", pairs


def cmd_run(args):
    cfg = {}
    if args.config:
        try:
            with open(args.config) as fh:
                cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as err:
            raise ConfigError(str(err), "config") from err
    if args.preset:
        cfg["boundary"] = {"bary": PRESETS[args.preset]}
    for key in ("scheme", "iterations", "max_cells"):
        if getattr(args, key) is not None:
            cfg[key] = getattr(args, key)
    if args.no_check:
        cfg["check"] = False
    if args.no_energies:
        cfg["energies"] = False
    cfg = validate_config(cfg)
    M = boundary_matrix(cfg["boundary"])
    try:
        Fd, rows = sc.run(np.asarray(cfg["omega"], dtype=float), M, cfg["scheme"], cfg["iterations"],
                          v=float(cfg["v"]), max_depth=cfg["max_depth"],
                          min_cell_area=cfg["min_cell_area"], eps0=cfg["eps0"],
                          max_cells=cfg["max_cells"], check=cfg["check"], sigma=float(cfg["sigma"]),
                          energies=cfg["energies"])
    except MicrolamError as err:
        if isinstance(err, InvariantViolation):
            raise
        raise ConfigError(str(err), "boundary") from err
    out_dir = args.out_dir or "."
    for o in cfg["outputs"]:
        path = os.path.join(out_dir, o["path"])
        kind = o["kind"]
        if kind == "state-json":
            atomic_write(path, sc.to_json(Fd))
        elif kind == "metrics-csv":
            atomic_write(path, metrics_csv(rows))
        elif kind == "svg":
            atomic_write(path, rd.render_svg(Fd, o.get("window"), aspect=float(o.get("aspect", 1.0))))
        elif kind == "png":
            atomic_write(path, rd.render_png(Fd, o.get("window"), px=int(o.get("px", 512)),
                                             aspect=float(o.get("aspect", 1.0))))
    if cfg["analysis"]:
        a = cfg["analysis"]
        grid = a.get("eps_grid", [2.0 ** -j for j in range(3, 8)])
        text, _ = analyze_csv(Fd, grid, int(a.get("raster_N", 1024)))
        atomic_write(os.path.join(out_dir, a["path"]), text)
    return 0


def _load_state(path):
    try:
        with open(path) as fh:
            return sc.from_json(fh.read())
    except (OSError, ValueError, KeyError) as err:
        raise ConfigError(str(err), "state") from err


def cmd_render(args):
    Fd = _load_state(args.state)
    window = parse_window(args.window)
    if not args.svg and not args.png:
        raise ConfigError("give --svg and/or --png", "render")
    if args.svg:
        atomic_write(args.svg, rd.render_svg(Fd, window, aspect=args.aspect, edges=args.edges))
    if args.png:
        atomic_write(args.png, rd.render_png(Fd, window, px=args.px, aspect=args.aspect))
    return 0


def cmd_analyze(args):
    Fd = _load_state(args.state)
    text, _ = analyze_csv(Fd, parse_eps_grid(args.eps_grid), args.N)
    if args.metrics:
        atomic_write(args.metrics, text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_validate(args):
    Fd = _load_state(args.state)
    res = sc.check_invariants(Fd, overlaps=not args.fast)
    print(json.dumps(res, sort_keys=True))
    return 0 if res["ok"] else 3


def build_parser():
    p = argparse.ArgumentParser(prog="microlam", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="construct a field and write the requested outputs")
    r.add_argument("--config")
    r.add_argument("--preset", choices=sorted(PRESETS))
    r.add_argument("--scheme", choices=["rectangle", "diamond"])
    r.add_argument("--iterations", type=int)
    r.add_argument("--max-cells", dest="max_cells", type=int)
    r.add_argument("--out-dir")
    r.add_argument("--no-check", action="store_true", help="skip per-step invariant checks")
    r.add_argument("--no-energies", action="store_true", help="skip the BV energy column")
    r.set_defaults(func=cmd_run)

    g = sub.add_parser("render", help="render a saved state")
    g.add_argument("--state", required=True)
    g.add_argument("--window", help="x0,y0,x1,y1 or x,y;x,y;...")
    g.add_argument("--svg")
    g.add_argument("--png")
    g.add_argument("--px", type=int, default=512)
    g.add_argument("--aspect", type=float, default=1.0)
    g.add_argument("--edges", action="store_true")
    g.set_defaults(func=cmd_render)

    a = sub.add_parser("analyze", help="mollified energies and scaling fit of a saved state")
    a.add_argument("--state", required=True)
    a.add_argument("--eps-grid", default="2^-3..2^-8")
    a.add_argument("--metrics")
    a.add_argument("--N", type=int, default=1024)
    a.set_defaults(func=cmd_analyze)

    v = sub.add_parser("validate-state", help="re-check the invariants of a saved state")
    v.add_argument("state")
    v.add_argument("--fast", action="store_true", help="skip the pairwise overlap test")
    v.set_defaults(func=cmd_validate)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except InvariantViolation as err:
        print(f"invariant violation: {err}", file=sys.stderr)
        return 3
    except MicrolamError as err:
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return 2
