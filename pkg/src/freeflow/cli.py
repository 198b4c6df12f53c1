"""Command line interface: ``freeflow norm|represent|reconstruct|crosscheck --config FILE [--out DIR]``.

Exit codes: 0 success, 2 invalid input, 3 solver did not converge.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from pathlib import Path

EXIT_OK, EXIT_INVALID, EXIT_NOT_CONVERGED = 0, 2, 3


class ConfigError(ValueError):
    pass


def _apply_thread_cap() -> None:
    raw = os.environ.get("FREEFLOW_THREADS")
    if raw is None:
        return
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"FREEFLOW_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"FREEFLOW_THREADS must be a positive integer, got {raw!r}")
    for var in ("NUMBA_NUM_THREADS", "OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)


def load_config(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    cfg["_dir"] = str(Path(path).resolve().parent)
    return cfg


def _section(cfg: dict, key: str, required: bool = True) -> dict:
    if key not in cfg:
        if required:
            raise ConfigError(f"config is missing the {key!r} section")
        return {}
    val = cfg[key]
    if not isinstance(val, dict):
        raise ConfigError(f"config section {key!r} must be an object")
    return val


def _resolve(cfg: dict, p: str) -> Path:
    path = Path(p)
    return path if path.is_absolute() else Path(cfg["_dir"]) / path


def parse_common(cfg: dict):
    from .geometry import DomainSpec, NormSpec
    from .solver import SolverParams

    try:
        dom = DomainSpec.from_dict(_section(cfg, "domain"))
        spec = NormSpec.from_dict(_section(cfg, "norm"))
        solver = _section(cfg, "solver", required=False)
        params = SolverParams(**{k: solver[k] for k in ("max_iters", "tol_gap", "tol_div") if k in solver})
        grid = _section(cfg, "grid", required=False)
        resolution = int(grid.get("resolution", 128))
        margin = float(grid.get("margin", 0.5))
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"invalid config: {exc!r}") from None
    if spec.dim != dom.dim:
        raise ConfigError("norm and domain dimensions differ")
    if resolution < 4 or margin < 0:
        raise ConfigError("grid resolution must be >= 4 and margin >= 0")
    return dom, spec, params, resolution, margin


def _emit(text: str, out: Path | None, name: str, stdout) -> None:
    stdout.write(text)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / name).write_text(text, encoding="utf-8", newline="\n")


def _csv_text(rows: list[list]) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def cmd_norm(cfg: dict, out: Path | None, stdout) -> int:
    from .grid import field_to_csv
    from .measure import PointMeasure
    from .solver import solve_measure

    dom, spec, params, resolution, margin = parse_common(cfg)
    m = PointMeasure.from_dict(_section(cfg, "measure"), dom.dim)
    if m.size and m.dim != dom.dim:
        raise ConfigError("measure and domain dimensions differ")
    sol = solve_measure(m, dom, spec, resolution, margin, params)
    _emit(sol.report.to_json() + "\n", out, "report.json", stdout)
    if out is not None:
        (out / "flow.csv").write_text(field_to_csv(sol.flow_original()), encoding="utf-8", newline="\n")
        (out / "potential.csv").write_text(field_to_csv(sol.potential_original()), encoding="utf-8",
                                           newline="\n")
    return EXIT_OK if sol.report.converged else EXIT_NOT_CONVERGED


def _grid_for(dom, resolution: int):
    from .grid import GridSpec

    if not dom.bounded:
        raise ConfigError("this command needs a bounded domain (box or ball)")
    return GridSpec.for_domain(dom, resolution)


def cmd_represent(cfg: dict, out: Path | None, stdout) -> int:
    import numpy as np

    from .fundamental import representative
    from .grid import field_to_csv, l1_norm

    dom, spec, params, resolution, _ = parse_common(cfg)
    if "target" not in cfg:
        raise ConfigError("config is missing 'target'")
    a = np.asarray(cfg["target"], dtype=float).reshape(-1)
    if a.shape != (dom.dim,):
        raise ConfigError("target must have the domain dimension")
    grid = _grid_for(dom, resolution)
    rep = representative(a, dom, grid, spec, params=params)
    summary = {"residual": rep.residual, "l1_norm": l1_norm(rep.field, spec), "support_radius": rep.radius}
    _emit(json.dumps(summary) + "\n", out, "summary.json", stdout)
    if out is not None:
        (out / "representative.csv").write_text(field_to_csv(rep.field), encoding="utf-8", newline="\n")
    return EXIT_OK


def _read_points(cfg: dict, d: int):
    import numpy as np

    pts = cfg.get("points")
    if pts is None:
        raise ConfigError("config is missing 'points'")
    if isinstance(pts, str):
        try:
            rows = list(csv.reader(_resolve(cfg, pts).read_text(encoding="utf-8").splitlines()))
        except OSError as exc:
            raise ConfigError(f"cannot read points file: {exc}") from None
        if rows and not all(_is_number(v) for v in rows[0]):
            rows = rows[1:]
        pts = rows
    try:
        arr = np.asarray(pts, dtype=float)
    except ValueError:
        raise ConfigError("points must be numeric") from None
    if arr.ndim != 2 or arr.shape[1] != d:
        raise ConfigError(f"points must be a list of {d}-vectors")
    return arr


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def cmd_reconstruct(cfg: dict, out: Path | None, stdout) -> int:
    from .grid import VectorField, field_from_csv
    from .mollify import Mollifier, Reconstructor

    dom, _, _, resolution, _ = parse_common(cfg)
    grid = _grid_for(dom, resolution)
    if "field" not in cfg:
        raise ConfigError("config is missing 'field'")
    try:
        text = _resolve(cfg, cfg["field"]).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read field CSV: {exc}") from None
    f = field_from_csv(text, grid)
    if not isinstance(f, VectorField):
        raise ConfigError("reconstruction needs a vector field CSV")
    points = _read_points(cfg, dom.dim)
    mol_cfg = _section(cfg, "mollifier", required=False)
    n = float(mol_cfg.get("n", 16))
    quad_m = int(mol_cfg.get("quad_m", 257))
    recs = [Reconstructor(f, Mollifier(k, dom.dim), dom, quad_m) for k in (n, 2 * n)]
    header = [f"x{k}" for k in range(dom.dim)] + ["value_n", "value_2n"]
    rows = [header]
    for p in points:
        vals = []
        for rec in recs:
            vals.append(repr(rec(p)) if rec.clearance_ok(p) else "skipped")
        rows.append([repr(float(v)) for v in p] + vals)
    _emit(_csv_text(rows), out, "reconstruction.csv", stdout)
    return EXIT_OK


def random_measure(rng, n_atoms: int, lo, hi):
    """``n_atoms`` uniform atoms in the box ``[lo, hi]`` with centered normal weights."""
    from .measure import PointMeasure

    x = rng.uniform(lo, hi, (n_atoms, len(lo)))
    a = rng.normal(size=n_atoms)
    a -= a.mean()
    return PointMeasure(x, a, len(lo))


def cmd_crosscheck(cfg: dict, out: Path | None, stdout) -> int:
    import numpy as np

    from .solver import solve_measure
    from .transport import MAX_ATOMS, w1_exact

    dom, spec, params, resolution, margin = parse_common(cfg)
    cc = _section(cfg, "crosscheck")
    try:
        n_atoms = int(cc["atoms"])
        seeds = cc.get("seeds", 10)
        seeds = list(range(int(seeds))) if isinstance(seeds, (int, float)) else [int(s) for s in seeds]
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid crosscheck section: {exc!r}") from None
    if not 0 <= n_atoms <= MAX_ATOMS:
        raise ConfigError(f"atom count must be between 0 and {MAX_ATOMS}")
    if "lo" in cc and "hi" in cc:
        lo, hi = np.asarray(cc["lo"], dtype=float), np.asarray(cc["hi"], dtype=float)
    elif dom.bounded:
        lo, hi = dom.bounds()
    else:
        raise ConfigError("crosscheck on an unbounded domain needs 'lo' and 'hi'")
    base = int(cfg.get("seed", 0))
    rows = [["id", "oracle", "solver", "rel_err"]]
    worst = 0.0
    if n_atoms > 0:
        for s in seeds:
            rng = np.random.default_rng(base + s)
            m = random_measure(rng, n_atoms, lo, hi)
            exact, _ = w1_exact(m, spec)
            value = solve_measure(m, dom, spec, resolution, margin, params).report.value
            err = abs(value - exact) / exact if exact > 0 else abs(value)
            worst = max(worst, err)
            rows.append([s, repr(exact), repr(value), repr(err)])
        rows.append(["max", "", "", repr(worst)])
    _emit(_csv_text(rows), out, "crosscheck.csv", stdout)
    return EXIT_OK


COMMANDS = {
    "norm": cmd_norm,
    "represent": cmd_represent,
    "reconstruct": cmd_reconstruct,
    "crosscheck": cmd_crosscheck,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="freeflow", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--out", help="directory for output artifacts")
    return p


def main(argv: list[str] | None = None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    try:
        _apply_thread_cap()
        cfg = load_config(args.config)
        out = Path(args.out) if args.out else None
        return COMMANDS[args.command](cfg, out, stdout)
    except ValueError as exc:
        stderr.write(f"freeflow {args.command}: {exc}\n")
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
