"""Batch command-line front end: JSON configs in, plot-ready data files out.

Four subcommands cover the pipeline. ``propagate`` tabulates Euclidean
amplitudes and the spectrum behind them, ``fit`` calibrates a trial action
against such a table (single T or a whole T schedule), ``analytic`` emits
the large-T closed forms (ground state, transformation-law residual, WKB
report, hydrogen table), and ``poincare`` generates surface-of-section
data for the classical action and, when a fit result is supplied, for the
fitted action, plus a comparison report.

Every run is a pure function of its config file: fixed iteration orders,
no randomness, no wall clock, so reruns are bitwise identical. Files are
written to a temporary name and renamed into place, and all results of a
command are computed before the first file is written, so a failing run
leaves no partial output. Exit codes: 0 success, 2 config error, 3
numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from .asymptotics import (
    ground_state_from_quantum_action,
    hydrogen_table,
    invert_transformation_law,
    transformation_law_residual,
    transformation_law_residual_grid,
    ground_state_spectral,
    wkb_compare,
)
from .chaos import (
    SectionSpec,
    compare_sections,
    generate_section,
    orbit_thickness,
    section_initial_conditions,
    section_occupancy,
)
from .errors import NumericalError
from .model import ActionSpec
from .propagator import Grid, decompose_for_time, euclidean_propagate, tensor_pairs
from .qfit import FitProblem, default_pairs, fit_flow, fit_quantum_action, flow_rows, FLOW_CSV_HEADER


class ConfigError(ValueError):
    """Config file violates the published schema."""


def _expect(cond: bool, msg: str):
    if not cond:
        raise ConfigError(msg)


def _get(cfg: dict, key: str, kinds, default=KeyError, where: str = "config"):
    if key not in cfg:
        if default is KeyError:
            raise ConfigError(f"{where}: missing required key '{key}'")
        return default
    val = cfg[key]
    if kinds is not None and not isinstance(val, kinds):
        names = getattr(kinds, "__name__", None) or "/".join(k.__name__ for k in kinds)
        raise ConfigError(f"{where}: key '{key}' must be {names}, got {type(val).__name__}")
    return val


def _parse_action(data, where: str, confining: bool = False) -> ActionSpec:
    _expect(isinstance(data, dict), f"{where} must be an object")
    try:
        return ActionSpec.from_json_dict(data, confining=confining)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _parse_grid(data, where: str = "grid") -> Grid:
    _expect(isinstance(data, dict), f"{where} must be an object")
    ext = _get(data, "extents", list, where=where)
    npt = _get(data, "npoints", list, where=where)
    try:
        return Grid(tuple(ext), tuple(npt))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _snap_axis_points(grid: Grid, axis: int, lo: float, hi: float, count: int):
    """Distinct grid nodes closest to an even subdivision of [lo, hi]."""
    nodes = grid.axes()[axis]
    want = np.linspace(lo, hi, count)
    idx = sorted(set(int(np.argmin(np.abs(nodes - w))) for w in want))
    return [float(nodes[i]) for i in idx]


def _parse_pairs(data, grid: Grid, classical: ActionSpec = None, where: str = "pairs"):
    """Boundary pairs from one of the published forms.

    "auto" picks nodes where the spectral ground state is above 1e-4 of its
    peak; {"points": [...]} takes the tensor square of explicit points;
    {"points_per_axis", "span"} snaps an even subdivision to grid nodes;
    a plain list is read as explicit [initial, final] pairs.
    """
    if data == "auto":
        _expect(classical is not None, f"{where}: 'auto' needs a classical action")
        return default_pairs(classical, grid)
    if isinstance(data, dict):
        if "points" in data:
            pts = _get(data, "points", list, where=where)
            _expect(len(pts) > 0, f"{where}: empty point list")
            points = [_parse_point(p, grid.dim, where) for p in pts]
            return tensor_pairs(points, points)
        count = _get(data, "points_per_axis", int, where=where)
        span = _get(data, "span", list, where=where)
        _expect(count >= 2, f"{where}: points_per_axis must be >= 2")
        if len(span) == 2 and not isinstance(span[0], list):
            span = [span] * grid.dim
        _expect(
            len(span) == grid.dim and all(isinstance(s, list) and len(s) == 2 for s in span),
            f"{where}: span must be [lo, hi] (or one such pair per axis)",
        )
        axes_points = [
            _snap_axis_points(grid, a, float(span[a][0]), float(span[a][1]), count)
            for a in range(grid.dim)
        ]
        if grid.dim == 1:
            points = [(x,) for x in axes_points[0]]
        else:
            points = [(x, y) for x in axes_points[0] for y in axes_points[1]]
        pairs = tensor_pairs(points, points)
        sep = data.get("max_separation")
        if sep is not None:
            pairs = tuple(
                (xi, xf)
                for xi, xf in pairs
                if max(abs(a - b) for a, b in zip(xi, xf)) <= float(sep) + 1e-12
            )
        _expect(len(pairs) > 0, f"{where}: empty pair list after filtering")
        return pairs
    _expect(isinstance(data, list), f"{where} must be 'auto', an object, or a list")
    _expect(len(data) > 0, f"{where}: empty pair list")
    out = []
    for entry in data:
        _expect(
            isinstance(entry, list) and len(entry) == 2,
            f"{where}: each entry must be [initial, final]",
        )
        out.append((_parse_point(entry[0], grid.dim, where), _parse_point(entry[1], grid.dim, where)))
    return tuple(out)


def _parse_point(p, dim: int, where: str):
    if isinstance(p, (int, float)) and dim == 1:
        return (float(p),)
    _expect(
        isinstance(p, list) and len(p) == dim and all(isinstance(v, (int, float)) for v in p),
        f"{where}: point must have {dim} coordinate(s)",
    )
    return tuple(float(v) for v in p)


def _parse_ansatz(data, dim: int, where: str = "ansatz"):
    """Entries are exponent lists, or lists of exponent lists for tied groups."""
    _expect(isinstance(data, list) and len(data) > 0, f"{where} must be a non-empty list")
    out = []
    for entry in data:
        _expect(isinstance(entry, list) and len(entry) > 0, f"{where}: bad entry {entry!r}")
        if all(isinstance(v, int) for v in entry):
            _expect(len(entry) == dim, f"{where}: exponent {entry!r} must have {dim} entries")
            out.append(tuple(entry))
            continue
        group = []
        for exp in entry:
            _expect(
                isinstance(exp, list) and len(exp) == dim and all(isinstance(v, int) for v in exp),
                f"{where}: exponent {exp!r} must be a list of {dim} integers",
            )
            group.append(tuple(exp))
        out.append(tuple(group))
    return tuple(out)


def _parse_n_nodes(data, where: str = "n_nodes"):
    if isinstance(data, int):
        return data
    _expect(
        isinstance(data, list) and len(data) == 2 and all(isinstance(v, int) for v in data),
        f"{where} must be an integer or a [coarse, fine] pair",
    )
    return (data[0], data[1])


# -- output writing ----------------------------------------------------------


def _py(v):
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    return v


def _write_atomic(path: Path, text: str):
    fd, tmp = tempfile.mkstemp(dir=str(path.parent), prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _render_table(header, rows, fmt: str) -> tuple:
    """(file suffix, serialized table) for the requested format."""
    rows = [[_py(v) for v in row] for row in rows]
    if fmt == "json":
        return ".json", json.dumps({"header": list(header), "rows": rows}, indent=2) + "\n"
    if fmt == "gnuplot":
        lines = ["# " + " ".join(str(h) for h in header)]
        lines += [" ".join(repr(v) if isinstance(v, float) else str(v) for v in row) for row in rows]
        return ".dat", "\n".join(lines) + "\n"
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return ".csv", buf.getvalue()


def _emit(out_dir: Path, artifacts: list):
    """Write every artifact, each atomically, only after all are rendered."""
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, text in artifacts:
        _write_atomic(out_dir / name, text)
        print(f"wrote {out_dir / name}")


def _table_artifact(stem: str, header, rows, fmt: str) -> tuple:
    suffix, text = _render_table(header, rows, fmt)
    return stem + suffix, text


def _json_artifact(name: str, payload: dict) -> tuple:
    return name, json.dumps(payload, indent=2, sort_keys=True) + "\n"


# -- commands ----------------------------------------------------------------


def cmd_propagate(cfg: dict, args) -> list:
    action = _parse_action(_get(cfg, "action", dict), "action", confining=True)
    grid = _parse_grid(_get(cfg, "grid", dict))
    _expect(grid.dim == action.dimension, "grid and action dimensions differ")
    T = float(_get(cfg, "T", (int, float)))
    _expect(T > 0.0, "T must be positive")
    pairs = _parse_pairs(_get(cfg, "pairs", None), grid, classical=action)

    table = euclidean_propagate(action, grid, T, pairs)
    spectrum = decompose_for_time(action, grid, T)
    spec_rows = [[n, e] for n, e in enumerate(spectrum.eigenvalues)]
    return [
        _table_artifact("propagator", table.csv_header(), list(table.to_rows()), args.format),
        _table_artifact("spectrum", ["n", "E"], spec_rows, args.format),
    ]


def _fit_result_payload(result) -> dict:
    payload = result.to_json_dict()
    if not result.converged:
        payload["warning"] = "fit did not converge to the requested simplex tolerance"
    return payload


def cmd_fit(cfg: dict, args) -> list:
    classical = _parse_action(_get(cfg, "classical", dict), "classical", confining=True)
    grid = _parse_grid(_get(cfg, "grid", dict))
    _expect(grid.dim == classical.dimension, "grid and classical dimensions differ")
    pairs = _parse_pairs(_get(cfg, "pairs", None), grid, classical=classical)
    ansatz = _parse_ansatz(_get(cfg, "ansatz", list), classical.dimension)
    fit_mass = bool(_get(cfg, "fit_mass", bool, default=True))
    n_nodes = _parse_n_nodes(_get(cfg, "n_nodes", None, default=257))
    restarts = _get(cfg, "restarts", int, default=3)
    initial = cfg.get("initial")
    if initial is not None:
        initial = _parse_action(initial, "initial")

    has_T = "T" in cfg
    has_list = "T_list" in cfg
    _expect(has_T != has_list, "exactly one of 'T' or 'T_list' is required")

    def make_problem(t: float) -> FitProblem:
        table = euclidean_propagate(classical, grid, t, pairs)
        return FitProblem(
            classical=classical, table=table, ansatz=ansatz, fit_mass=fit_mass
        )

    if has_T:
        T = float(_get(cfg, "T", (int, float)))
        _expect(T > 0.0, "T must be positive")
        result = fit_quantum_action(
            make_problem(T),
            initial=initial,
            n_nodes=n_nodes,
            restarts=restarts,
            workers=args.workers,
        )
        return [_json_artifact("fit.json", _fit_result_payload(result))]

    t_list = _get(cfg, "T_list", list)
    _expect(
        len(t_list) >= 2 and all(isinstance(t, (int, float)) and t > 0 for t in t_list),
        "T_list must hold at least two positive times",
    )
    results = fit_flow(
        make_problem,
        [float(t) for t in t_list],
        initial=initial,
        n_nodes=n_nodes,
        restarts=restarts,
        workers=args.workers,
    )
    return [
        _json_artifact("fit.json", {"results": [_fit_result_payload(r) for r in results]}),
        _table_artifact("flow", FLOW_CSV_HEADER, flow_rows(results), args.format),
    ]


def cmd_analytic(cfg: dict, args) -> list:
    classical = _parse_action(_get(cfg, "action", dict), "action", confining=True)
    _expect(classical.dimension == 1, "the analytic pipeline is 1-D")
    grid = _parse_grid(_get(cfg, "grid", dict))
    _expect(grid.dim == 1, "the analytic pipeline needs a 1-D grid")
    quantum = cfg.get("quantum")
    if quantum is not None:
        quantum = _parse_action(quantum, "quantum", confining=True)
    e_gr = cfg.get("e_gr")
    _expect(
        e_gr is None or isinstance(e_gr, (int, float)), "e_gr must be a number"
    )
    l_max = _get(cfg, "hydrogen_l_max", int, default=3)
    _expect(l_max >= 1, "hydrogen_l_max must be >= 1")

    if e_gr is None:
        e_gr = ground_state_spectral(classical, grid).energy
    e_gr = float(e_gr)

    inversion = invert_transformation_law(classical, e_gr, grid)
    if quantum is not None:
        state = ground_state_from_quantum_action(quantum, grid)
        xs = grid.axes()[0]
        law_rows = []
        for x in xs:
            try:
                law_rows.append([float(x), transformation_law_residual(classical, e_gr, quantum, float(x))])
            except ValueError:
                continue  # singular point at the trial minimum
        wkb = wkb_compare(classical, quantum, e_gr, grid)
    else:
        state = inversion.ground_state()
        lx, lr = transformation_law_residual_grid(inversion)
        law_rows = [[float(x), float(r)] for x, r in zip(lx, lr)]
        wkb = wkb_compare(classical, inversion, e_gr, grid)

    gs_rows = [[float(x), float(p)] for x, p in zip(grid.axes()[0], state.psi)]
    wkb_payload = {
        "e_gr": wkb.e_gr,
        "turning_point": wkb.turning_point,
        "distance_quantum": wkb.distance_quantum,
        "distance_classical": wkb.distance_classical,
        "excluded_fraction": wkb.excluded_fraction,
        "ground_state_energy_used": e_gr,
        "ground_state_source": state.source,
    }
    return [
        _table_artifact("ground_state", ["x", "psi"], gs_rows, args.format),
        _table_artifact("transformation_law", ["x", "residual"], law_rows, args.format),
        _json_artifact("wkb.json", wkb_payload),
        _table_artifact("hydrogen", ["l", "mu", "nu", "E_l"], hydrogen_table(l_max), args.format),
    ]


def _section_artifacts(stem: str, section, fmt: str) -> tuple:
    if fmt == "gnuplot":
        # one block per orbit so plotting tools can separate them
        lines = ["# orbit x px"]
        for k, orbit in enumerate(section.orbits):
            for x, px in orbit:
                lines.append(f"{k} {x!r} {px!r}")
            lines.append("")
        return stem + ".dat", "\n".join(lines) + "\n"
    return _table_artifact(stem, ["orbit", "x", "px"], section.to_rows(), fmt)


def cmd_poincare(cfg: dict, args) -> list:
    classical = _parse_action(_get(cfg, "action", dict), "action", confining=True)
    _expect(classical.dimension == 2, "sections need a 2-D action")
    energy = float(_get(cfg, "energy", (int, float)))
    n_orbits = _get(cfg, "n_orbits", int, default=12)
    dt = float(_get(cfg, "dt", (int, float), default=1e-3))
    max_crossings = _get(cfg, "max_crossings", int, default=200)
    convention = _get(cfg, "energy_convention", str, default="above-minimum")
    fill = float(_get(cfg, "fill_fraction", (int, float), default=0.9))
    start_index = _get(cfg, "start_index", int, default=1)
    boxes = _get(cfg, "boxes", list, default=[48, 48])
    _expect(
        len(boxes) == 2 and all(isinstance(b, int) and b >= 2 for b in boxes),
        "boxes must be two integers >= 2",
    )
    plane = _get(cfg, "plane", dict, default={})
    plane_axis = _get(plane, "axis", int, default=1, where="plane")
    plane_value = float(_get(plane, "value", (int, float), default=0.0, where="plane"))
    orientation = _get(plane, "orientation", int, default=1, where="plane")

    quantum = None
    fit_path = cfg.get("fit_result")
    if fit_path is not None:
        _expect(isinstance(fit_path, str), "fit_result must be a path string")
        try:
            with open(fit_path) as fh:
                fit_data = json.load(fh)
            quantum = ActionSpec.from_json_dict(fit_data["quantum"], confining=True)
        except OSError as exc:
            raise ConfigError(f"fit_result: {exc}") from exc
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"fit_result: not a fit result file ({exc})") from exc
        _expect(quantum.dimension == 2, "fit_result holds a non-2-D action")

    def build(action: ActionSpec):
        ics = section_initial_conditions(
            action, energy, n_orbits,
            plane_axis=plane_axis, plane_value=plane_value, orientation=orientation,
            energy_convention=convention, fill_fraction=fill, start_index=start_index,
        )
        spec = SectionSpec(
            energy=energy, initial_conditions=ics, dt=dt,
            max_crossings=max_crossings, plane_axis=plane_axis,
            plane_value=plane_value, orientation=orientation,
            energy_convention=convention,
        )
        return generate_section(action, spec)

    sec_classical = build(classical)
    artifacts = [_section_artifacts("section_classical", sec_classical, args.format)]
    if quantum is not None:
        sec_quantum = build(quantum)
        artifacts.append(_section_artifacts("section_quantum", sec_quantum, args.format))
        comparison = compare_sections(sec_classical, sec_quantum, boxes=tuple(boxes)).to_json_dict()
    else:
        thickness = orbit_thickness(sec_classical)
        comparison = {
            "occupancy_classical": section_occupancy(sec_classical, boxes=tuple(boxes)),
            "points_classical": sec_classical.n_points,
            "thickness_classical": [None if math.isnan(t) else t for t in thickness],
        }
    artifacts.append(_json_artifact("comparison.json", comparison))
    return artifacts


# -- entry point --------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qaction",
        description="Euclidean amplitudes, quantum-action fits, large-T "
        "closed forms, and Poincare sections from JSON configs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    handlers = {
        "propagate": (cmd_propagate, "tabulate Euclidean amplitudes and the spectrum"),
        "fit": (cmd_fit, "fit a trial action to a propagator table"),
        "analytic": (cmd_analytic, "emit large-T closed-form outputs"),
        "poincare": (cmd_poincare, "generate and compare Poincare sections"),
    }
    for name, (func, help_text) in handlers.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="path to the JSON config")
        p.add_argument("--out", default=".", help="output directory (default: current)")
        p.add_argument("--workers", type=int, default=os.cpu_count() or 1,
                       help="parallel worker bound (results are worker-independent)")
        choices = ["csv", "json", "gnuplot"] if name == "poincare" else ["csv", "json"]
        p.add_argument("--format", choices=choices, default="csv",
                       help="table output format")
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        with open(args.config) as fh:
            cfg = json.load(fh)
        _expect(isinstance(cfg, dict), "top-level config must be a JSON object")
        artifacts = args.func(cfg, args)
        _emit(Path(args.out), artifacts)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except (ValueError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
