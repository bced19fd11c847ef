"""Global fit of a trial action to Euclidean amplitudes at fixed transition time.

A single trial action (mass plus polynomial coefficients) is adjusted until
G = Z exp(-S/hbar) holds across a whole table of boundary pairs, where S is
the extremal Euclidean action of the trial dynamics for each pair. Residuals
live in log space, the offset ln Z enters linearly and is eliminated
analytically, and the remaining parameters are searched derivative-free.

When the ansatz carries a constant term, its coefficient is not searchable:
shifting it trades exactly against ln Z. The fit pins it after convergence
by the large-T normalization ln Z = -2 ln N, with N the norm of
exp(-Phi/hbar) built from the optimized potential shape; this is what makes
the fitted constant converge to the ground energy as T grows.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.optimize

from .asymptotics import _refine_minimum, ground_state_spectral
from .errors import NumericalError
from .model import ActionSpec, PolynomialPotential
from .propagator import Grid, PropagatorTable, _normalize_pairs, tensor_pairs
from .trajectory import solve_euclidean_bvp

PENALTY_FAILED = 1.0e3  # per-pair residual charged when the inner BVP fails
_GL_S, _GL_W = np.polynomial.legendre.leggauss(15)
_RAY_S = 0.5 * (_GL_S + 1.0)
_RAY_W = 0.5 * _GL_W


def _normalize_ansatz(ansatz, dim: int) -> tuple:
    """Coerce an ansatz into disjoint groups of exponent tuples.

    Each entry is either one exponent tuple or a tuple of exponent tuples
    whose coefficients are tied to a single fit parameter (how symmetric
    combinations like x^2 + y^2 are kept symmetric).
    """
    groups = []
    seen = set()
    for entry in ansatz:
        entry = tuple(entry)
        if not entry:
            raise ValueError("empty ansatz entry")
        if all(isinstance(e, (int, np.integer)) for e in entry):
            group = (entry,)
        else:
            group = tuple(tuple(e) for e in entry)
        norm = []
        for exp in group:
            exp = tuple(int(p) for p in exp)
            if len(exp) != dim or any(p < 0 for p in exp):
                raise ValueError(f"ansatz exponent {exp} invalid for dimension {dim}")
            if exp in seen:
                raise ValueError(f"ansatz exponent {exp} appears twice")
            seen.add(exp)
            norm.append(exp)
        groups.append(tuple(sorted(norm)))
    zero = (0,) * dim
    for g in groups:
        if zero in g and len(g) > 1:
            raise ValueError("the constant term must form its own ansatz group")
    return tuple(groups)


@dataclass(frozen=True, eq=False)
class FitProblem:
    """Amplitude table plus the trial-action ansatz to fit against it."""

    classical: ActionSpec
    table: PropagatorTable
    ansatz: tuple
    pairs: tuple = None
    fit_mass: bool = True

    def __post_init__(self):
        if self.classical.dimension != self.table.grid.dim:
            raise ValueError("classical action and table grid dimensions differ")
        object.__setattr__(
            self, "ansatz", _normalize_ansatz(self.ansatz, self.classical.dimension)
        )
        pairs = self.table.pairs if self.pairs is None else tuple(
            _normalize_pairs(self.pairs, self.classical.dimension)
        )
        if not pairs:
            raise ValueError("at least one boundary pair required")
        table_index = {p: g for p, g in zip(self.table.pairs, self.table.amplitudes)}
        amps = []
        for p in pairs:
            if p not in table_index:
                raise ValueError(f"pair {p} missing from the amplitude table")
            amps.append(table_index[p])
        object.__setattr__(self, "pairs", pairs)
        object.__setattr__(self, "_log_g", np.log(np.asarray(amps, dtype=float)))

    @property
    def T(self) -> float:
        return self.table.T

    @property
    def dimension(self) -> int:
        return self.classical.dimension

    @property
    def constant_index(self):
        zero = (0,) * self.dimension
        for i, g in enumerate(self.ansatz):
            if g == (zero,):
                return i
        return None

    @property
    def n_free(self) -> int:
        return len(self.ansatz) + (1 if self.fit_mass else 0)


def _confinement_violation(pot: PolynomialPotential) -> float:
    """0 when confining; otherwise a positive score for penalty walls."""
    if pot.is_confining():
        return 0.0
    score = 1.0
    for axis in range(pot.dimension):
        pure = [
            (exp[axis], coef)
            for exp, coef in pot.terms
            if coef != 0.0 and all(p == 0 for i, p in enumerate(exp) if i != axis)
        ]
        if pure:
            _, lead = max(pure)
            score += max(0.0, -lead)
    return score


def _theta_vector(problem: FitProblem, source: ActionSpec) -> np.ndarray:
    """Search vector (log-mass, then one coefficient per non-constant group)."""
    theta = []
    if problem.fit_mass:
        theta.append(math.log(source.mass))
    const = problem.constant_index
    for i, group in enumerate(problem.ansatz):
        if i == const:
            continue
        coefs = [source.potential.coefficient(exp) for exp in group]
        theta.append(float(np.mean(coefs)))
    return np.array(theta, dtype=float)


def _trial_from_theta(problem: FitProblem, theta: np.ndarray, v0: float = 0.0) -> ActionSpec:
    mass = problem.classical.mass
    k = 0
    if problem.fit_mass:
        mass = math.exp(theta[0])
        k = 1
    const = problem.constant_index
    terms = []
    for i, group in enumerate(problem.ansatz):
        if i == const:
            coef = v0
        else:
            coef = float(theta[k])
            k += 1
        terms.extend((exp, coef) for exp in group)
    pot = PolynomialPotential(problem.dimension, tuple(terms))
    return ActionSpec(mass=mass, potential=pot, hbar=problem.classical.hbar)


def _solve_pair_task(args):
    action, x_i, x_f, T, n_nodes, init_path = args
    try:
        if isinstance(n_nodes, tuple):
            # solve on a coarse and a halved-step grid and eliminate the
            # leading quadrature error of the discrete action
            coarse, fine = n_nodes
            sol = solve_euclidean_bvp(action, x_i, x_f, T, n_nodes=coarse, init_path=init_path)
            if not sol.converged or not math.isfinite(sol.action):
                return False, math.nan, None
            t_c = np.linspace(0.0, T, coarse)
            t_f = np.linspace(0.0, T, fine)
            init_f = np.stack(
                [np.interp(t_f, t_c, sol.path[:, a]) for a in range(sol.path.shape[1])],
                axis=1,
            )
            sol_f = solve_euclidean_bvp(action, x_i, x_f, T, n_nodes=fine, init_path=init_f)
            if not sol_f.converged or not math.isfinite(sol_f.action):
                return False, math.nan, None
            return True, (4.0 * sol_f.action - sol.action) / 3.0, sol.path
        sol = solve_euclidean_bvp(action, x_i, x_f, T, n_nodes=n_nodes, init_path=init_path)
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError):
        return False, math.nan, None
    if not sol.converged or not math.isfinite(sol.action):
        return False, math.nan, None
    return True, sol.action, sol.path


def _normalize_n_nodes(n_nodes):
    """Either a node count or a (coarse, fine) pair with halved step."""
    if isinstance(n_nodes, (tuple, list)):
        if len(n_nodes) != 2:
            raise ValueError("n_nodes pair must have exactly two entries")
        coarse, fine = int(n_nodes[0]), int(n_nodes[1])
        if fine != 2 * coarse - 1:
            raise ValueError("fine node count must be 2*coarse - 1 (halved step)")
        return (coarse, fine)
    return int(n_nodes)


@dataclass
class _EvalDetail:
    objective: float
    log_z_free: float  # optimal offset before any gauge fixing
    residuals: np.ndarray  # r_j minus the offset actually used (nan if failed)
    failed: tuple


class _Evaluator:
    """Maps a trial action to the RMS log residual over the pair set.

    Mirrored pairs share one boundary-value solve (the Euclidean action is
    reversal-invariant) and every solve warm-starts from the path found at
    the previous parameter point.
    """

    def __init__(self, problem: FitProblem, n_nodes, workers: int = 1):
        self.problem = problem
        self.n_nodes = _normalize_n_nodes(n_nodes)
        keys = []
        index = {}
        key_of_pair = []
        for xi, xf in problem.pairs:
            key = (xi, xf) if xi <= xf else (xf, xi)
            if key not in index:
                index[key] = len(keys)
                keys.append(key)
            key_of_pair.append(index[key])
        self.keys = keys
        self.key_of_pair = np.array(key_of_pair)
        self.paths = [None] * len(keys)
        self.workers = max(1, int(workers))
        self.pool = ProcessPoolExecutor(self.workers) if self.workers > 1 else None
        self.n_evaluations = 0

    def close(self):
        if self.pool is not None:
            self.pool.shutdown()
            self.pool = None

    def detail(self, trial: ActionSpec, log_z=None) -> _EvalDetail:
        self.n_evaluations += 1
        npairs = len(self.problem.pairs)
        viol = _confinement_violation(trial.potential)
        if viol > 0.0:
            return _EvalDetail(
                1e9 * viol, math.nan, np.full(npairs, np.nan), tuple(range(npairs))
            )
        T = self.problem.T
        tasks = [
            (trial, np.array(k[0]), np.array(k[1]), T, self.n_nodes, self.paths[i])
            for i, k in enumerate(self.keys)
        ]
        if self.pool is not None:
            chunk = max(1, len(tasks) // (4 * self.workers))
            results = list(self.pool.map(_solve_pair_task, tasks, chunksize=chunk))
        else:
            results = [_solve_pair_task(t) for t in tasks]
        sigma = np.full(len(self.keys), np.nan)
        ok = np.zeros(len(self.keys), dtype=bool)
        for i, (conv, act, path) in enumerate(results):
            if conv:
                self.paths[i] = path
                sigma[i] = act
                ok[i] = True
        r = self.problem._log_g + sigma[self.key_of_pair] / self.problem.classical.hbar
        okp = ok[self.key_of_pair]
        failed = tuple(int(i) for i in np.nonzero(~okp)[0])
        if not okp.any():
            return _EvalDetail(PENALTY_FAILED, math.nan, np.full(npairs, np.nan), failed)
        z_free = float(np.mean(r[okp]))
        z = z_free if log_z is None else float(log_z)
        res = np.where(okp, r - z, np.nan)
        sq = np.where(okp, (r - z) ** 2, PENALTY_FAILED**2)
        return _EvalDetail(math.sqrt(float(np.mean(sq))), z_free, res, failed)


def fit_residual(
    trial: ActionSpec,
    problem: FitProblem,
    log_z=None,
    *,
    n_nodes=257,
) -> float:
    """RMS over pairs of [ln G + S_trial/hbar - ln Z] for one trial action.

    With log_z omitted the offset is set to its analytic optimum (the mean
    of ln G + S/hbar over pairs whose trajectory solve converged). Failed
    pairs contribute a flat 1e3 penalty instead of raising. n_nodes is the
    trajectory node count; a (coarse, 2*coarse-1) pair requests step-halving
    extrapolation of the discrete action (needed at large T where the
    trajectory hugs the potential minimum).
    """
    if trial.dimension != problem.dimension:
        raise ValueError("trial action dimension does not match the problem")
    ev = _Evaluator(problem, n_nodes)
    return ev.detail(trial, log_z=log_z).objective


def quantum_action_log_norm_sq(action: ActionSpec, grid: Grid) -> float:
    """ln of integral exp(-2 Phi/hbar) over the grid, Phi the settling action.

    Phi(x) is the zero-energy action from the potential minimum to x,
    computed along straight rays (exact in 1-D; a declared convention in
    2-D). Used to pin ln Z = -ln of this integral.
    """
    pot = action.potential
    pts = np.stack(
        np.meshgrid(*grid.axes(), indexing="ij"), axis=-1
    ).reshape(grid.size, grid.dim)
    r0, vmin = _grid_minimum(pot, grid)
    d = pts - r0
    dist = np.sqrt(np.sum(d * d, axis=1))
    ray = r0[None, None, :] + _RAY_S[None, :, None] * d[:, None, :]
    vals = pot.evaluate_points(ray.reshape(-1, grid.dim)).reshape(grid.size, len(_RAY_S))
    integ = np.sqrt(np.maximum(2.0 * action.mass * (vals - vmin), 0.0))
    phi = dist * (integ @ _RAY_W)
    w = grid.weights_flat()
    return float(np.log(np.dot(w, np.exp(-2.0 * phi / action.hbar))))


def _grid_minimum(pot: PolynomialPotential, grid: Grid):
    """Grid argmin of the potential, refined one quadratic fit per axis."""
    if grid.dim == 1:
        xs = grid.axes()[0]
        x0, vmin = _refine_minimum(xs, pot.evaluate_points(xs[:, None]))
        return np.array([x0]), vmin
    axes = grid.axes()
    vals = pot.evaluate_on_axes(axes)
    idx = np.unravel_index(int(np.argmin(vals)), vals.shape)
    point = []
    for axis, (ax, i) in enumerate(zip(axes, idx)):
        if 0 < i < len(ax) - 1:
            line = [idx[0], idx[1]]
            lo, hi = list(line), list(line)
            lo[axis] -= 1
            hi[axis] += 1
            vm, v0, vp = vals[tuple(lo)], vals[tuple(idx)], vals[tuple(hi)]
            h = ax[1] - ax[0]
            a = (vp - 2.0 * v0 + vm) / (2.0 * h * h)
            b = (vp - vm) / (2.0 * h)
            dx = -b / (2.0 * a) if a > 0.0 else 0.0
            point.append(ax[i] + max(-h, min(h, dx)))
        else:
            point.append(ax[i])
    point = np.array(point)
    return point, float(pot(point))


@dataclass(frozen=True, eq=False)
class FitResult:
    """Optimized trial action with its offset and residual diagnostics."""

    quantum: ActionSpec
    T: float
    log_z: float
    rms_residual: float
    per_pair_residuals: tuple
    iterations: int
    converged: bool
    failed_pairs: tuple
    potential_minimum: float

    def __post_init__(self):
        if self.rms_residual < 0.0:
            raise ValueError("rms residual cannot be negative")
        if not self.quantum.potential.is_confining():
            raise ValueError("fitted potential must be confining")

    def extraction_product(self, points) -> np.ndarray:
        """2 m (V - V_min) of the trial action, the combination that the
        large-T extraction actually determines (mass and potential
        separately are a finite-T statement)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        vals = self.quantum.potential.evaluate_points(pts)
        return 2.0 * self.quantum.mass * (vals - self.potential_minimum)

    def to_json_dict(self) -> dict:
        res = [
            None if not math.isfinite(v) else v for v in self.per_pair_residuals
        ]
        return {
            "quantum": self.quantum.to_json_dict(),
            "T": self.T,
            "logZ": self.log_z,
            "rms_residual": self.rms_residual,
            "converged": self.converged,
            "iterations": self.iterations,
            "failed_pairs": list(self.failed_pairs),
            "potential_minimum": self.potential_minimum,
            "per_pair_residuals": res,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2, sort_keys=True)


def _simplex_around(y0: np.ndarray) -> np.ndarray:
    n = len(y0)
    simplex = np.tile(y0, (n + 1, 1))
    for i in range(n):
        step = 0.05 * abs(y0[i])
        simplex[i + 1, i] += step if step > 1e-3 else 0.02
    return simplex


def fit_quantum_action(
    problem: FitProblem,
    *,
    initial: ActionSpec = None,
    n_nodes=257,
    restarts: int = 3,
    workers: int = 1,
    maxiter: int = None,
    polish: bool = True,
) -> FitResult:
    """Derivative-free minimization of the RMS log residual.

    Nelder-Mead starts at the classical parameters (or ``initial``), is
    restarted on a fresh simplex around each optimum, and finishes with one
    coordinate-wise quadratic polish sweep. Convergence means the final
    simplex diameter fell below 1e-8 in scaled parameters. The offset ln Z
    is eliminated analytically inside every evaluation.
    """
    if len(problem.pairs) < 2 * problem.n_free:
        raise ValueError(
            f"{len(problem.pairs)} pairs cannot determine {problem.n_free} "
            "free parameters (need at least twice as many)"
        )
    theta0 = _theta_vector(problem, initial if initial is not None else problem.classical)
    scales = np.maximum(np.abs(theta0), 0.25)
    ev = _Evaluator(problem, n_nodes, workers=workers)
    try:
        def objective(y):
            return ev.detail(_trial_from_theta(problem, y * scales)).objective

        y = theta0 / scales
        f_best = objective(y)
        iterations = 0
        diameter = 0.0
        if len(y) > 0:
            cap = maxiter if maxiter is not None else 400 * (len(y) + 2)
            for _ in range(max(1, restarts)):
                res = scipy.optimize.minimize(
                    objective,
                    y,
                    method="Nelder-Mead",
                    options={
                        "initial_simplex": _simplex_around(y),
                        "xatol": 1e-9,
                        "fatol": 1e-11,
                        "maxiter": cap,
                        "maxfev": 2 * cap,
                    },
                )
                iterations += int(res.nit)
                verts = res.final_simplex[0]
                diameter = float(np.max(np.abs(verts - verts[0])))
                improved = f_best - float(res.fun)
                if float(res.fun) <= f_best:
                    f_best = float(res.fun)
                    y = np.asarray(res.x, dtype=float)
                if improved < 1e-12 and diameter < 1e-8:
                    break
            if polish:
                y, f_best = _quadratic_polish(objective, y, f_best)
        converged = bool(diameter < 1e-8)

        theta = y * scales
        shape = _trial_from_theta(problem, theta)
        det = ev.detail(shape)
    finally:
        ev.close()

    if not math.isfinite(det.log_z_free):
        raise NumericalError(
            "every boundary pair failed its trajectory solve at the optimum; "
            "the trial ansatz cannot represent this problem"
        )
    hb, T = problem.classical.hbar, problem.T
    if problem.constant_index is not None:
        log_z = -quantum_action_log_norm_sq(shape, problem.table.grid)
        v0 = hb * (log_z - det.log_z_free) / T
        quantum = _trial_from_theta(problem, theta, v0=v0)
    else:
        log_z = det.log_z_free
        quantum = shape
    _, vmin = _grid_minimum(quantum.potential, problem.table.grid)
    return FitResult(
        quantum=quantum,
        T=T,
        log_z=log_z,
        rms_residual=det.objective,
        per_pair_residuals=tuple(float(v) for v in det.residuals),
        iterations=iterations,
        converged=converged,
        failed_pairs=det.failed,
        potential_minimum=vmin,
    )


def _quadratic_polish(objective, y, f0, step: float = 1e-5):
    """One parabolic line-minimization sweep along each coordinate."""
    y = y.copy()
    for i in range(len(y)):
        yp, ym = y.copy(), y.copy()
        yp[i] += step
        ym[i] -= step
        fp, fm = objective(yp), objective(ym)
        denom = fp - 2.0 * f0 + fm
        if denom <= 0.0:
            if fp < f0 or fm < f0:
                (y, f0) = (yp, fp) if fp <= fm else (ym, fm)
            continue
        dy = 0.5 * step * (fm - fp) / denom
        dy = max(-5.0 * step, min(5.0 * step, dy))
        yt = y.copy()
        yt[i] += dy
        ft = objective(yt)
        if ft < f0:
            y, f0 = yt, ft
    return y, f0


def fit_flow(
    make_problem: Callable[[float], FitProblem],
    t_list: Sequence[float],
    *,
    initial: ActionSpec = None,
    **fit_kwargs,
) -> list:
    """Repeated fits over increasing T, each warm-started from the previous.

    ``make_problem(T)`` must return the FitProblem (with its amplitude
    table) for that transition time. ``initial`` seeds only the first fit.
    """
    t_list = [float(t) for t in t_list]
    if len(t_list) < 2:
        raise ValueError("flow needs at least two transition times")
    if any(b < a for a, b in zip(t_list, t_list[1:])):
        raise ValueError("transition times must be non-decreasing")
    results = []
    prev = initial
    for t in t_list:
        problem = make_problem(t)
        if problem.T != t:
            raise ValueError(f"make_problem returned T={problem.T} for requested {t}")
        result = fit_quantum_action(problem, initial=prev, **fit_kwargs)
        results.append(result)
        prev = result.quantum
    return results


FLOW_CSV_HEADER = ["T", "m", "v0", "v2", "v22", "v4", "rms"]


def flow_rows(results) -> list:
    """Flow-table rows T,m,v0,v2,v22,v4,rms (absent monomials report 0)."""
    rows = []
    for r in results:
        pot = r.quantum.potential
        if r.quantum.dimension == 1:
            v0, v2, v22, v4 = (
                pot.coefficient((0,)),
                pot.coefficient((2,)),
                0.0,
                pot.coefficient((4,)),
            )
        else:
            v0, v2, v22, v4 = (
                pot.coefficient((0, 0)),
                pot.coefficient((2, 0)),
                pot.coefficient((2, 2)),
                pot.coefficient((4, 0)),
            )
        rows.append([r.T, r.quantum.mass, v0, v2, v22, v4, r.rms_residual])
    return rows


def default_pairs(classical: ActionSpec, grid: Grid, points_per_axis: int = 11, threshold: float = 1e-4):
    """Tensor pair grid spanning where the ground state exceeds threshold.

    Points are snapped to grid nodes so the resulting pairs are valid
    amplitude-table entries.
    """
    gs = ground_state_spectral(classical, grid)
    psi = gs.psi.reshape(grid.shape)
    mask = psi > threshold * float(psi.max())
    points_1d = []
    for axis, ax in enumerate(grid.axes()):
        proj = mask.any(axis=tuple(i for i in range(grid.dim) if i != axis))
        sel = ax[proj]
        lo, hi = float(sel[0]), float(sel[-1])
        h = grid.spacing[axis]
        snapped = []
        for v in np.linspace(lo, hi, points_per_axis):
            node = ax[int(round((v - ax[0]) / h))]
            if not snapped or abs(node - snapped[-1]) > 1e-12:
                snapped.append(float(node))
        points_1d.append(snapped)
    if grid.dim == 1:
        pts = [(v,) for v in points_1d[0]]
    else:
        pts = [(vx, vy) for vx in points_1d[0] for vy in points_1d[1]]
    return tensor_pairs(pts, pts)
