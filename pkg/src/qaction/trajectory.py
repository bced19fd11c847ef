"""Classical trajectories of a trial action.

Two solvers live here: a damped-Newton relaxation for the Euclidean
two-point boundary value problem m x'' = +grad V (discrete second
differences, banded Jacobian, halved-T continuation when a direct solve
stalls), and a fourth-order symplectic integrator (Forest-Ruth composition)
for real-time dynamics.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg

from .errors import NumericalError
from .model import ActionSpec, PolynomialPotential

NEWTON_RTOL = 1e-10


@dataclass(frozen=True)
class PhaseState:
    """Point in phase space: positions and conjugate momenta."""

    position: tuple
    momentum: tuple

    def __post_init__(self):
        q = tuple(float(v) for v in self.position)
        p = tuple(float(v) for v in self.momentum)
        if len(q) != len(p):
            raise ValueError("position and momentum must have equal length")
        if not all(math.isfinite(v) for v in q + p):
            raise ValueError("phase-space coordinates must be finite")
        object.__setattr__(self, "position", q)
        object.__setattr__(self, "momentum", p)

    @property
    def dim(self) -> int:
        return len(self.position)


@dataclass
class TrajectorySolution:
    """Discrete two-point trajectory with its action and Euclidean energy.

    ``residual`` is the largest Euler-Lagrange defect of the converged path
    (scaled by the force magnitude); ``energy_spread`` measures how constant
    -T_kin + V is along the path, which is limited by the O(dt^2)
    discretization rather than by the Newton tolerance.
    """

    times: np.ndarray
    path: np.ndarray  # (n_nodes, dim)
    action: float
    euclidean_energy: float
    energy_spread: float
    converged: bool
    residual: float
    multiple_extrema: bool = False

    @property
    def dim(self) -> int:
        return self.path.shape[1]


def hamiltonian_energy(action: ActionSpec, state: PhaseState) -> float:
    p = np.asarray(state.momentum)
    return float(np.dot(p, p) / (2.0 * action.mass) + action.potential(state.position))


# -- Euclidean boundary value problem ---------------------------------------


def _el_defect(path: np.ndarray, dt: float, m: float, pot: PolynomialPotential) -> np.ndarray:
    acc = (path[2:] - 2.0 * path[1:-1] + path[:-2]) / dt**2
    return m * acc - pot.gradient_points(path[1:-1])


def _defect_scale(path, dt, m, pot):
    """Magnitude of the terms composing the Euler-Lagrange defect.

    Scaling the defect by this (backward-error convention) keeps the
    convergence test meaningful: the raw second difference carries an
    irreducible eps*m*|x|/dt^2 rounding floor.
    """
    mags = m * (np.abs(path[2:]) + 2.0 * np.abs(path[1:-1]) + np.abs(path[:-2])) / dt**2
    mags += np.abs(pot.gradient_points(path[1:-1]))
    return 1.0 + float(np.max(mags))


def _newton_relax(pot, m, path, dt, max_iter):
    """Damped Newton on the interior nodes; returns (path, scaled residual, ok)."""
    n, dim = path.shape
    c = m / dt**2
    for _ in range(max_iter):
        F = _el_defect(path, dt, m, pot)
        res = float(np.max(np.abs(F))) / _defect_scale(path, dt, m, pot)
        if res <= NEWTON_RTOL:
            return path, res, True
        hess = pot.hessian_points(path[1:-1])
        nin = n - 2
        if dim == 1:
            ab = np.zeros((3, nin))
            ab[1] = -2.0 * c - hess[:, 0, 0]
            ab[0, 1:] = c
            ab[2, :-1] = c
            bw = 1
        else:
            nu = nin * 2
            ab = np.zeros((5, nu))
            ab[2, 0::2] = -2.0 * c - hess[:, 0, 0]
            ab[2, 1::2] = -2.0 * c - hess[:, 1, 1]
            cross = np.zeros(nu - 1)
            cross[0::2] = -hess[:, 0, 1]
            ab[1, 1:] = cross
            ab[3, :-1] = cross
            ab[0, 2:] = c
            ab[4, :-2] = c
            bw = 2
        try:
            delta = scipy.linalg.solve_banded((bw, bw), ab, -F.ravel())
        except (scipy.linalg.LinAlgError, ValueError):
            return path, res, False
        delta = delta.reshape(nin, dim)
        f0 = float(np.linalg.norm(F))
        lam = 1.0
        while lam > 1e-10:
            trial = path.copy()
            trial[1:-1] += lam * delta
            f1 = float(np.linalg.norm(_el_defect(trial, dt, m, pot)))
            if f1 <= (1.0 - 0.25 * lam) * f0 or f1 < 1e-300:
                path = trial
                break
            lam *= 0.5
        else:
            return path, res, False
    F = _el_defect(path, dt, m, pot)
    res = float(np.max(np.abs(F))) / _defect_scale(path, dt, m, pot)
    return path, res, res <= NEWTON_RTOL


def _straight_line(x_i, x_f, n_nodes):
    s = np.linspace(0.0, 1.0, n_nodes)[:, None]
    return (1.0 - s) * x_i[None, :] + s * x_f[None, :]


def solve_euclidean_bvp(
    action: ActionSpec,
    x_i,
    x_f,
    T: float,
    n_nodes: int = 257,
    max_newton: int = 60,
    init_path: np.ndarray | None = None,
    check_multiplicity: bool = False,
) -> TrajectorySolution:
    """Relax the Euclidean two-point problem on a uniform time mesh.

    Falls back to continuation over T/2^k (reusing the normalized-time path
    between rungs) when the straight-line start does not converge.
    """
    if T <= 0:
        raise ValueError(f"transition time must be positive, got {T}")
    if n_nodes < 32:
        raise ValueError(f"at least 32 mesh nodes required, got {n_nodes}")
    dim = action.dimension
    x_i = np.atleast_1d(np.asarray(x_i, dtype=float))
    x_f = np.atleast_1d(np.asarray(x_f, dtype=float))
    if x_i.shape != (dim,) or x_f.shape != (dim,):
        raise ValueError("boundary points must match the action dimension")
    pot = action.potential
    m = action.mass
    dt = T / (n_nodes - 1)

    if init_path is not None:
        start = np.array(init_path, dtype=float)
        if start.shape != (n_nodes, dim):
            raise ValueError("init_path shape mismatch")
        start[0], start[-1] = x_i, x_f
    else:
        start = _straight_line(x_i, x_f, n_nodes)
    path, res, ok = _newton_relax(pot, m, start.copy(), dt, max_newton)

    if not ok:
        rungs = max(1, math.ceil(math.log2(max(T, 1e-12) / 0.25)))
        cpath = _straight_line(x_i, x_f, n_nodes)
        cok = True
        for k in range(rungs, -1, -1):
            dt_k = (T / 2**k) / (n_nodes - 1)
            cpath, cres, cok = _newton_relax(pot, m, cpath, dt_k, max_newton)
            if not cok:
                break
        if cok:
            path, res, ok = cpath, cres, cok

    sol = _finish_solution(action, path, T, res, ok)
    if check_multiplicity and ok:
        bump = np.sin(np.pi * np.linspace(0.0, 1.0, n_nodes))[:, None]
        span = 1.0 + float(np.max(np.abs(path)))
        alt = _straight_line(x_i, x_f, n_nodes) + 0.1 * span * bump
        alt_path, _, alt_ok = _newton_relax(pot, m, alt, dt, max_newton)
        if alt_ok and float(np.max(np.abs(alt_path - path))) > 1e-6 * span:
            sol.multiple_extrema = True
    return sol


def _finish_solution(action, path, T, res, ok) -> TrajectorySolution:
    n = path.shape[0]
    times = np.linspace(0.0, T, n)
    dt = T / (n - 1)
    v_half = np.diff(path, axis=0) / dt
    ke_half = 0.5 * action.mass * np.sum(v_half**2, axis=1)
    v_nodes = action.potential.evaluate_points(path)
    eps_half = -ke_half + 0.5 * (v_nodes[:-1] + v_nodes[1:])
    sol = TrajectorySolution(
        times=times,
        path=path,
        action=0.0,
        euclidean_energy=float(np.mean(eps_half)),
        energy_spread=float(np.max(eps_half) - np.min(eps_half)),
        converged=ok,
        residual=res,
    )
    sol.action = evaluate_action(action, sol, kind="euclidean")
    return sol


def node_velocities(path: np.ndarray, dt: float) -> np.ndarray:
    """Second-order velocity estimates at every mesh node."""
    v = np.empty_like(path)
    v[1:-1] = (path[2:] - path[:-2]) / (2.0 * dt)
    v[0] = (-3.0 * path[0] + 4.0 * path[1] - path[2]) / (2.0 * dt)
    v[-1] = (3.0 * path[-1] - 4.0 * path[-2] + path[-3]) / (2.0 * dt)
    return v


def evaluate_action(action: ActionSpec, sol: TrajectorySolution, kind: str = "euclidean") -> float:
    """Trapezoidal action of a discrete path; +V Euclidean, -V real time."""
    if kind not in ("euclidean", "real"):
        raise ValueError(f"kind must be 'euclidean' or 'real', got {kind!r}")
    dt = float(sol.times[1] - sol.times[0])
    v = node_velocities(sol.path, dt)
    kin = 0.5 * action.mass * np.sum(v**2, axis=1)
    pot = action.potential.evaluate_points(sol.path)
    dens = kin + pot if kind == "euclidean" else kin - pot
    return float(np.trapezoid(dens, dx=dt))


# -- real-time symplectic integration ---------------------------------------

_FR_THETA = 1.0 / (2.0 - 2.0 ** (1.0 / 3.0))
_FR_DRIFT = (_FR_THETA / 2.0, (1.0 - _FR_THETA) / 2.0)
_FR_KICK = (_FR_THETA, 1.0 - 2.0 * _FR_THETA)


def make_batch_force(pot: PolynomialPotential) -> Callable[[np.ndarray], np.ndarray]:
    """-grad V evaluated on arrays of shape (..., dim)."""
    comps = [tuple(pot.derivative(a).terms) for a in range(pot.dimension)]

    def force(q: np.ndarray) -> np.ndarray:
        out = np.zeros_like(q)
        for a, terms in enumerate(comps):
            oa = out[..., a]
            for exp, coef in terms:
                t = np.full(q.shape[:-1], coef)
                for ax, e in enumerate(exp):
                    if e == 1:
                        t *= q[..., ax]
                    elif e > 1:
                        t *= q[..., ax] ** e
                oa -= t
        return out

    return force


def _make_scalar_force(pot: PolynomialPotential):
    """Compiled tuple-valued -grad V for dim <= 2 scalar stepping.

    The generated source contains only literals from validated terms; a
    compiled lambda keeps the 1e7-step drift runs affordable in pure Python.
    """
    names = ("x", "y")[: pot.dimension]
    comps = []
    for a in range(pot.dimension):
        parts = []
        for exp, coef in pot.derivative(a).terms:
            factors = [repr(coef)]
            for nm, e in zip(names, exp):
                if e == 1:
                    factors.append(nm)
                elif e > 1:
                    factors.append(f"{nm}**{e}")
            parts.append("*".join(factors))
        comps.append("-(" + " + ".join(parts) + ")" if parts else "0.0")
    src = f"lambda {', '.join(names)}: ({', '.join(comps)},)"
    return eval(src, {"__builtins__": {}})


def integrate_realtime(
    action: ActionSpec,
    s0: PhaseState,
    T: float,
    dt: float,
    store_every: int = 1,
) -> list[PhaseState]:
    """Forest-Ruth fourth-order integration of Hamilton's equations.

    Returns the states at steps 0, store_every, 2*store_every, ... plus the
    final step; the number of steps is round(T/dt).
    """
    if dt <= 0 or not math.isfinite(dt):
        raise ValueError(f"dt must be positive, got {dt}")
    if dt > 1e-2:
        raise ValueError("dt above 1e-2 is outside the validated step range")
    if T <= 0:
        raise ValueError(f"integration time must be positive, got {T}")
    if s0.dim != action.dimension:
        raise ValueError("initial state dimension does not match the action")
    if store_every < 1:
        raise ValueError("store_every must be >= 1")
    n_steps = max(1, int(round(T / dt)))
    m_inv = 1.0 / action.mass
    c1 = _FR_DRIFT[0] * dt * m_inv
    c2 = _FR_DRIFT[1] * dt * m_inv
    d1 = _FR_KICK[0] * dt
    d2 = _FR_KICK[1] * dt
    force = _make_scalar_force(action.potential)
    out = [s0]
    if s0.dim == 1:
        (x,), (px,) = s0.position, s0.momentum
        for k in range(1, n_steps + 1):
            x += c1 * px
            px += d1 * force(x)[0]
            x += c2 * px
            px += d2 * force(x)[0]
            x += c2 * px
            px += d1 * force(x)[0]
            x += c1 * px
            if k % store_every == 0 or k == n_steps:
                out.append(PhaseState((x,), (px,)))
    elif s0.dim == 2:
        (x, y), (px, py) = s0.position, s0.momentum
        for k in range(1, n_steps + 1):
            x += c1 * px
            y += c1 * py
            fx, fy = force(x, y)
            px += d1 * fx
            py += d1 * fy
            x += c2 * px
            y += c2 * py
            fx, fy = force(x, y)
            px += d2 * fx
            py += d2 * fy
            x += c2 * px
            y += c2 * py
            fx, fy = force(x, y)
            px += d1 * fx
            py += d1 * fy
            x += c1 * px
            y += c1 * py
            if k % store_every == 0 or k == n_steps:
                out.append(PhaseState((x, y), (px, py)))
    else:  # pragma: no cover - dimensions are validated to 1 or 2 upstream
        raise ValueError("only 1-D and 2-D actions are supported")
    return out


def step_batch(q, p, dt, m, force, n_steps=1):
    """Advance arrays q, p of shape (n_orbits, dim) in place; returns (q, p)."""
    m_inv = 1.0 / m
    c1 = _FR_DRIFT[0] * dt * m_inv
    c2 = _FR_DRIFT[1] * dt * m_inv
    d1 = _FR_KICK[0] * dt
    d2 = _FR_KICK[1] * dt
    for _ in range(n_steps):
        q += c1 * p
        p += d1 * force(q)
        q += c2 * p
        p += d2 * force(q)
        q += c2 * p
        p += d1 * force(q)
        q += c1 * p
    return q, p


def sample_steps(n_steps: int, store_every: int) -> list[int]:
    """Step indices stored by integrate_realtime for the given sampling."""
    ks = list(range(0, n_steps + 1, store_every))
    if ks[-1] != n_steps:
        ks.append(n_steps)
    return ks


def trajectory_to_rows(states: Sequence[PhaseState], T: float, dt: float, store_every: int = 1):
    """CSV rows t, x[, y], px[, py] for a sampled real-time trajectory."""
    ks = sample_steps(max(1, int(round(T / dt))), store_every)
    for k, s in zip(ks, states):
        yield [k * dt, *s.position, *s.momentum]
