"""Poincare sections of classical versus fitted trial dynamics in two dimensions.

Orbits of H = p^2/2m + V are integrated in real time with the symplectic
stepper and their oriented crossings of a section plane are recorded. Each
crossing is sharpened by one Runge-Kutta sub-step that uses the section
coordinate itself as the independent variable, so stored points sit on the
plane exactly. Classical and trial sections are compared at equal energy
above the respective potential minimum: the fitted constant shifts the trial
potential by the ground energy, and that shift must not read as dynamics.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.optimize

from .errors import NumericalError
from .model import ActionSpec, PolynomialPotential
from .trajectory import _FR_DRIFT, _FR_KICK, PhaseState, hamiltonian_energy, make_batch_force

_CONVENTIONS = ("above-minimum", "absolute")
# R2 additive recurrence (plastic-number based): deterministic low-discrepancy
# placement in the section plane, the "seed" of a section
_PLASTIC = 1.3247179572447460260
_R2_ALPHA = (1.0 / _PLASTIC, 1.0 / _PLASTIC**2)


@dataclass(frozen=True)
class SectionSpec:
    """Section plane, energy, and integration policy for one section run."""

    energy: float
    initial_conditions: tuple
    dt: float = 1e-3
    max_crossings: int = 200
    plane_axis: int = 1
    plane_value: float = 0.0
    orientation: int = 1
    energy_convention: str = "above-minimum"
    max_steps: int = 50_000_000

    def __post_init__(self):
        if not math.isfinite(self.energy):
            raise ValueError("section energy must be finite")
        if not 0.0 < self.dt <= 1e-2:
            raise ValueError(f"time step must lie in (0, 1e-2], got {self.dt}")
        if self.max_crossings < 1:
            raise ValueError("need at least one crossing per orbit")
        if self.plane_axis not in (0, 1):
            raise ValueError("plane axis must be 0 or 1")
        if self.orientation not in (-1, 1):
            raise ValueError("orientation must be +1 or -1")
        if self.energy_convention not in _CONVENTIONS:
            raise ValueError(f"unknown energy convention {self.energy_convention!r}")
        ics = tuple(self.initial_conditions)
        if not ics:
            raise ValueError("at least one initial condition required")
        for s in ics:
            if not isinstance(s, PhaseState) or s.dim != 2:
                raise ValueError("initial conditions must be 2-D PhaseState values")
        object.__setattr__(self, "initial_conditions", ics)


def _potential_minimum_2d(pot: PolynomialPotential):
    """Deterministic local minimum of a confining 2-D polynomial from the origin."""
    res = scipy.optimize.minimize(
        lambda z: pot(z),
        np.zeros(2),
        method="Nelder-Mead",
        options={"xatol": 1e-13, "fatol": 1e-14, "maxiter": 4000},
    )
    return np.asarray(res.x, dtype=float), float(res.fun)


def _absolute_energy(action: ActionSpec, spec: SectionSpec) -> float:
    if spec.energy_convention == "absolute":
        return spec.energy
    _, vmin = _potential_minimum_2d(action.potential)
    return vmin + spec.energy


def _plane_extent(action: ActionSpec, spec: SectionSpec, e_abs: float) -> tuple:
    """Half-widths (x_max, p_max) of the allowed region inside the plane."""
    pot = action.potential
    axis = 1 - spec.plane_axis  # in-plane position coordinate
    c = spec.plane_value

    def v_line(u: float) -> float:
        z = [0.0, 0.0]
        z[axis] = u
        z[spec.plane_axis] = c
        return pot(tuple(z))

    if v_line(0.0) >= e_abs:
        raise ValueError("section energy does not reach the plane through the origin")
    span = 1.0
    while v_line(span) < e_abs or v_line(-span) < e_abs:
        span *= 2.0
        if span > 1e8:
            raise NumericalError("allowed region of the section plane is unbounded")
    hi = scipy.optimize.brentq(lambda u: v_line(u) - e_abs, 0.0, span)
    lo = scipy.optimize.brentq(lambda u: v_line(u) - e_abs, -span, 0.0)
    x_max = max(abs(hi), abs(lo))
    p_max = math.sqrt(2.0 * action.mass * (e_abs - v_line(0.0)))
    return x_max, p_max


def section_initial_conditions(
    action: ActionSpec,
    energy: float,
    n_orbits: int,
    plane_axis: int = 1,
    plane_value: float = 0.0,
    orientation: int = 1,
    energy_convention: str = "above-minimum",
    fill_fraction: float = 0.9,
    start_index: int = 1,
) -> tuple:
    """Low-discrepancy initial conditions on the energy shell in the plane.

    Points (x, p_x) follow the two-dimensional additive golden-like
    recurrence inside the allowed region, scaled by fill_fraction so the
    out-of-plane momentum stays bounded away from zero; that momentum takes
    the orientation sign and absorbs the remaining energy exactly.
    start_index offsets the recurrence and plays the role of a seed.
    """
    if action.dimension != 2:
        raise ValueError("sections require a 2-D action")
    if n_orbits < 1:
        raise ValueError("need at least one orbit")
    if not 0.0 < fill_fraction < 1.0:
        raise ValueError("fill_fraction must lie strictly between 0 and 1")
    if start_index < 0:
        raise ValueError("start_index must be non-negative")
    probe = SectionSpec(
        energy=energy,
        initial_conditions=(PhaseState((0.0, 0.0), (0.0, 1.0)),),
        plane_axis=plane_axis,
        plane_value=plane_value,
        orientation=orientation,
        energy_convention=energy_convention,
    )
    e_abs = _absolute_energy(action, probe)
    x_max, _ = _plane_extent(action, probe, e_abs)
    pot = action.potential
    m = action.mass
    axis = 1 - plane_axis
    states = []
    k = start_index
    while len(states) < n_orbits:
        u = (0.5 + _R2_ALPHA[0] * k) % 1.0
        w = (0.5 + _R2_ALPHA[1] * k) % 1.0
        k += 1
        x = fill_fraction * x_max * (2.0 * u - 1.0)
        z = [0.0, 0.0]
        z[axis] = x
        z[plane_axis] = plane_value
        room = 2.0 * m * (e_abs - pot(tuple(z)))
        if room <= 0.0:
            continue
        px = fill_fraction * math.sqrt(room) * (2.0 * w - 1.0)
        p_plane = math.sqrt(room - px * px)
        pos = tuple(z)
        mom = [0.0, 0.0]
        mom[axis] = px
        mom[plane_axis] = orientation * p_plane
        states.append(PhaseState(pos, tuple(mom)))
    return tuple(states)


@dataclass(frozen=True, eq=False)
class PoincareSection:
    """Oriented plane crossings (x, p_x) grouped by orbit."""

    spec: SectionSpec
    action_used: ActionSpec
    e_absolute: float
    orbits: tuple  # one (k_i, 2) array of (x, p_x) per initial condition

    def __post_init__(self):
        pot = self.action_used.potential
        m = self.action_used.mass
        axis = 1 - self.spec.plane_axis
        c = self.spec.plane_value
        for pts in self.orbits:
            if pts.size == 0:
                continue
            z = np.zeros((len(pts), 2))
            z[:, axis] = pts[:, 0]
            z[:, self.spec.plane_axis] = c
            v = pot.evaluate_points(z)
            if np.any(pts[:, 1] ** 2 / (2.0 * m) > self.e_absolute - v + 1e-8):
                raise NumericalError("section point outside the allowed region")

    @property
    def n_points(self) -> int:
        return sum(len(p) for p in self.orbits)

    def to_rows(self):
        for orbit_id, pts in enumerate(self.orbits):
            for x, px in pts:
                yield [orbit_id, float(x), float(px)]

    def csv_header(self) -> list:
        return ["orbit", "x", "px"]


def _henon_refine(x, y_from, px, py, m, grad, axis, plane_axis, c):
    """One RK4 step using the plane coordinate as the independent variable."""

    def deriv(xx, yy, ppx, ppy):
        z = np.zeros(2)
        z[axis] = xx
        z[plane_axis] = yy
        g = grad(z)
        fx, fy = -g[axis], -g[plane_axis]
        return ppx / ppy, m * fx / ppy, m * fy / ppy

    h = c - y_from
    k1 = deriv(x, y_from, px, py)
    k2 = deriv(x + 0.5 * h * k1[0], y_from + 0.5 * h, px + 0.5 * h * k1[1], py + 0.5 * h * k1[2])
    k3 = deriv(x + 0.5 * h * k2[0], y_from + 0.5 * h, px + 0.5 * h * k2[1], py + 0.5 * h * k2[2])
    k4 = deriv(x + h * k3[0], y_from + h, px + h * k3[1], py + h * k3[2])
    x_c = x + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
    px_c = px + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])
    py_c = py + h / 6.0 * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2])
    return x_c, px_c, py_c


def generate_section(action: ActionSpec, spec: SectionSpec) -> PoincareSection:
    """Integrate every initial condition and collect oriented plane crossings.

    Crossings are detected as sign changes of the plane coordinate between
    consecutive symplectic steps with the required momentum orientation;
    opposite-orientation transits are tracked so a missed (grazing) return
    is reported instead of silently double-counting.
    """
    if action.dimension != 2:
        raise ValueError("sections require a 2-D action")
    e_abs = _absolute_energy(action, spec)
    ics = spec.initial_conditions
    for s in ics:
        if abs(hamiltonian_energy(action, s) - e_abs) > 1e-10 * max(1.0, abs(e_abs)):
            raise ValueError(
                f"initial condition {s} misses the energy shell "
                f"H={e_abs} beyond 1e-10"
            )
    _, vmin = _potential_minimum_2d(action.potential)
    if e_abs <= vmin:
        raise ValueError("section energy must exceed the potential minimum")

    pot = action.potential
    m = action.mass
    dt = spec.dt
    axis = 1 - spec.plane_axis
    pax = spec.plane_axis
    c = spec.plane_value
    orient = spec.orientation
    force = make_batch_force(pot)
    grad_single = lambda z: pot.gradient_points(z[None, :])[0]

    n = len(ics)
    q = np.array([s.position for s in ics], dtype=float)
    p = np.array([s.momentum for s in ics], dtype=float)
    crossings = [[] for _ in range(n)]
    counts = np.zeros(n, dtype=int)
    active = np.ones(n, dtype=bool)
    last_transit = np.zeros(n, dtype=int)  # +1 upward, -1 downward, 0 none yet

    c1, c2 = _FR_DRIFT
    d1, d2 = _FR_KICK
    drift = np.array([c1, c2, c2, c1]) * dt
    kick = np.array([d1, d2, d1]) * dt
    g_prev = q[:, pax] - c
    q_prev = q.copy()
    p_prev = p.copy()
    steps = 0
    while active.any():
        if steps >= spec.max_steps:
            raise NumericalError(
                f"section did not reach {spec.max_crossings} crossings per "
                f"orbit within {spec.max_steps} steps"
            )
        np.copyto(q_prev, q)
        np.copyto(p_prev, p)
        q += drift[0] / m * p
        for stage in range(3):
            p += kick[stage] * force(q)  # force is already -grad V
            q += drift[stage + 1] / m * p
        steps += 1
        g_new = q[:, pax] - c
        up = (g_prev < 0.0) & (g_new >= 0.0)
        down = (g_prev > 0.0) & (g_new <= 0.0)
        moved = (up | down) & active
        if moved.any():
            for i in np.nonzero(moved)[0]:
                direction = 1 if up[i] else -1
                if direction == orient and counts[i] < spec.max_crossings:
                    if last_transit[i] == orient:
                        raise NumericalError(
                            "two same-orientation crossings without an "
                            "opposite transit; reduce dt (grazing orbit)"
                        )
                    if abs(p_prev[i, pax]) < 1e-10:
                        raise NumericalError(
                            "crossing with vanishing plane momentum; reduce dt"
                        )
                    x_c, px_c, py_c = _henon_refine(
                        q_prev[i, axis], q_prev[i, pax], p_prev[i, axis],
                        p_prev[i, pax], m, grad_single, axis, pax, c,
                    )
                    z = np.zeros(2)
                    z[axis] = x_c
                    z[pax] = c
                    e_cross = (px_c**2 + py_c**2) / (2.0 * m) + pot(z)
                    if abs(e_cross - e_abs) > 1e-8 * max(1.0, abs(e_abs)):
                        raise NumericalError(
                            "energy at a refined crossing drifted beyond 1e-8"
                        )
                    crossings[i].append((x_c, px_c))
                    counts[i] += 1
                    if counts[i] >= spec.max_crossings:
                        active[i] = False
                last_transit[i] = direction
        g_prev = g_new
    orbits = tuple(
        np.array(pts, dtype=float).reshape(len(pts), 2) for pts in crossings
    )
    return PoincareSection(spec=spec, action_used=action, e_absolute=e_abs, orbits=orbits)


def _occupied_boxes(section: PoincareSection, boxes, x_max, p_max) -> set:
    nx, npx = boxes
    occupied = set()
    for pts in section.orbits:
        if pts.size == 0:
            continue
        ix = np.clip(((pts[:, 0] + x_max) / (2.0 * x_max) * nx).astype(int), 0, nx - 1)
        ip = np.clip(((pts[:, 1] + p_max) / (2.0 * p_max) * npx).astype(int), 0, npx - 1)
        occupied.update(zip(ix.tolist(), ip.tolist()))
    return occupied


def _allowed_boxes(section: PoincareSection, boxes, x_max, p_max) -> int:
    """Boxes whose center lies inside the energetically allowed plane region."""
    nx, npx = boxes
    pot = section.action_used.potential
    m = section.action_used.mass
    axis = 1 - section.spec.plane_axis
    cx = -x_max + (np.arange(nx) + 0.5) * (2.0 * x_max / nx)
    cp = -p_max + (np.arange(npx) + 0.5) * (2.0 * p_max / npx)
    z = np.zeros((nx, 2))
    z[:, axis] = cx
    z[:, section.spec.plane_axis] = section.spec.plane_value
    v = pot.evaluate_points(z)
    room = section.e_absolute - v
    allowed = (cp[None, :] ** 2 / (2.0 * m)) <= room[:, None]
    return int(np.count_nonzero(allowed))


def section_occupancy(section: PoincareSection, boxes: tuple = (48, 48)) -> float:
    """Fraction of energetically allowed boxes visited by the section."""
    if section.n_points == 0:
        raise ValueError("cannot measure occupancy of an empty section")
    nx, npx = int(boxes[0]), int(boxes[1])
    if nx < 2 or npx < 2:
        raise ValueError("need at least a 2x2 box partition")
    x_max, p_max = _plane_extent(section.action_used, section.spec, section.e_absolute)
    occ = _occupied_boxes(section, (nx, npx), x_max, p_max)
    allowed = _allowed_boxes(section, (nx, npx), x_max, p_max)
    return len(occ) / allowed


def orbit_thickness(section: PoincareSection, n_angle_bins: int = 32) -> list:
    """Transverse spread of each orbit's crossing cloud, in scaled units.

    Points are scaled by the allowed-region half-widths; the spread is the
    average over angular bins of the radial standard deviation, a proxy for
    how far the cloud departs from a thin closed curve.
    """
    x_max, p_max = _plane_extent(section.action_used, section.spec, section.e_absolute)
    out = []
    for pts in section.orbits:
        if len(pts) < 8:
            out.append(math.nan)
            continue
        u = pts[:, 0] / x_max
        v = pts[:, 1] / p_max
        r = np.hypot(u, v)
        theta = np.arctan2(v, u)
        bins = np.clip(
            ((theta + math.pi) / (2.0 * math.pi) * n_angle_bins).astype(int),
            0,
            n_angle_bins - 1,
        )
        spreads = []
        for b in range(n_angle_bins):
            sel = r[bins == b]
            if len(sel) >= 3:
                spreads.append(float(np.std(sel)))
        out.append(float(np.mean(spreads)) if spreads else math.nan)
    return out


@dataclass(frozen=True)
class SectionComparison:
    """Descriptive comparison of two sections at equal shell energy."""

    occupancy_a: float
    occupancy_b: float
    symmetric_difference: float
    points_a: int
    points_b: int
    thickness_a: tuple
    thickness_b: tuple

    def to_json_dict(self) -> dict:
        clean = lambda t: [None if math.isnan(v) else v for v in t]
        return {
            "occupancy_classical": self.occupancy_a,
            "occupancy_quantum": self.occupancy_b,
            "symmetric_difference": self.symmetric_difference,
            "points_classical": self.points_a,
            "points_quantum": self.points_b,
            "thickness_classical": clean(self.thickness_a),
            "thickness_quantum": clean(self.thickness_b),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2, sort_keys=True)


def compare_sections(
    classical: PoincareSection, quantum: PoincareSection, boxes: tuple = (48, 48)
) -> SectionComparison:
    """Occupancies plus the symmetric difference of occupied box sets.

    Both sections must use the same plane, orientation, and energy
    convention; the box partition for the symmetric difference spans the
    union of the two allowed regions so box indices are commensurate.
    """
    sa, sb = classical.spec, quantum.spec
    if sa.energy_convention != sb.energy_convention:
        raise ValueError(
            f"energy conventions differ: {sa.energy_convention!r} vs "
            f"{sb.energy_convention!r}"
        )
    if (sa.plane_axis, sa.plane_value, sa.orientation) != (
        sb.plane_axis,
        sb.plane_value,
        sb.orientation,
    ):
        raise ValueError("sections use different planes or orientations")
    if classical.n_points == 0 or quantum.n_points == 0:
        raise ValueError("cannot compare empty sections")
    nx, npx = int(boxes[0]), int(boxes[1])
    xa, pa = _plane_extent(classical.action_used, sa, classical.e_absolute)
    xb, pb = _plane_extent(quantum.action_used, sb, quantum.e_absolute)
    x_max, p_max = max(xa, xb), max(pa, pb)
    occ_a = _occupied_boxes(classical, (nx, npx), x_max, p_max)
    occ_b = _occupied_boxes(quantum, (nx, npx), x_max, p_max)
    union = occ_a | occ_b
    sym = len(occ_a ^ occ_b) / len(union)
    return SectionComparison(
        occupancy_a=section_occupancy(classical, (nx, npx)),
        occupancy_b=section_occupancy(quantum, (nx, npx)),
        symmetric_difference=sym,
        points_a=classical.n_points,
        points_b=quantum.n_points,
        thickness_a=tuple(orbit_thickness(classical)),
        thickness_b=tuple(orbit_thickness(quantum)),
    )
