"""Closed-form large-T consequences of a fitted quantum action.

For a confining trial action the T -> infinity limit of the two-point
amplitude yields the ground energy (minimum of the trial potential) and the
ground wavefunction psi(x) = N^-1 exp(-integral of sqrt(2 m (V - Vmin))/hbar).
The same limit relates the classical potential to the trial one through a
first-order differential law, invertible by outward integration of the
Riccati equation W^2 - hbar W' sgn(x) = 2m(V - E_gr). A WKB form with the
(2m[V - E_gr])^(-1/4) prefactor becomes exact under the substitution of the
trial mass and potential, with the prefactor degenerating to a constant.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np
import scipy.optimize

from .errors import NumericalError
from .model import ActionSpec, PolynomialPotential
from .propagator import Grid, discretize_hamiltonian, spectral_decompose

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(15)


@dataclass(frozen=True)
class GroundStateInfo:
    """Ground energy and normalized non-negative wavefunction on a grid."""

    grid: Grid
    energy: float
    psi: np.ndarray
    source: str = "quantum-action"

    def __post_init__(self):
        psi = np.asarray(self.psi, dtype=float)
        if psi.shape != (self.grid.size,):
            raise ValueError("psi must be flat over the grid")
        if np.any(psi < 0.0):
            raise ValueError("ground-state wavefunction must be non-negative")
        w = self.grid.weights_flat()
        norm = float(np.dot(w, psi * psi))
        if abs(norm - 1.0) > 1e-8:
            raise ValueError(f"psi is not normalized: integral {norm}")
        object.__setattr__(self, "psi", psi)

    def overlap(self, other: "GroundStateInfo") -> float:
        if other.grid != self.grid:
            raise ValueError("overlap requires matching grids")
        w = self.grid.weights_flat()
        return float(np.dot(w, self.psi * other.psi))


def _require_1d_even(pot: PolynomialPotential, what: str):
    if pot.dimension != 1:
        raise ValueError(f"{what} requires a 1-D potential")
    for exp, coef in pot.terms:
        if exp[0] % 2 == 1 and coef != 0.0:
            raise ValueError(
                f"{what} is only supported for parity-symmetric potentials; "
                f"odd term {exp} present"
            )


def _gauss_cells(fn: Callable[[np.ndarray], np.ndarray], edges: np.ndarray) -> np.ndarray:
    """Per-cell 15-point Gauss-Legendre integrals between consecutive edges."""
    a = edges[:-1]
    b = edges[1:]
    half = 0.5 * (b - a)
    mid = 0.5 * (a + b)
    pts = mid[:, None] + half[:, None] * _GL_NODES[None, :]
    vals = fn(pts.ravel()).reshape(pts.shape)
    return half * (vals @ _GL_WEIGHTS)


def _refine_minimum(xs: np.ndarray, vs: np.ndarray) -> tuple[float, float]:
    """Grid argmin refined by a local quadratic fit; returns (x0, V(x0))."""
    near0 = np.abs(vs - vs.min()) <= 1e-14 * (1.0 + abs(float(vs.min())))
    idx = int(np.argmin(np.where(near0, np.abs(xs), np.inf)))
    if idx == 0 or idx == len(xs) - 1:
        return float(xs[idx]), float(vs[idx])
    h = xs[1] - xs[0]
    a = (vs[idx + 1] - 2.0 * vs[idx] + vs[idx - 1]) / (2.0 * h * h)
    b = (vs[idx + 1] - vs[idx - 1]) / (2.0 * h)
    if a <= 0.0:
        return float(xs[idx]), float(vs[idx])
    dx = -b / (2.0 * a)
    dx = max(-h, min(h, dx))
    return float(xs[idx] + dx), float(vs[idx] + b * dx + a * dx * dx)


def ground_state_from_quantum_action(quantum: ActionSpec, grid: Grid) -> GroundStateInfo:
    """Ground energy and wavefunction implied by a 1-D confining trial action.

    The energy is the refined minimum of the trial potential; the
    wavefunction is exp(-Phi/hbar) with Phi the accumulated integral of
    sqrt(2 m (V - Vmin)) from the minimum, normalized by trapezoidal
    quadrature on the grid.
    """
    pot = quantum.potential
    if pot.dimension != 1 or grid.dim != 1:
        raise ValueError("ground-state extraction is defined for 1-D actions")
    if not pot.is_confining():
        raise ValueError("trial potential must be confining")
    xs = grid.axes()[0]
    vs = pot.evaluate_points(xs[:, None])
    x0, e_gr = _refine_minimum(xs, vs)
    m, hb = quantum.mass, quantum.hbar

    def integrand(x):
        return np.sqrt(np.maximum(2.0 * m * (pot.evaluate_points(x[:, None]) - e_gr), 0.0))

    # split the cell containing the minimum so each cell sees a smooth integrand
    edges = np.unique(np.concatenate([xs, [min(max(x0, xs[0]), xs[-1])]]))
    cells = _gauss_cells(integrand, edges)
    cum = np.concatenate([[0.0], np.cumsum(cells)])
    cum_at = dict(zip(edges.tolist(), cum.tolist()))
    c_nodes = np.array([cum_at[x] for x in xs.tolist()])
    c0 = np.interp(x0, edges, cum)
    phi = np.abs(c_nodes - c0)
    psi = np.exp(-phi / hb)
    w = grid.weights_flat()
    psi /= math.sqrt(float(np.dot(w, psi * psi)))
    return GroundStateInfo(grid=grid, energy=e_gr, psi=psi, source="quantum-action")


def ground_state_spectral(action: ActionSpec, grid: Grid) -> GroundStateInfo:
    """Reference ground state from direct diagonalization on the same grid."""
    H = discretize_hamiltonian(action, grid)
    sd = spectral_decompose(H, 1, grid)
    psi = sd.eigenvectors[0]
    floor = -1e-10 * float(np.max(np.abs(psi)))
    if np.any(psi < floor):
        raise NumericalError("spectral ground state has a sign change")
    psi = np.maximum(psi, 0.0)
    w = grid.weights_flat()
    psi = psi / math.sqrt(float(np.dot(w, psi * psi)))
    return GroundStateInfo(grid=grid, energy=float(sd.eigenvalues[0]), psi=psi, source="spectral")


# -- transformation law ------------------------------------------------------


def transformation_law_residual(
    classical: ActionSpec, e_gr: float, quantum: ActionSpec, x
):
    """Defect of the large-T law linking classical and trial potentials.

    Returns 2m(V - E_gr) - [U - (hbar/2) U' sgn(x)/sqrt(U)] with
    U = 2 m_t (V_t - V_t_min), evaluated with analytic polynomial
    derivatives. Raises at the singular point where U vanishes.
    """
    _require_1d_even(classical.potential, "transformation law")
    _require_1d_even(quantum.potential, "transformation law")
    if classical.hbar != quantum.hbar:
        raise ValueError("classical and quantum actions must share hbar")
    hb = classical.hbar
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    vmin_t = quantum.potential((0.0,))
    u = 2.0 * quantum.mass * (quantum.potential.evaluate_points(xs[:, None]) - vmin_t)
    du = 2.0 * quantum.mass * quantum.potential.derivative(0).evaluate_points(xs[:, None])
    if np.any(u <= 0.0):
        raise ValueError("law is singular where the trial potential meets its minimum")
    lhs = 2.0 * classical.mass * (
        classical.potential.evaluate_points(xs[:, None]) - e_gr
    )
    res = lhs - u + 0.5 * hb * du / np.sqrt(u) * np.sign(xs)
    return float(res[0]) if np.isscalar(x) or np.shape(x) == () else res


@dataclass(frozen=True)
class InversionResult:
    """Reconstructed quantum potential product U = 2 m_t (V_t - V_t_min)."""

    grid: Grid
    classical: ActionSpec
    e_gr: float
    U: np.ndarray
    W: np.ndarray  # odd square root, sign following x
    Phi: np.ndarray  # accumulated integral of |W| from the origin

    def ground_state(self) -> GroundStateInfo:
        psi = np.exp(-self.Phi / self.classical.hbar)
        w = self.grid.weights_flat()
        psi = psi / math.sqrt(float(np.dot(w, psi * psi)))
        return GroundStateInfo(
            grid=self.grid, energy=self.e_gr, psi=psi, source="quantum-action"
        )


def invert_transformation_law(
    classical: ActionSpec, e_gr: float, grid: Grid, substeps: int = 4
) -> InversionResult:
    """Solve W^2 - hbar W' = 2m(V - E_gr) outward from W(0) = 0.

    Fourth-order Runge-Kutta with a cubic series start; the first step and
    the guards reflect that the outward direction amplifies any error in
    E_gr exponentially (the growth rate is twice the log-derivative of the
    ground state), so the grid extent must stay within the region where the
    wavefunction is numerically resolvable.
    """
    _require_1d_even(classical.potential, "transformation-law inversion")
    if grid.dim != 1:
        raise ValueError("inversion requires a 1-D grid")
    if grid.npoints[0] % 2 == 0:
        raise ValueError("inversion grid needs a node at the origin (odd point count)")
    m, hb = classical.mass, classical.hbar
    pot = classical.potential

    def f(x: float) -> float:
        return 2.0 * m * (pot((x,)) - e_gr)

    xs = grid.axes()[0]
    n = grid.npoints[0]
    mid = n // 2
    h = grid.spacing[0] / substeps

    # cubic series around the origin: W = a1 x + a3 x^3 + ...
    f0 = f(0.0)
    f2 = m * pot.derivative(0).derivative(0)((0.0,))  # x^2 coefficient of f
    a1 = -f0 / hb
    a3 = (a1 * a1 - f2) / (3.0 * hb)

    def rhs(x: float, w: float) -> float:
        return (w * w - f(x)) / hb

    w_half = np.empty(mid + 1)
    phi_half = np.empty(mid + 1)
    w_half[0] = 0.0
    phi_half[0] = 0.0
    x = 0.0
    w = 0.0
    phi = 0.0
    first = True
    for node in range(1, mid + 1):
        for _ in range(substeps):
            if first:
                x = h
                w = a1 * x + a3 * x**3
                phi = 0.5 * a1 * x**2 + 0.25 * a3 * x**4
                first = False
                continue
            k1 = rhs(x, w)
            k2 = rhs(x + 0.5 * h, w + 0.5 * h * k1)
            k3 = rhs(x + 0.5 * h, w + 0.5 * h * k2)
            k4 = rhs(x + h, w + h * k3)
            # Phi integrates W through the same stages, in lockstep
            phi += h * w + h * h / 6.0 * (k1 + k2 + k3)
            w += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            x += h
            if w < -1e-7 * (1.0 + abs(f0)):
                raise NumericalError(
                    "reconstructed W turned negative: the supplied energy lies "
                    "below the ground level of this potential"
                )
            if w * w > 1e8 * (1.0 + abs(f(x))):
                raise NumericalError(
                    "reconstructed W diverged: the supplied energy lies above "
                    "the ground level (node encountered)"
                )
        w_half[node] = w
        phi_half[node] = phi

    w_half = np.maximum(w_half, 0.0)
    U = np.empty(n)
    W = np.empty(n)
    Phi = np.empty(n)
    U[mid:] = w_half * w_half
    U[:mid] = U[-1:mid:-1]
    W[mid:] = w_half
    W[:mid] = -w_half[:0:-1]
    Phi[mid:] = phi_half
    Phi[:mid] = phi_half[:0:-1]
    return InversionResult(grid=grid, classical=classical, e_gr=e_gr, U=U, W=W, Phi=Phi)


def transformation_law_residual_grid(inv: InversionResult, margin: int = 4) -> tuple:
    """Round-trip defect of a reconstructed U using high-order finite differences.

    Returns (x values, residuals) on nodes at least ``margin`` cells away
    from both the origin and the boundary.
    """
    xs = inv.grid.axes()[0]
    h = inv.grid.spacing[0]
    n = len(xs)
    du = np.full(n, np.nan)
    du[2:-2] = (inv.U[:-4] - 8.0 * inv.U[1:-3] + 8.0 * inv.U[3:-1] - inv.U[4:]) / (12.0 * h)
    m, hb = inv.classical.mass, inv.classical.hbar
    f = 2.0 * m * (inv.classical.potential.evaluate_points(xs[:, None]) - inv.e_gr)
    mid = n // 2
    mask = np.zeros(n, dtype=bool)
    mask[2:-2] = True
    mask[mid - margin : mid + margin + 1] = False
    with np.errstate(divide="ignore", invalid="ignore"):
        res = f - inv.U + 0.5 * hb * du / np.sqrt(inv.U) * np.sign(xs)
    return xs[mask], res[mask]


# -- WKB comparison ----------------------------------------------------------


@dataclass(frozen=True)
class WkbReport:
    """L2 distances of WKB forms to the spectral ground state."""

    e_gr: float
    turning_point: float
    distance_quantum: float
    distance_classical: float
    excluded_fraction: float


def wkb_compare(classical: ActionSpec, quantum, e_gr: float, grid: Grid) -> WkbReport:
    """Compare classical-WKB and quantum-substituted forms to the true state.

    The classical branch uses |2m(V-E_gr)|^(-1/4) with the cosine phase
    inside the well and the decaying exponential with connection factor 1/2
    outside; nodes with |2m(V-E_gr)| < 1e-3 near the turning points are
    excluded and the amplitude is chosen by least squares on the rest. The
    quantum branch substitutes the trial mass and potential, whose prefactor
    is constant, and is compared without exclusions.
    """
    _require_1d_even(classical.potential, "WKB comparison")
    if grid.dim != 1:
        raise ValueError("WKB comparison requires a 1-D grid")
    ref = ground_state_spectral(classical, grid)
    if isinstance(quantum, InversionResult):
        sub = quantum.ground_state()
    else:
        sub = ground_state_from_quantum_action(quantum, grid)
    if sub.grid != grid:
        raise ValueError("quantum-substituted state must live on the same grid")
    w = grid.weights_flat()
    d_quantum = math.sqrt(float(np.dot(w, (sub.psi - ref.psi) ** 2)))

    m, hb = classical.mass, classical.hbar
    pot = classical.potential
    xs = grid.axes()[0]
    kappa2 = 2.0 * m * (pot.evaluate_points(xs[:, None]) - e_gr)
    if kappa2[len(xs) // 2] >= 0.0 or kappa2[-1] <= 0.0:
        raise ValueError("energy must sit between the well bottom and the wall")
    b = float(
        scipy.optimize.brentq(lambda x: 2.0 * m * (pot((x,)) - e_gr), 0.0, xs[-1])
    )

    def mom(x):  # |p| inside the well
        return np.sqrt(np.maximum(-2.0 * m * (pot.evaluate_points(x[:, None]) - e_gr), 0.0))

    def kap(x):  # decay rate outside
        return np.sqrt(np.maximum(2.0 * m * (pot.evaluate_points(x[:, None]) - e_gr), 0.0))

    absx = np.abs(xs)
    psi_wkb = np.empty_like(xs)
    inside = absx < b
    # phase integral from |x| to the turning point, vectorized per cell
    xin = np.unique(np.concatenate([absx[inside], [0.0, b]]))
    cum_in = np.concatenate([[0.0], np.cumsum(_gauss_cells(mom, xin))])
    theta_of = dict(zip(xin.tolist(), (cum_in[-1] - cum_in).tolist()))
    theta = np.array([theta_of[v] for v in absx[inside].tolist()])
    outside = ~inside
    xout = np.unique(np.concatenate([[b], absx[outside]]))
    cum_out = np.concatenate([[0.0], np.cumsum(_gauss_cells(kap, xout))])
    decay_of = dict(zip(xout.tolist(), cum_out.tolist()))
    decay = np.array([decay_of[v] for v in absx[outside].tolist()])
    with np.errstate(divide="ignore"):  # nodes on a turning point are excluded below
        psi_wkb[inside] = np.abs(kappa2[inside]) ** -0.25 * np.cos(theta / hb - 0.25 * math.pi)
        psi_wkb[outside] = 0.5 * np.abs(kappa2[outside]) ** -0.25 * np.exp(-decay / hb)

    included = np.abs(kappa2) >= 1e-3
    ww = w[included]
    num = float(np.dot(ww, psi_wkb[included] * ref.psi[included]))
    den = float(np.dot(ww, psi_wkb[included] ** 2))
    amp = num / den if den > 0 else 0.0
    d_classical = math.sqrt(float(np.dot(ww, (amp * psi_wkb[included] - ref.psi[included]) ** 2)))
    return WkbReport(
        e_gr=e_gr,
        turning_point=b,
        distance_quantum=d_quantum,
        distance_classical=d_classical,
        excluded_fraction=1.0 - float(np.count_nonzero(included)) / len(xs),
    )


# -- hydrogen radial sector --------------------------------------------------


@dataclass(frozen=True)
class HydrogenSector:
    """Exact trial action of the radial Coulomb problem at angular momentum l.

    All entries are exact rationals: the trial potential mu/r^2 - nu/r with
    mu = hbar^2 l^2 / 2m and nu = e^2 l/(l+1) reproduces the sector energy
    -E_ion/(l+1)^2 as its own minimum, located at r = a0 l(l+1), which is
    also the maximum of the radial wavefunction (r/a0)^l exp(-r/((l+1)a0)).
    """

    l: int
    mu: Fraction
    nu: Fraction
    energy: Fraction
    ionization_energy: Fraction
    bohr_radius: Fraction
    r_min: Fraction
    barrier_coefficient: Fraction  # hbar^2 l(l+1)/2m of the classical sector

    def trial_potential_value(self, r: Fraction) -> Fraction:
        r = Fraction(r)
        return self.mu / r**2 - self.nu / r

    def classical_potential_value(self, r: Fraction) -> Fraction:
        r = Fraction(r)
        return self.barrier_coefficient / r**2 - self.e_squared / r

    @property
    def e_squared(self) -> Fraction:
        # nu = e^2 l/(l+1)  =>  e^2 = nu (l+1)/l
        return self.nu * (self.l + 1) / self.l

    def wavefunction(self, r: float) -> float:
        a0 = float(self.bohr_radius)
        return (r / a0) ** self.l * math.exp(-r / ((self.l + 1) * a0))


def hydrogen_sector(l: int, hbar=1, mass=1, e2=1) -> HydrogenSector:
    """Exact radial-sector quantities for angular momentum l >= 1.

    Verifies internally, in rational arithmetic, that -nu^2/(4 mu) equals
    -E_ion/(l+1)^2 and that the trial-potential minimum coincides with the
    wavefunction maximum at a0 l(l+1).
    """
    if int(l) != l or l < 1:
        raise ValueError(f"angular momentum must be an integer >= 1, got {l}")
    l = int(l)
    hb, m, q2 = Fraction(hbar), Fraction(mass), Fraction(e2)
    if hb <= 0 or m <= 0 or q2 <= 0:
        raise ValueError("hbar, mass and e^2 must be positive")
    mu = hb**2 * l**2 / (2 * m)
    nu = q2 * Fraction(l, l + 1)
    e_ion = m * q2**2 / (2 * hb**2)
    a0 = hb**2 / (m * q2)
    energy = -(nu**2) / (4 * mu)
    if energy != -e_ion / (l + 1) ** 2:
        raise NumericalError("rational identity for the sector energy failed")
    r_min = 2 * mu / nu
    if r_min != a0 * l * (l + 1):
        raise NumericalError("rational identity for the potential minimum failed")
    # argmax of (r/a0)^l exp(-r/((l+1)a0)): l/r = 1/((l+1)a0)
    r_max = Fraction(l) * (l + 1) * a0
    if r_max != r_min:
        raise NumericalError("wavefunction maximum does not sit at the minimum")
    return HydrogenSector(
        l=l,
        mu=mu,
        nu=nu,
        energy=energy,
        ionization_energy=e_ion,
        bohr_radius=a0,
        r_min=r_min,
        barrier_coefficient=hb**2 * l * (l + 1) / (2 * m),
    )


def hydrogen_table(l_max: int, hbar=1, mass=1, e2=1):
    """Rows (l, mu, nu, E_l) as floats for l = 1 .. l_max."""
    if l_max < 1:
        raise ValueError("l_max must be >= 1")
    rows = []
    for l in range(1, l_max + 1):
        s = hydrogen_sector(l, hbar=hbar, mass=mass, e2=e2)
        rows.append([l, float(s.mu), float(s.nu), float(s.energy)])
    return rows
