"""Euclidean transition amplitudes on Dirichlet grids.

The Hamiltonian is discretized with second-order central differences on a
symmetric box, diagonalized, and amplitudes are assembled from the spectral
sum G(xf, T; xi) = sum_n psi_n(xf) psi_n(xi) exp(-E_n T / hbar).
Eigenfunctions are normalized under trapezoidal quadrature, so they carry the
continuum 1/sqrt(h) scale per dimension and the sum needs no extra factor.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import NumericalError
from .model import ActionSpec

# spectral terms lighter than this fraction of the leading one are dropped
BOLTZMANN_CUTOFF = 1e-14


@dataclass(frozen=True)
class Grid:
    """Symmetric tensor grid [-L, L]^dim with N points per axis (N >= 16)."""

    extents: tuple
    npoints: tuple

    def __post_init__(self):
        ext = self.extents if isinstance(self.extents, (tuple, list)) else (self.extents,)
        npt = self.npoints if isinstance(self.npoints, (tuple, list)) else (self.npoints,)
        ext = tuple(float(x) for x in ext)
        npt = tuple(int(n) for n in npt)
        if len(ext) != len(npt):
            raise ValueError("extents and npoints must have the same length")
        if len(ext) not in (1, 2):
            raise ValueError("only 1-D and 2-D grids are supported")
        if any(x <= 0 for x in ext):
            raise ValueError("extents must be positive")
        if any(n < 16 for n in npt):
            raise ValueError("at least 16 points per axis required")
        object.__setattr__(self, "extents", ext)
        object.__setattr__(self, "npoints", npt)

    @property
    def dim(self) -> int:
        return len(self.extents)

    @property
    def shape(self) -> tuple:
        return self.npoints

    @property
    def size(self) -> int:
        return int(np.prod(self.npoints))

    @property
    def spacing(self) -> tuple:
        return tuple(2.0 * L / (n - 1) for L, n in zip(self.extents, self.npoints))

    def axes(self) -> list:
        return [np.linspace(-L, L, n) for L, n in zip(self.extents, self.npoints)]

    def axis_weights(self) -> list:
        """Per-axis trapezoidal weights."""
        out = []
        for h, n in zip(self.spacing, self.npoints):
            w = np.full(n, h)
            w[0] = w[-1] = 0.5 * h
            out.append(w)
        return out

    def weights_flat(self) -> np.ndarray:
        """Trapezoidal quadrature weights on the flattened grid."""
        ws = self.axis_weights()
        if self.dim == 1:
            return ws[0]
        return np.multiply.outer(ws[0], ws[1]).ravel()

    def potential_flat(self, action: ActionSpec) -> np.ndarray:
        return action.potential.evaluate_on_axes(self.axes()).ravel()

    def index_of(self, point) -> int:
        """Flat index of a point that must coincide with a grid node."""
        pt = np.atleast_1d(np.asarray(point, dtype=float))
        if pt.shape != (self.dim,):
            raise ValueError(f"point has shape {pt.shape}, expected ({self.dim},)")
        idx = []
        for x, L, n, h in zip(pt, self.extents, self.npoints, self.spacing):
            k = (x + L) / h
            kr = int(round(k))
            if kr < 0 or kr >= n or abs(k - kr) > 1e-6:
                raise ValueError(f"point {tuple(pt)} does not lie on a grid node")
            idx.append(kr)
        if self.dim == 1:
            return idx[0]
        return idx[0] * self.npoints[1] + idx[1]

    def snap(self, point):
        """Nearest grid node to an arbitrary point inside the box."""
        pt = np.atleast_1d(np.asarray(point, dtype=float))
        out = []
        for x, L, n, h in zip(pt, self.extents, self.npoints, self.spacing):
            k = min(max(int(round((x + L) / h)), 0), n - 1)
            out.append(-L + k * h)
        return tuple(out)


@dataclass(frozen=True)
class SpectralData:
    """Lowest eigenpairs of the grid Hamiltonian.

    Eigenvectors are stored flattened and normalized so that the trapezoidal
    quadrature of psi^2 over the box equals one.
    """

    grid: Grid
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # shape (k, grid.size)

    def wavefunction(self, n: int) -> np.ndarray:
        return self.eigenvectors[n].reshape(self.grid.shape)

    def overlap_matrix(self) -> np.ndarray:
        w = self.grid.weights_flat()
        return (self.eigenvectors * w) @ self.eigenvectors.T


@dataclass(frozen=True)
class PropagatorTable:
    """Euclidean amplitudes for a fixed transition time over boundary pairs."""

    grid: Grid
    T: float
    pairs: tuple  # ((xi tuple, xf tuple), ...)
    amplitudes: np.ndarray

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=float)
        if amps.shape != (len(self.pairs),):
            raise ValueError("one amplitude per pair required")
        if not np.all(np.isfinite(amps)) or np.any(amps <= 0.0):
            raise NumericalError(
                "non-positive amplitude in propagator table; increase the "
                "spectral cutoff or reduce the boundary-point separation"
            )
        object.__setattr__(self, "amplitudes", amps)

    def value(self, xi, xf) -> float:
        key = (tuple(np.atleast_1d(xi)), tuple(np.atleast_1d(xf)))
        for p, g in zip(self.pairs, self.amplitudes):
            if p == key:
                return float(g)
        raise KeyError(f"pair {key} not in table")

    def to_rows(self):
        dim = self.grid.dim
        for (xi, xf), g in zip(self.pairs, self.amplitudes):
            yield list(xi) + list(xf) + [self.T, float(g)]

    def csv_header(self) -> list:
        if self.grid.dim == 1:
            return ["xi", "xf", "T", "G"]
        return ["xi", "yi", "xf", "yf", "T", "G"]


def discretize_hamiltonian(action: ActionSpec, grid: Grid) -> sp.csr_matrix:
    """Sparse Hermitian H = -(hbar^2/2m) Laplacian + V with Dirichlet walls."""
    if action.dimension != grid.dim:
        raise ValueError(
            f"action dimension {action.dimension} != grid dimension {grid.dim}"
        )
    hb2m = action.hbar**2 / (2.0 * action.mass)
    mats = []
    for h, n in zip(grid.spacing, grid.npoints):
        main = np.full(n, 2.0 * hb2m / h**2)
        off = np.full(n - 1, -hb2m / h**2)
        mats.append(sp.diags([off, main, off], [-1, 0, 1], format="csr"))
    if grid.dim == 1:
        H = mats[0]
    else:
        nx, ny = grid.npoints
        H = sp.kron(mats[0], sp.identity(ny, format="csr")) + sp.kron(
            sp.identity(nx, format="csr"), mats[1]
        )
    H = H + sp.diags(grid.potential_flat(action))
    return sp.csr_matrix(H)


def spectral_decompose(H, k: int, grid: Grid, maxiter: int = 5000) -> SpectralData:
    """Lowest-k eigenpairs, trapezoid-normalized with a deterministic sign."""
    n = H.shape[0]
    if not 1 <= k <= n - 2:
        raise ValueError(f"need 1 <= k <= {n - 2}, got {k}")
    if grid.size != n:
        raise ValueError("grid does not match Hamiltonian size")
    if grid.dim == 1:
        d = H.diagonal()
        e = H.diagonal(1)
        vals, vecs = scipy.linalg.eigh_tridiagonal(d, e, select="i", select_range=(0, k - 1))
        vecs = vecs.T
    elif n <= 2048:
        vals, vecs = scipy.linalg.eigh(H.toarray())
        vals, vecs = vals[:k], vecs[:, :k].T
    else:
        # Gershgorin lower bound (= min V for this stencil): a shift strictly
        # below the spectrum makes shift-invert LM return the lowest pairs
        diag = H.diagonal()
        offdiag = np.asarray(abs(H).sum(axis=1)).ravel() - np.abs(diag)
        sigma = float((diag - offdiag).min()) - 1.0
        v0 = np.full(n, 1.0 / math.sqrt(n))  # fixed start vector for determinism
        try:
            vals, vecs = spla.eigsh(H, k=k, sigma=sigma, which="LM", v0=v0, maxiter=maxiter)
        except spla.ArpackNoConvergence as exc:
            raise NumericalError(f"sparse eigensolver did not converge: {exc}") from exc
        order = np.argsort(vals)
        vals, vecs = vals[order], vecs[:, order].T
    w = grid.weights_flat()
    psis = np.empty_like(vecs)
    for i, v in enumerate(vecs):
        nrm = math.sqrt(float(np.dot(w, v * v)))
        if nrm == 0.0:
            raise NumericalError("zero-norm eigenvector")
        v = v / nrm
        j = int(np.argmax(np.abs(v)))
        if v[j] < 0:
            v = -v
        psis[i] = v
    return SpectralData(grid=grid, eigenvalues=np.asarray(vals, dtype=float), eigenvectors=psis)


@functools.lru_cache(maxsize=16)
def _cached_decomposition(action: ActionSpec, grid: Grid, k: int) -> SpectralData:
    H = discretize_hamiltonian(action, grid)
    return spectral_decompose(H, k, grid)


def decompose_for_time(action: ActionSpec, grid: Grid, T: float) -> SpectralData:
    """Decomposition with enough states that dropped Boltzmann weights < 1e-14."""
    if T <= 0:
        raise ValueError(f"transition time must be positive, got {T}")
    gap_needed = -action.hbar * math.log(BOLTZMANN_CUTOFF) / T
    kmax = grid.size - 2
    k = min(32, kmax)
    while True:
        sd = _cached_decomposition(action, grid, k)
        if sd.eigenvalues[-1] - sd.eigenvalues[0] >= gap_needed or k >= kmax:
            return sd
        k = min(2 * k, kmax)


def euclidean_propagate(action: ActionSpec, grid: Grid, T: float, pairs) -> PropagatorTable:
    """Spectral Euclidean amplitudes for boundary pairs lying on grid nodes."""
    pairs = _normalize_pairs(pairs, grid.dim)
    if not pairs:
        raise ValueError("at least one boundary pair required")
    sd = decompose_for_time(action, grid, T)
    E = sd.eigenvalues
    weights = np.exp(-(E - E[0]) * T / action.hbar)
    keep = weights >= BOLTZMANN_CUTOFF
    psis = sd.eigenvectors[keep]
    boltz = np.exp(-E[keep] * T / action.hbar)
    idx_i = [grid.index_of(p[0]) for p in pairs]
    idx_f = [grid.index_of(p[1]) for p in pairs]
    amps = np.array(
        [float(np.sum(psis[:, i] * psis[:, f] * boltz)) for i, f in zip(idx_i, idx_f)]
    )
    return PropagatorTable(grid=grid, T=T, pairs=tuple(pairs), amplitudes=amps)


def _normalize_pairs(pairs, dim: int):
    out = []
    for pair in pairs:
        xi, xf = pair
        xi = tuple(float(v) for v in np.atleast_1d(xi))
        xf = tuple(float(v) for v in np.atleast_1d(xf))
        if len(xi) != dim or len(xf) != dim:
            raise ValueError(f"pair {pair} does not match grid dimension {dim}")
        out.append((xi, xf))
    return out


def tensor_pairs(initial_points, final_points):
    """All (initial, final) combinations of two point collections."""
    init = [tuple(np.atleast_1d(p)) for p in initial_points]
    fin = [tuple(np.atleast_1d(p)) for p in final_points]
    return [(a, b) for a in init for b in fin]


def feynman_kac_energy(action: ActionSpec, grid: Grid, T: float, T_shorter: float) -> float:
    """Ground-energy estimate -hbar ln[G(0,T;0)/G(0,T';0)] / (T - T')."""
    if not 0 < T_shorter < T:
        raise ValueError("need 0 < T_shorter < T")
    origin = (0.0,) * grid.dim
    g1 = euclidean_propagate(action, grid, T, [(origin, origin)]).amplitudes[0]
    g2 = euclidean_propagate(action, grid, T_shorter, [(origin, origin)]).amplitudes[0]
    return -action.hbar * (math.log(g1) - math.log(g2)) / (T - T_shorter)


# -- harmonic-oscillator closed forms (oracle) ------------------------------


def ho_euclidean_action(m: float, omega: float, x_i: float, x_f: float, T: float) -> float:
    """Classical Euclidean action of the harmonic oscillator two-point path."""
    s = math.sinh(omega * T)
    c = math.cosh(omega * T)
    return m * omega / (2.0 * s) * ((x_i**2 + x_f**2) * c - 2.0 * x_i * x_f)


def ho_exact_propagator(
    m: float,
    omega: float,
    hbar: float,
    x_i: float,
    x_f: float,
    T: float,
    time_kind: str = "euclidean",
):
    """Closed-form harmonic-oscillator kernel, Euclidean or real time.

    Euclidean: sqrt(m w / 2 pi hbar sinh(wT)) exp(-S_E/hbar), real:
    sqrt(m w / 2 pi i hbar sin(wT)) exp(i S/hbar). Real time raises at
    caustics sin(wT) = 0.
    """
    if T <= 0:
        raise ValueError(f"transition time must be positive, got {T}")
    if m <= 0 or omega <= 0 or hbar <= 0:
        raise ValueError("m, omega, hbar must be positive")
    if time_kind == "euclidean":
        s_e = ho_euclidean_action(m, omega, x_i, x_f, T)
        pref = math.sqrt(m * omega / (2.0 * math.pi * hbar * math.sinh(omega * T)))
        return pref * math.exp(-s_e / hbar)
    if time_kind == "real":
        s = math.sin(omega * T)
        if abs(s) < 1e-12:
            raise NumericalError(f"caustic: sin(omega T) vanishes at T={T}")
        action = m * omega / (2.0 * s) * ((x_i**2 + x_f**2) * math.cos(omega * T) - 2.0 * x_i * x_f)
        pref = np.sqrt(m * omega / (2.0j * math.pi * hbar * s))
        return complex(pref * np.exp(1j * action / hbar))
    raise ValueError(f"time_kind must be 'euclidean' or 'real', got {time_kind!r}")
