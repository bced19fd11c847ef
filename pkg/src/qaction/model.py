"""Core model types: polynomial potentials, action specifications, scale maps.

Everything downstream (spectral solvers, trajectory relaxation, fitters)
consumes these types. All of them are immutable after construction and
hashable, so they can be used as cache keys and shared freely.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

Exponents = tuple[int, ...]


def _canonical_terms(dimension: int, terms) -> tuple[tuple[Exponents, float], ...]:
    """Validate and sort a terms mapping into the canonical internal tuple."""
    if isinstance(terms, Mapping):
        items = terms.items()
    else:
        items = tuple(terms)
    out = {}
    for exp, coef in items:
        exp = tuple(int(e) for e in exp)
        if len(exp) != dimension:
            raise ValueError(
                f"exponent {exp} has arity {len(exp)}, potential dimension is {dimension}"
            )
        if any(e < 0 for e in exp):
            raise ValueError(f"exponent {exp} has a negative entry")
        coef = float(coef)
        if not math.isfinite(coef):
            raise ValueError(f"coefficient for {exp} is not finite")
        if exp in out:
            raise ValueError(f"duplicate exponent {exp}")
        if coef != 0.0:
            out[exp] = coef
    return tuple(sorted(out.items()))


@dataclass(frozen=True)
class PolynomialPotential:
    """Sparse monomial representation of V(x) or V(x, y).

    ``terms`` maps exponent tuples to coefficients, e.g. ``{(2,): 0.5}`` for
    x^2/2 and ``{(2, 0): 0.5, (0, 2): 0.5, (2, 2): 0.05}`` for a coupled 2-D
    oscillator. With ``confining=True`` construction checks that the leading
    pure power along each axis is even with a strictly positive coefficient.
    """

    dimension: int
    terms: tuple = ()
    confining: bool = False

    def __post_init__(self):
        if self.dimension not in (1, 2):
            raise ValueError(f"dimension must be 1 or 2, got {self.dimension}")
        object.__setattr__(self, "terms", _canonical_terms(self.dimension, self.terms))
        if self.confining and not self.is_confining():
            raise ValueError(
                "potential declared confining but a leading axis coefficient "
                "is missing, odd-degree, or non-positive"
            )

    # -- structure ---------------------------------------------------------

    def as_dict(self) -> dict[Exponents, float]:
        return dict(self.terms)

    def is_confining(self) -> bool:
        """Leading pure power along every axis is even and positive."""
        for axis in range(self.dimension):
            best_deg = -1
            best_coef = 0.0
            for exp, coef in self.terms:
                if exp[axis] > 0 and all(e == 0 for i, e in enumerate(exp) if i != axis):
                    if exp[axis] > best_deg:
                        best_deg = exp[axis]
                        best_coef = coef
            if best_deg < 2 or best_deg % 2 != 0 or best_coef <= 0.0:
                return False
        return True

    def coefficient(self, exp: Exponents) -> float:
        exp = tuple(int(e) for e in exp)
        for e, c in self.terms:
            if e == exp:
                return c
        return 0.0

    def with_terms(self, updates: Mapping[Exponents, float], confining=None) -> "PolynomialPotential":
        """New potential with some coefficients replaced (zero removes a term)."""
        d = self.as_dict()
        for exp, coef in updates.items():
            d[tuple(int(e) for e in exp)] = float(coef)
        if confining is None:
            confining = self.confining
        return PolynomialPotential(self.dimension, d, confining=confining)

    # -- evaluation --------------------------------------------------------

    def __call__(self, point) -> float:
        pt = np.atleast_1d(np.asarray(point, dtype=float))
        if pt.shape != (self.dimension,):
            raise ValueError(f"point has shape {pt.shape}, expected ({self.dimension},)")
        total = 0.0
        for exp, coef in self.terms:
            term = coef
            for x, e in zip(pt, exp):
                term *= x**e
            total += term
        return total

    def evaluate_points(self, points: np.ndarray) -> np.ndarray:
        """Evaluate on an array of shape (..., dimension)."""
        pts = np.asarray(points, dtype=float)
        if pts.shape[-1] != self.dimension:
            raise ValueError(f"points trailing axis {pts.shape[-1]} != dimension {self.dimension}")
        out = np.zeros(pts.shape[:-1])
        for exp, coef in self.terms:
            term = np.full(pts.shape[:-1], coef)
            for axis, e in enumerate(exp):
                if e:
                    term = term * pts[..., axis] ** e
            out += term
        return out

    def evaluate_on_axes(self, axes: Sequence[np.ndarray]) -> np.ndarray:
        """Evaluate on the tensor grid spanned by per-axis coordinate arrays."""
        if len(axes) != self.dimension:
            raise ValueError("one coordinate array per dimension required")
        shape = tuple(len(a) for a in axes)
        out = np.zeros(shape)
        for exp, coef in self.terms:
            term = np.asarray(coef)
            for axis, e in enumerate(exp):
                vec = np.asarray(axes[axis], dtype=float) ** e
                term = np.multiply.outer(term, vec) if term.ndim else term * vec
            # term now has shape of the axes processed; broadcast missing axes
            while term.ndim < len(shape):
                term = term[..., None]
            out += term
        return out

    def derivative(self, axis: int) -> "PolynomialPotential":
        if not 0 <= axis < self.dimension:
            raise ValueError(f"axis {axis} out of range for dimension {self.dimension}")
        d = {}
        for exp, coef in self.terms:
            e = exp[axis]
            if e == 0:
                continue
            new = list(exp)
            new[axis] = e - 1
            key = tuple(new)
            d[key] = d.get(key, 0.0) + coef * e
        return PolynomialPotential(self.dimension, d, confining=False)

    def gradient(self, point) -> np.ndarray:
        return np.array([self.derivative(a)(point) for a in range(self.dimension)])

    def gradient_points(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        out = np.empty_like(pts)
        for a in range(self.dimension):
            out[..., a] = self.derivative(a).evaluate_points(pts)
        return out

    def hessian_points(self, points: np.ndarray) -> np.ndarray:
        """Hessian at each point, shape (..., dimension, dimension)."""
        pts = np.asarray(points, dtype=float)
        n = self.dimension
        out = np.empty(pts.shape[:-1] + (n, n))
        for a in range(n):
            da = self.derivative(a)
            for b in range(a, n):
                val = da.derivative(b).evaluate_points(pts)
                out[..., a, b] = val
                out[..., b, a] = val
        return out

    def scaled(self, alpha: float) -> "PolynomialPotential":
        """All coefficients multiplied by alpha (alpha > 0 preserves confinement)."""
        d = {exp: alpha * coef for exp, coef in self.terms}
        return PolynomialPotential(self.dimension, d, confining=self.confining and alpha > 0)


def evaluate_potential(potential: PolynomialPotential, point) -> float:
    """Value of the potential at a single point."""
    return potential(point)


@dataclass(frozen=True)
class ActionSpec:
    """Mass, potential and hbar defining a (classical or trial) action."""

    mass: float
    potential: PolynomialPotential
    hbar: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.mass) and self.mass > 0):
            raise ValueError(f"mass must be positive and finite, got {self.mass}")
        if not (math.isfinite(self.hbar) and self.hbar > 0):
            raise ValueError(f"hbar must be positive and finite, got {self.hbar}")

    @property
    def dimension(self) -> int:
        return self.potential.dimension

    def to_json_dict(self) -> dict:
        return {
            "mass": self.mass,
            "hbar": self.hbar,
            "potential": {
                "dim": self.potential.dimension,
                "terms": [
                    {"exp": list(exp), "coef": coef} for exp, coef in self.potential.terms
                ],
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict())

    @classmethod
    def from_json_dict(cls, data: Mapping, confining: bool = False) -> "ActionSpec":
        pot = data["potential"]
        terms = {tuple(t["exp"]): t["coef"] for t in pot["terms"]}
        return cls(
            mass=float(data["mass"]),
            potential=PolynomialPotential(int(pot["dim"]), terms, confining=confining),
            hbar=float(data.get("hbar", 1.0)),
        )

    @classmethod
    def from_json(cls, text: str, confining: bool = False) -> "ActionSpec":
        return cls.from_json_dict(json.loads(text), confining=confining)


@dataclass(frozen=True)
class ScaleTransform:
    """m -> m/alpha, V -> alpha*V, T -> T/alpha; transition amplitudes are invariant."""

    alpha: float

    def __post_init__(self):
        if not (math.isfinite(self.alpha) and self.alpha > 0):
            raise ValueError(f"alpha must be positive and finite, got {self.alpha}")

    def inverse(self) -> "ScaleTransform":
        return ScaleTransform(1.0 / self.alpha)


def apply_scale_transform(action: ActionSpec, T: float, transform: ScaleTransform):
    """Return the transformed (ActionSpec, T) pair."""
    a = transform.alpha
    scaled = ActionSpec(
        mass=action.mass / a,
        potential=action.potential.scaled(a),
        hbar=action.hbar,
    )
    return scaled, T / a
