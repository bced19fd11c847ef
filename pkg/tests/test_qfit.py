import math

import numpy as np
import pytest

from qaction import (
    ActionSpec,
    FitProblem,
    Grid,
    PolynomialPotential,
    ScaleTransform,
    apply_scale_transform,
    euclidean_propagate,
    fit_flow,
    fit_quantum_action,
    fit_residual,
    flow_rows,
    quantum_action_log_norm_sq,
    tensor_pairs,
)
from qaction.qfit import FLOW_CSV_HEADER


@pytest.fixture(scope="module")
def ho_spec():
    return ActionSpec(mass=1.0, potential=PolynomialPotential(1, {(2,): 0.5}), hbar=1.0)


@pytest.fixture(scope="module")
def ho_table_t1(ho_spec):
    grid = Grid((8.0,), (3201,))
    pts = [(x,) for x in (-1.0, -0.5, 0.0, 0.5, 1.0)]
    return euclidean_propagate(ho_spec, grid, 1.0, tensor_pairs(pts, pts))


def test_true_action_residual_below_1e5(ho_spec, ho_table_t1):
    """With the exact trial action and the closed-form offset the log
    residual is pure discretization noise."""
    prob = FitProblem(classical=ho_spec, table=ho_table_t1, ansatz=((0,), (2,)))
    z = math.sqrt(1.0 / (2.0 * math.pi * math.sinh(1.0)))
    r = fit_residual(ho_spec, prob, log_z=math.log(z), n_nodes=1025)
    assert r < 1e-5


def test_wrong_stiffness_residual_much_larger(ho_spec, ho_table_t1):
    prob = FitProblem(classical=ho_spec, table=ho_table_t1, ansatz=((0,), (2,)))
    z = math.sqrt(1.0 / (2.0 * math.pi * math.sinh(1.0)))
    r_true = fit_residual(ho_spec, prob, log_z=math.log(z), n_nodes=1025)
    doubled = ActionSpec(
        mass=1.0, potential=PolynomialPotential(1, {(2,): 1.0}), hbar=1.0
    )
    r_bad = fit_residual(doubled, prob, n_nodes=1025)
    assert r_bad > 1e2 * r_true


def test_single_pair_residual_vanishes(ho_spec, ho_table_t1):
    prob = FitProblem(
        classical=ho_spec,
        table=ho_table_t1,
        ansatz=((0,), (2,)),
        pairs=[((0.0,), (0.5,))],
    )
    assert fit_residual(ho_spec, prob) < 1e-13


def test_free_offset_is_optimal(ho_spec, ho_table_t1):
    prob = FitProblem(classical=ho_spec, table=ho_table_t1, ansatz=((0,), (2,)))
    r_free = fit_residual(ho_spec, prob, n_nodes=513)
    z0 = math.log(math.sqrt(1.0 / (2.0 * math.pi * math.sinh(1.0))))
    scan = [
        fit_residual(ho_spec, prob, log_z=z0 + d, n_nodes=513)
        for d in np.linspace(-0.01, 0.01, 11)
    ]
    assert r_free <= min(scan) + 1e-12


def test_log_norm_gauge_ho(ho_spec):
    # Phi = x^2/2 so the integral is sqrt(pi)
    val = quantum_action_log_norm_sq(ho_spec, Grid((16.0,), (3201,)))
    assert abs(val - 0.5 * math.log(math.pi)) < 1e-8


@pytest.fixture(scope="module")
def ho_tensor_table_t2(ho_spec):
    """Pairs with several distinct start points; single-start ladders leave
    (mass, stiffness) degenerate along a constant-amplitude manifold."""
    grid = Grid((8.0,), (1601,))
    pts = [(x,) for x in (-1.0, -0.5, 0.0, 0.5, 1.0)]
    return euclidean_propagate(ho_spec, grid, 2.0, tensor_pairs(pts, pts))


def test_ho_fit_recovers_parameters(ho_spec, ho_tensor_table_t2):
    prob = FitProblem(
        classical=ho_spec, table=ho_tensor_table_t2, ansatz=((0,), (2,)), fit_mass=True
    )
    res = fit_quantum_action(prob, n_nodes=(257, 513), restarts=1)
    assert res.converged
    assert abs(res.quantum.mass - 1.0) < 1e-3
    assert abs(res.quantum.potential.coefficient((2,)) - 0.5) < 1e-3
    assert res.rms_residual < 1e-5
    assert res.failed_pairs == ()


def test_fit_starts_from_perturbed_initial(ho_spec, ho_tensor_table_t2):
    prob = FitProblem(
        classical=ho_spec, table=ho_tensor_table_t2, ansatz=((0,), (2,)), fit_mass=True
    )
    start = ActionSpec(
        mass=1.3, potential=PolynomialPotential(1, {(2,): 0.4}), hbar=1.0
    )
    res = fit_quantum_action(prob, initial=start, n_nodes=(257, 513), restarts=1)
    assert abs(res.quantum.mass - 1.0) < 1e-3
    assert abs(res.quantum.potential.coefficient((2,)) - 0.5) < 1e-3


def test_flow_approaches_ground_energy_gauge(ho_spec):
    grid = Grid((8.0,), (1601,))
    ladder = [((0.0,), (0.25 * k,)) for k in range(9)]

    def make_problem(T):
        table = euclidean_propagate(ho_spec, grid, T, ladder)
        return FitProblem(
            classical=ho_spec, table=table, ansatz=((0,), (2,)), fit_mass=False
        )

    results = fit_flow(make_problem, [2.0, 4.0, 8.0], n_nodes=257, restarts=1)
    v0_err = [abs(r.quantum.potential.coefficient((0,)) - 0.5) for r in results]
    assert v0_err[0] > v0_err[1] > v0_err[2]
    assert v0_err[2] < 1e-3
    rows = flow_rows(results)
    assert len(rows) == 3
    assert len(rows[0]) == len(FLOW_CSV_HEADER)
    assert rows[0][0] == 2.0
    assert rows[0][4] == 0.0  # no v22 monomial in a 1-D ansatz


def test_flow_duplicate_time_is_stable(ho_spec):
    grid = Grid((8.0,), (1601,))
    ladder = [((0.0,), (0.25 * k,)) for k in range(9)]

    def make_problem(T):
        table = euclidean_propagate(ho_spec, grid, T, ladder)
        return FitProblem(
            classical=ho_spec, table=table, ansatz=((0,), (2,)), fit_mass=False
        )

    a, b = fit_flow(make_problem, [2.0, 2.0], n_nodes=257, restarts=1)
    assert abs(a.quantum.mass - b.quantum.mass) < 1e-12
    assert (
        abs(a.quantum.potential.coefficient((2,)) - b.quantum.potential.coefficient((2,)))
        < 1e-12
    )


def test_flow_validation(ho_spec, ho_table_t1):
    def make_problem(T):
        return FitProblem(classical=ho_spec, table=ho_table_t1, ansatz=((0,), (2,)))

    with pytest.raises(ValueError):
        fit_flow(make_problem, [1.0])
    with pytest.raises(ValueError):
        fit_flow(make_problem, [2.0, 1.0])
    with pytest.raises(ValueError):
        # make_problem returns tables at T=1 regardless of the request
        fit_flow(make_problem, [1.0, 2.0], n_nodes=257)


def test_symmetric_pairs_keep_antisymmetric_terms_silent():
    """Pair data closed under x<->y swap and per-axis parity cannot source
    swap-odd or parity-odd monomials; their fitted coefficients sit at the
    optimizer noise floor."""
    pot = PolynomialPotential(2, {(2, 0): 0.5, (0, 2): 0.5, (2, 2): 0.05})
    act = ActionSpec(mass=1.0, potential=pot, hbar=1.0)
    grid = Grid((3.0, 3.0), (61, 61))

    def orbit(p):
        x, y = p
        pts = set()
        for a in (x, -x):
            for b in (y, -y):
                pts.add((a, b))
                pts.add((b, a))
        return sorted(pts)

    finals = sorted(set(orbit((0.2, 0.0)) + orbit((0.3, 0.1)) + orbit((0.5, 0.5))))
    pairs = [((0.0, 0.0), f) for f in finals]
    table = euclidean_propagate(act, grid, 2.0, pairs)
    prob = FitProblem(
        classical=act,
        table=table,
        ansatz=(((0, 0),), ((2, 0), (0, 2)), ((2, 2),), ((1, 1),), ((3, 1), (1, 3))),
        fit_mass=True,
    )
    res = fit_quantum_action(prob, n_nodes=129, restarts=1, polish=False)
    bound = max(10.0 * res.rms_residual, 1e-8)
    assert abs(res.quantum.potential.coefficient((1, 1))) < bound
    assert abs(res.quantum.potential.coefficient((3, 1))) < bound
    assert abs(res.quantum.potential.coefficient((1, 3))) < bound
    # tied groups stay tied exactly
    assert res.quantum.potential.coefficient((2, 0)) == res.quantum.potential.coefficient((0, 2))


def test_scale_covariance_of_fit(ho_spec, ho_tensor_table_t2):
    """Fitting the alpha-transformed problem returns the transformed optimum."""
    grid = Grid((8.0,), (1601,))
    pts = [(x,) for x in (-1.0, -0.5, 0.0, 0.5, 1.0)]
    prob = FitProblem(
        classical=ho_spec, table=ho_tensor_table_t2, ansatz=((0,), (2,)), fit_mass=True
    )
    base = fit_quantum_action(prob, n_nodes=(257, 513), restarts=1)

    alpha = 2.0
    moved, t_new = apply_scale_transform(ho_spec, 2.0, ScaleTransform(alpha))
    table_s = euclidean_propagate(moved, grid, t_new, tensor_pairs(pts, pts))
    prob_s = FitProblem(classical=moved, table=table_s, ansatz=((0,), (2,)), fit_mass=True)
    scaled = fit_quantum_action(prob_s, n_nodes=(257, 513), restarts=1)

    assert abs(scaled.quantum.mass - base.quantum.mass / alpha) < 1e-6
    assert (
        abs(
            scaled.quantum.potential.coefficient((2,))
            - alpha * base.quantum.potential.coefficient((2,))
        )
        < 1e-6
    )


def test_problem_validation(ho_spec, ho_table_t1):
    with pytest.raises(ValueError):
        FitProblem(
            classical=ho_spec,
            table=ho_table_t1,
            ansatz=((0,), (2,)),
            pairs=[((0.0,), (3.3,))],  # not in the table
        )
    with pytest.raises(ValueError):
        FitProblem(classical=ho_spec, table=ho_table_t1, ansatz=(((0,), (2,)),))
    with pytest.raises(ValueError):
        FitProblem(classical=ho_spec, table=ho_table_t1, ansatz=((2,), (2,)))
    with pytest.raises(ValueError):
        FitProblem(
            classical=ho_spec, table=ho_table_t1, ansatz=((-2,),)
        )


def test_too_few_pairs_rejected(ho_spec, ho_table_t1):
    prob = FitProblem(
        classical=ho_spec,
        table=ho_table_t1,
        ansatz=((0,), (2,), (4,)),
        pairs=[((0.0,), (0.5,)), ((0.0,), (1.0,)), ((0.5,), (1.0,))],
        fit_mass=True,
    )
    with pytest.raises(ValueError):
        fit_quantum_action(prob)


def test_n_nodes_pair_validation(ho_spec, ho_table_t1):
    prob = FitProblem(classical=ho_spec, table=ho_table_t1, ansatz=((0,), (2,)))
    with pytest.raises(ValueError):
        fit_residual(ho_spec, prob, n_nodes=(257, 511))
    with pytest.raises(ValueError):
        fit_residual(ho_spec, prob, n_nodes=(257, 513, 1025))


def test_dimension_mismatch_rejected(ho_table_t1, coupled_2d):
    with pytest.raises(ValueError):
        FitProblem(classical=coupled_2d, table=ho_table_t1, ansatz=(((0, 0),),))
