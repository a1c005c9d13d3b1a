import math

import numpy as np
import pytest

from dromkit import conesolve
from dromkit.conesolve import SolverStatus
from dromkit.drom import (
    DromOptions,
    DromProblem,
    LmiYBlock,
    PolyhedralYBlock,
    ReportStatus,
    SecondOrderYBlock,
    Tightness,
    assemble_order_k,
    build_cone_y,
    certify,
    expand_equalities,
    minmax_to_drom,
    recover_primal,
    run,
)
from dromkit.momentkit import SemiAlgSet, Tms, dirac_moments, univariate_interval_constraints
from dromkit.polycore import DegreeError, Poly, basis


def interval_support(a1, a2):
    return SemiAlgSet(
        generators=(Poly(1, {(1,): a1 + a2, (2,): -1.0, (0,): -a1 * a2}),)
    )


def univariate_band_problem():
    """Interval support with monotone-band moment set; certifies at the initial order."""
    n = 4
    f = Poly.from_terms(
        n,
        [((1, 0, 0, 0), -1.0), ((0, 1, 0, 0), -2.0), ((0, 0, 1, 0), -1.0), ((0, 0, 0, 1), 2.0)],
    )
    cons = tuple(Poly.variable(n, i) for i in range(n))
    ones = Poly.constant(n, 1.0)
    for i in range(n):
        ones = ones - Poly.variable(n, i)
    cons = cons + (ones,)
    A = np.array(
        [[0, 0, 0, 0], [0, -1, -1, 0], [2, -1, 0, 1], [2, 1, 0, 1], [0, 0, 0, 1], [-1, 0, 0, 1]],
        dtype=float,
    )
    b = np.array([0, 2, -1, 1, -1, -2], dtype=float)
    T = np.zeros((7, 6))
    u = np.zeros(7)
    T[0, 0] = 1.0
    u[0] = -1.0
    for i in range(5):
        T[1 + i, i] = -1.0
        T[1 + i, i + 1] = 1.0
    T[6, 5] = -1.0
    u[6] = 2.0
    return DromProblem(
        n=n, p=1, d=5, f=f, constraints=cons,
        support=interval_support(0.0, 3.0), A=A, b=b,
        y_blocks=(PolyhedralYBlock(T=T, u=u),),
    )


def pinned_adversary_problem():
    """Moment set pinned to one Dirac: the robust constraint is a single inequality."""
    n, p, d = 1, 1, 2
    f = Poly.variable(1, 0)
    cons = (Poly.variable(1, 0), Poly(1, {(0,): 1.0, (1,): -1.0}))  # 0 <= x <= 1
    A = np.array([[1.0], [0.0], [0.0]])
    b = np.array([-0.5, 0.0, 0.0])
    m = dirac_moments(1.0, d).values
    T = np.vstack([np.eye(3), -np.eye(3)])
    u = np.concatenate([-m, m])  # y = s * m(u0)
    return DromProblem(
        n=n, p=p, d=d, f=f, constraints=cons,
        support=interval_support(0.0, 2.0), A=A, b=b,
        y_blocks=(PolyhedralYBlock(T=T, u=u),),
    )


# ---------------------------------------------------------------------------
# moment-set blocks
# ---------------------------------------------------------------------------


def test_build_cone_y_band_block_shape():
    prob = univariate_band_problem()
    sys = build_cone_y(prob.y_blocks, 6)
    blk = sys.blocks[0]
    assert blk.T.shape == (7, 6)
    assert sys.uses_s


def test_build_cone_y_orthant_needs_no_scalar():
    blk = PolyhedralYBlock(T=np.eye(4), u=np.zeros(4))
    sys = build_cone_y((blk,), 4)
    assert not sys.uses_s


def test_build_cone_y_dimension_guard():
    blk = PolyhedralYBlock(T=np.eye(3), u=np.zeros(3))
    with pytest.raises(ValueError):
        build_cone_y((blk,), 4)


def test_lmi_block_requires_bounded_flag():
    mats = np.zeros((3, 2, 2))
    with pytest.raises(ValueError):
        LmiYBlock(coeff_mats=mats, B=np.eye(2), bounded=False)


def test_homogenized_polyhedral_rejects_offset():
    with pytest.raises(ValueError):
        PolyhedralYBlock(T=np.eye(2), u=np.ones(2), homogenized=True)


def test_second_order_block_sphere_closure():
    # closure of a unit-norm shell: ||y|| <= sqrt(37) y_00
    L = 15
    rows = np.zeros((1 + L, L))
    rows[0, 0] = math.sqrt(37.0)
    rows[1:, :] = np.eye(L)
    blk = SecondOrderYBlock(rows=rows, offset=np.zeros(1 + L))
    sys = build_cone_y((blk,), L)
    assert not sys.uses_s


# ---------------------------------------------------------------------------
# problem model
# ---------------------------------------------------------------------------


def test_bilinear_terms_round_trip():
    prob = univariate_band_problem()
    terms = prob.bilinear_terms()
    rebuilt = DromProblem.from_bilinear_terms(
        n=prob.n, p=prob.p, d=prob.d, terms=terms, f=prob.f,
        constraints=prob.constraints, support=prob.support, y_blocks=prob.y_blocks,
    )
    assert np.array_equal(rebuilt.A, prob.A)
    assert np.array_equal(rebuilt.b, prob.b)


def test_bilinear_terms_reject_nonlinear_x():
    with pytest.raises(ValueError):
        DromProblem.from_bilinear_terms(
            n=2, p=1, d=1, terms=[((2, 0), (0,), 1.0)], f=Poly.variable(2, 0),
            support=interval_support(0.0, 1.0),
        )


def test_h_bivariate_expansion_matches():
    prob = univariate_band_problem()
    h = prob.h_bivariate()
    rng = np.random.default_rng(0)
    for _ in range(20):
        x = rng.normal(size=4)
        xi = rng.normal(size=1)
        direct = float(prob.h_coefficients(x) @ dirac_moments(xi, prob.d).values)
        assert h(np.concatenate([x, xi])) == pytest.approx(direct, rel=1e-12, abs=1e-12)


def test_expand_equalities_pairs():
    h = Poly.variable(2, 0)
    out = expand_equalities((Poly.variable(2, 1),), (h,))
    assert len(out) == 3
    assert out[1] == h and out[2] == -h


# ---------------------------------------------------------------------------
# min-max reduction
# ---------------------------------------------------------------------------


def simple_mass_pinned_y(L):
    e0 = np.zeros(L)
    e0[0] = 1.0
    T = np.vstack([e0, -e0])
    u = np.array([-1.0, 1.0])
    return PolyhedralYBlock(T=T, u=u)


def test_minmax_reduction_dimensions():
    # F(x, xi) = x1 * xi, one decision, univariate randomness
    F = Poly(2, {(1, 1): 1.0})
    prob = minmax_to_drom(
        F, 1, 1, interval_support(0.0, 1.0), (simple_mass_pinned_y(2),),
        constraints=(Poly.variable(1, 0),),
    )
    assert prob.n == 2 and prob.d == 1
    assert prob.A[0, 0] == 1.0  # epigraph variable hits the constant monomial
    assert prob.A[1, 1] == -1.0


def test_minmax_rejects_nonaffine():
    F = Poly(2, {(2, 1): 1.0})
    with pytest.raises(ValueError):
        minmax_to_drom(F, 1, 1, interval_support(0.0, 1.0), ())


def test_minmax_zero_objective_solves_to_zero():
    # F = 0: optimal epigraph value is 0
    F = Poly.zero(2)
    prob = minmax_to_drom(
        F, 1, 1, interval_support(0.0, 1.0), (simple_mass_pinned_y(2),),
        constraints=(Poly.variable(1, 0), Poly(1, {(0,): 1.0, (1,): -1.0})),
        d=1,
    )
    rep = run(prob)
    assert rep.status == ReportStatus.SOLVED
    assert rep.optimal_value == pytest.approx(0.0, abs=1e-6)
    assert rep.x[0] == pytest.approx(0.0, abs=1e-6)


def test_minmax_deterministic_payoff():
    # F depends only on x: worst case reduces to x0 >= F(x) at unit mass
    F = Poly(2, {(1, 0): 1.0})  # F = x1
    prob = minmax_to_drom(
        F, 1, 1, interval_support(0.0, 1.0), (simple_mass_pinned_y(2),),
        constraints=(Poly(1, {(1,): 1.0, (0,): -0.25}), Poly(1, {(0,): 1.0, (1,): -1.0})),
        d=1,
    )
    rep = run(prob)
    assert rep.status == ReportStatus.SOLVED
    # min x0 s.t. x0 >= x1, 0.25 <= x1 <= 1
    assert rep.optimal_value == pytest.approx(0.25, abs=1e-5)


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------


def test_assembly_dimensions_for_band_problem():
    prob = univariate_band_problem()
    program, maps = assemble_order_k(prob, 3)
    assert maps.z_cols.stop - maps.z_cols.start == 7
    sides = [mp.side for mp in maps.moment_maps]
    assert sides == [4, 3]
    assert maps.gram_sides == [5, 1, 1, 1, 1, 1]
    assert program.cones[0].kind == "free" and program.cones[0].size == 8


def test_assembly_moment_maps_match_interval_conditions():
    # trivial objective over an interval: assembled maps equal the
    # dedicated interval conditions
    n, p, d = 1, 1, 2
    prob = DromProblem(
        n=n, p=p, d=d, f=Poly.variable(1, 0),
        constraints=(Poly.variable(1, 0),),
        support=SemiAlgSet(generators=(Poly(1, {(1,): 1.0, (2,): -1.0}),)),
        A=np.array([[1.0], [0.0], [0.0]]),
        b=np.array([0.0, 0.0, 0.0]),
        y_blocks=(simple_mass_pinned_y(3),),
    )
    for k in (1, 2, 3):
        _, maps = assemble_order_k(prob, k)
        reference = univariate_interval_constraints(0.0, 1.0, k)
        assert len(maps.moment_maps) == len(reference)
        for got, want in zip(maps.moment_maps, reference):
            assert got.side == want.side
            assert got.entries == want.entries


def test_assembly_order_guard():
    prob = univariate_band_problem()
    with pytest.raises(DegreeError):
        assemble_order_k(prob, 2)


# ---------------------------------------------------------------------------
# recovery and certification
# ---------------------------------------------------------------------------


def test_recover_primal_from_point_decision_set():
    # X = {0.37}: the recovered decision matches at every order
    xhat = 0.37
    for k in (1, 2):
        prob = DromProblem(
            n=1, p=1, d=2, f=Poly.variable(1, 0),
            constraints=(
                Poly(1, {(1,): 1.0, (0,): -xhat}),
                Poly(1, {(1,): -1.0, (0,): xhat}),
            ),
            support=interval_support(0.0, 1.0),
            A=np.array([[1.0], [0.0], [0.0]]),
            b=np.array([0.0, 0.0, 0.0]),
            y_blocks=(simple_mass_pinned_y(3),),
        )
        program, maps = assemble_order_k(prob, k)
        sol = conesolve.solve(program)
        assert sol.status == SolverStatus.OPTIMAL
        xstar, w = recover_primal(sol, maps, 1)
        assert xstar[0] == pytest.approx(xhat, abs=1e-6)
        assert w.values[0] == pytest.approx(1.0, abs=1e-9)


def test_pinned_adversary_all_residuals_tiny():
    rep = run(pinned_adversary_problem())
    assert rep.status == ReportStatus.SOLVED
    assert rep.optimal_value == pytest.approx(0.5, abs=1e-7)
    assert rep.x[0] == pytest.approx(0.5, abs=1e-7)
    c = rep.certificates
    assert c.feasibility_residual <= 1e-8
    assert c.objective_match <= 1e-8
    assert c.complementarity <= 1e-8
    assert c.duality_gap <= 1e-8
    mu = rep.worst_case_measure
    assert len(mu) == 1
    assert mu.atoms[0][0] == pytest.approx(1.0, abs=1e-6)


def test_certify_is_pure_evaluation():
    prob = pinned_adversary_problem()
    x = np.array([0.5])
    w = Tms(1, 2, [1.0, 0.5, 0.25])
    y = dirac_moments(1.0, 2)
    c1 = certify(prob, x, w, 0.5, y, duality_gap=0.0)
    c2 = certify(prob, x, w, 0.5, y, duality_gap=0.0)
    assert c1 == c2
    assert c1.feasibility_residual == 0.0
    assert c1.complementarity == pytest.approx(0.0, abs=1e-15)


# ---------------------------------------------------------------------------
# driver behaviour
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def band_report():
    return run(univariate_band_problem())


def test_driver_certifies_band_problem(band_report):
    rep = band_report
    assert rep.status == ReportStatus.SOLVED
    assert rep.tightness == Tightness.CERTIFIED
    assert rep.order_k == 3
    assert rep.optimal_value == pytest.approx(-0.0326, abs=5e-3)


def test_driver_report_is_complete(band_report):
    rep = band_report
    assert rep.y.degree == 5 and rep.z.degree == 6
    assert rep.w.degree == 2
    assert rep.worst_case_measure is not None
    assert rep.certificates.moment_match <= 1e-4
    assert rep.solver_iterations > 0
    assert rep.wall_time > 0


def test_relaxation_order_monotonicity():
    prob = univariate_band_problem()
    values = []
    for k in (3, 4, 5):
        program, _ = assemble_order_k(prob, k)
        sol = conesolve.solve(program)
        assert sol.status == SolverStatus.OPTIMAL
        values.append(-sol.primal_objective)
    # order-3 relaxation value doubles as a solver-level regression anchor
    assert values[0] == pytest.approx(-0.0326, abs=5e-3)
    assert values[1] <= values[0] + 1e-6
    assert values[2] <= values[1] + 1e-6


def test_positive_scaling_invariance():
    lam = 7.3
    base = univariate_band_problem()
    scaled = DromProblem(
        n=base.n, p=base.p, d=base.d, f=base.f, constraints=base.constraints,
        support=base.support, A=lam * base.A, b=lam * base.b, y_blocks=base.y_blocks,
    )
    r1 = run(base)
    r2 = run(scaled)
    assert r1.status == ReportStatus.SOLVED and r2.status == ReportStatus.SOLVED
    assert abs(r1.optimal_value - r2.optimal_value) <= 1e-5
    assert np.allclose(r1.x, r2.x, atol=1e-4)


def test_tightness_soundness_at_certified_solutions(band_report):
    rep = band_report
    c = rep.certificates
    assert c.cone_membership_residual <= 1e-5
    assert c.worst_case_expectation >= -1e-5
    assert c.complementarity_scaled <= 1e-5
    mu = rep.worst_case_measure
    assert mu.support_violation(univariate_band_problem().support) <= 1e-6


def test_driver_reports_unbounded_or_order_limit():
    # robustly infeasible: h(x, xi) = -1 can never have nonnegative expectation,
    # so every order's relaxation is unbounded above
    prob = DromProblem(
        n=1, p=1, d=2, f=Poly.variable(1, 0),
        constraints=(Poly.variable(1, 0), Poly(1, {(0,): 1.0, (1,): -1.0})),
        support=interval_support(0.0, 1.0),
        A=np.zeros((3, 1)),
        b=np.array([-1.0, 0.0, 0.0]),
        y_blocks=(simple_mass_pinned_y(3),),
    )
    rep = run(prob, DromOptions(max_order=2))
    assert rep.status == ReportStatus.UNBOUNDED_OR_ORDER_LIMIT
    assert rep.attempts and "unbounded" in rep.attempts[0]["event"]


def test_univariate_initial_order_exactness_randomized():
    # interval support: solvable instances certify at the very first order
    rng = np.random.default_rng(314)
    solved = 0
    tried = 0
    while solved < 20 and tried < 60:
        tried += 1
        n, p = 2, 1
        a1 = float(rng.uniform(-1.0, 0.5))
        a2 = a1 + float(rng.uniform(0.5, 2.0))
        d = int(rng.integers(2, 5))
        L = len(basis(1, d))
        A = rng.normal(size=(L, n))
        xhat = np.array([0.3, 0.3])
        eps = 0.2 * rng.normal(size=L - 1)
        b = -A @ xhat
        b[0] += 1.0 + (max(abs(a1), abs(a2)) + 1.0) ** d * np.sum(np.abs(eps))
        b[1:] += eps
        mids = dirac_moments(0.5 * (a1 + a2), d).values
        spread = np.array(
            [max(abs(a1), abs(a2), 1.0) ** i for i in range(L)]
        )
        T = np.vstack([np.eye(L), -np.eye(L)])
        u = np.concatenate([-(mids - spread), mids + spread])
        cons = (
            Poly.variable(n, 0),
            Poly.variable(n, 1),
            Poly(n, {(0, 0): 1.0, (1, 0): -1.0, (0, 1): -1.0}),
        )
        prob = DromProblem(
            n=n, p=p, d=d, f=Poly(n, {(1, 0): 1.0, (0, 1): -1.0}),
            constraints=cons, support=interval_support(a1, a2),
            A=A, b=b, y_blocks=(PolyhedralYBlock(T=T, u=u),),
        )
        rep = run(prob)
        if rep.status in (
            ReportStatus.INFEASIBLE,
            ReportStatus.UNBOUNDED_OR_ORDER_LIMIT,
            ReportStatus.SOLVER_FAILURE,
        ):
            continue
        assert rep.status == ReportStatus.SOLVED, rep.detail
        assert rep.order_k == math.ceil(d / 2)
        solved += 1
    assert solved >= 20
