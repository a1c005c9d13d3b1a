"""Distributionally robust moment optimization: model, assembly and driver.

A problem instance fixes a polynomial objective f over a constrained decision
set X, a random-polynomial constraint h(x, xi) = (Ax + b)'[xi]_d whose
expectation must stay nonnegative under every measure in the ambiguity set,
a semialgebraic support S for the random variable, and conic blocks carrying
the closure of the moment set's conic hull.

The driver solves a hierarchy of conic relaxations indexed by the order k:
variables (gamma, z) with the membership f - y'Ax - gamma in the truncated
quadratic module of X, z in the order-k moment cone of S, y = z|_d, and y in
the conic hull closure of the moment set; the objective maximizes
gamma - <b, y>.  Tightness of an order is certified by completing y to a
longer flat moment sequence and extracting the worst-case atomic measure.
"""

from __future__ import annotations

import enum
import math
import time
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from . import conesolve
from .conesolve import ProgramBuilder, SolverOptions, SolverStatus
from .momentkit import (
    AtmpStatus,
    AtomicMeasure,
    ExtractionError,
    LinearMatrixMap,
    SemiAlgSet,
    Tms,
    atmp_solve,
    check_flat,
    compile_cone_Sg,
    extract_atoms,
    moment_mismatch,
    moments,
)
from .polycore import (
    DegreeError,
    Poly,
    VariableCountError,
    basis,
    basis_size,
    riesz_pair,
)
from .soskit import AffinePoly, QuadraticModuleSpec, compile_qm_membership


# ---------------------------------------------------------------------------
# moment-set blocks and their conic-hull closures
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PolyhedralYBlock:
    """Moment set piece {y : T y + u >= 0}; its closure is {T y + s u >= 0, s >= 0}.

    With ``homogenized`` the input already describes a cone and u must vanish.
    """

    T: np.ndarray
    u: np.ndarray
    homogenized: bool = False

    def __post_init__(self):
        object.__setattr__(self, "T", np.atleast_2d(np.asarray(self.T, dtype=float)))
        object.__setattr__(self, "u", np.atleast_1d(np.asarray(self.u, dtype=float)))
        if self.T.shape[0] != self.u.shape[0]:
            raise ValueError("polyhedral block row counts disagree")
        if self.homogenized and np.any(self.u != 0.0):
            raise ValueError("homogenized polyhedral blocks must have zero offset")

    @property
    def y_dim(self) -> int:
        return self.T.shape[1]

    def references_s(self) -> bool:
        return bool(np.any(self.u != 0.0))


@dataclass(frozen=True)
class LmiYBlock:
    """Moment set piece {y : sum_a y_a C_a + B >= 0} for a bounded set.

    Closure of the conic hull: {A(y) + s B >= 0, s >= 0}.  Unbounded inputs
    are rejected because the conic hull need not be closed.
    """

    coeff_mats: np.ndarray  # shape (y_dim, side, side)
    B: np.ndarray
    bounded: bool = False

    def __post_init__(self):
        object.__setattr__(
            self, "coeff_mats", np.asarray(self.coeff_mats, dtype=float)
        )
        object.__setattr__(self, "B", np.asarray(self.B, dtype=float))
        if self.coeff_mats.ndim != 3 or self.coeff_mats.shape[1] != self.coeff_mats.shape[2]:
            raise ValueError("coeff_mats must be a stack of square matrices")
        if self.B.shape != self.coeff_mats.shape[1:]:
            raise ValueError("constant matrix side mismatch")
        if not self.bounded:
            raise ValueError(
                "lmi moment-set blocks require the declared-bounded flag; "
                "the conic hull of an unbounded set may fail to be closed"
            )

    @property
    def y_dim(self) -> int:
        return self.coeff_mats.shape[0]

    @property
    def side(self) -> int:
        return self.B.shape[0]

    def references_s(self) -> bool:
        return bool(np.any(self.B != 0.0))


@dataclass(frozen=True)
class SecondOrderYBlock:
    """Moment set piece (R y + s r) in the second-order cone (head first)."""

    rows: np.ndarray
    offset: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rows", np.atleast_2d(np.asarray(self.rows, dtype=float)))
        object.__setattr__(self, "offset", np.atleast_1d(np.asarray(self.offset, dtype=float)))
        if self.rows.shape[0] != self.offset.shape[0]:
            raise ValueError("second-order block row counts disagree")
        if self.rows.shape[0] < 2:
            raise ValueError("second-order block needs at least two rows")

    @property
    def y_dim(self) -> int:
        return self.rows.shape[1]

    def references_s(self) -> bool:
        return bool(np.any(self.offset != 0.0))


ConeYBlock = Union[PolyhedralYBlock, LmiYBlock, SecondOrderYBlock]


@dataclass(frozen=True)
class ConeYSystem:
    """Validated moment-set blocks sharing one homogenization scalar."""

    blocks: tuple[ConeYBlock, ...]
    y_dim: int
    uses_s: bool


def build_cone_y(blocks, y_dim: int) -> ConeYSystem:
    """Validate the moment-set blocks against the moment vector dimension."""
    blocks = tuple(blocks)
    for blk in blocks:
        if blk.y_dim != y_dim:
            raise ValueError(
                f"moment-set block expects y of length {blk.y_dim}, problem has {y_dim}"
            )
    uses_s = any(blk.references_s() for blk in blocks)
    return ConeYSystem(blocks=blocks, y_dim=y_dim, uses_s=uses_s)


# ---------------------------------------------------------------------------
# problem model
# ---------------------------------------------------------------------------


@dataclass
class DromProblem:
    """Full instance: decisions, objective, support, random constraint, moment set.

    ``A`` has one row per xi-monomial up to degree d in graded-lex order and one
    column per decision variable; h(x, xi) = (Ax + b)'[xi]_d.
    """

    n: int
    p: int
    d: int
    f: Poly
    constraints: tuple[Poly, ...]
    support: SemiAlgSet
    A: np.ndarray
    b: np.ndarray
    y_blocks: tuple[ConeYBlock, ...] = ()

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        L = basis_size(self.p, self.d)
        if self.A.shape != (L, self.n):
            raise ValueError(f"A must be {L}x{self.n} (graded-lex rows), got {self.A.shape}")
        if self.b.shape != (L,):
            raise ValueError(f"b must have length {L}")
        if self.f.nvars != self.n:
            raise VariableCountError("objective variable count mismatch")
        for c in self.constraints:
            if c.nvars != self.n:
                raise VariableCountError("decision constraint variable count mismatch")
        if self.support.nvars != self.p:
            raise VariableCountError("support variable count mismatch")
        self.y_blocks = tuple(self.y_blocks)
        build_cone_y(self.y_blocks, L)

    @property
    def y_dim(self) -> int:
        return basis_size(self.p, self.d)

    def h_coefficients(self, x) -> np.ndarray:
        """Coefficient vector of h(x, .) in the degree-d xi basis."""
        return self.A @ np.asarray(x, dtype=float) + self.b

    def h_in_xi(self, x) -> Poly:
        coeff = self.h_coefficients(x)
        bx = basis(self.p, self.d)
        return Poly(self.p, {alpha: coeff[i] for i, alpha in enumerate(bx.exponents)})

    def h_bivariate(self) -> Poly:
        """h as a polynomial in (x_1..x_n, xi_1..xi_p)."""
        nv = self.n + self.p
        acc = {}
        bx = basis(self.p, self.d)
        for i, alpha in enumerate(bx.exponents):
            if self.b[i] != 0.0:
                acc[(0,) * self.n + alpha] = self.b[i]
            for j in range(self.n):
                if self.A[i, j] != 0.0:
                    xexp = tuple(1 if t == j else 0 for t in range(self.n))
                    acc[xexp + alpha] = self.A[i, j]
        return Poly(nv, acc)

    @classmethod
    def from_bilinear_terms(
        cls,
        n: int,
        p: int,
        d: int,
        terms,
        f: Poly,
        constraints=(),
        support: SemiAlgSet | None = None,
        y_blocks=(),
    ) -> "DromProblem":
        """Build (A, b) from (x-exponent, xi-exponent, coefficient) triples.

        x-exponents must be all-zero (constant part) or a unit vector: h is
        linear in the decision variable.
        """
        L = basis_size(p, d)
        A = np.zeros((L, n))
        b = np.zeros(L)
        bx = basis(p, d)
        for xexp, xiexp, coeff in terms:
            xexp = tuple(int(e) for e in xexp)
            row = bx.position(tuple(int(e) for e in xiexp))
            if sum(xexp) == 0:
                b[row] += float(coeff)
            elif sum(xexp) == 1:
                A[row, xexp.index(1)] += float(coeff)
            else:
                raise ValueError(
                    f"term with x-exponent {xexp} is not linear in the decision"
                )
        return cls(
            n=n, p=p, d=d, f=f, constraints=tuple(constraints),
            support=support, A=A, b=b, y_blocks=tuple(y_blocks),
        )

    def bilinear_terms(self) -> list[tuple[tuple, tuple, float]]:
        """Inverse of from_bilinear_terms; used for file round-trips."""
        out = []
        bx = basis(self.p, self.d)
        for i, alpha in enumerate(bx.exponents):
            if self.b[i] != 0.0:
                out.append(((0,) * self.n, alpha, float(self.b[i])))
            for j in range(self.n):
                if self.A[i, j] != 0.0:
                    xexp = tuple(1 if t == j else 0 for t in range(self.n))
                    out.append((xexp, alpha, float(self.A[i, j])))
        return out


def expand_equalities(inequalities, equalities) -> tuple[Poly, ...]:
    """Model equality constraints as generator pairs (h, -h)."""
    out = list(inequalities)
    for h in equalities:
        out.append(h)
        out.append(-h)
    return tuple(out)


def minmax_to_drom(
    F: Poly,
    n: int,
    p: int,
    support: SemiAlgSet,
    y_blocks,
    constraints=(),
    equalities=(),
    d: int | None = None,
) -> DromProblem:
    """Reduce min-max over the ambiguity set to the epigraph form.

    ``F`` lives in (x_1..x_n, xi_1..xi_p) and must be affine in x.  The
    reduction adds a decision x_0 (placed first), minimizes x_0 and constrains
    the worst-case expectation of x_0 - F(x, xi); it presumes the moment set
    pins total mass, i.e. every admissible measure is a probability measure.
    """
    if F.nvars != n + p:
        raise VariableCountError(f"F must have {n + p} variables")
    for alpha in F.coeffs:
        if sum(alpha[:n]) > 1:
            raise ValueError("F must be affine in the decision variables")
    if d is None:
        d = max((sum(a[n:]) for a in F.coeffs), default=0)

    n_new = n + 1
    L = basis_size(p, d)
    bx = basis(p, d)
    A = np.zeros((L, n_new))
    b = np.zeros(L)
    A[0, 0] = 1.0  # x_0 multiplies the constant monomial
    for alpha, coeff in F.coeffs.items():
        xpart, xipart = alpha[:n], alpha[n:]
        row = bx.position(xipart)
        if sum(xpart) == 0:
            b[row] -= coeff
        else:
            A[row, 1 + xpart.index(1)] -= coeff

    def lift(poly: Poly) -> Poly:
        return Poly(n_new, {(0,) + a: c for a, c in poly.coeffs.items()})

    cons = expand_equalities(
        [lift(c) for c in constraints], [lift(h) for h in equalities]
    )
    f_new = Poly.variable(n_new, 0)
    return DromProblem(
        n=n_new, p=p, d=d, f=f_new, constraints=cons,
        support=support, A=A, b=b, y_blocks=tuple(y_blocks),
    )


# ---------------------------------------------------------------------------
# order-k assembly
# ---------------------------------------------------------------------------


@dataclass
class IndexMaps:
    """Where each quantity lives in the assembled standard-form program."""

    order_k: int
    d1: int
    y_dim: int
    gamma_col: int
    z_cols: slice
    s_col: int | None
    moment_block_ids: list[int]
    moment_maps: list[LinearMatrixMap]
    gram_block_ids: list[int]
    gram_sides: list[int]
    qm_rows: slice
    qm: QuadraticModuleSpec


def decision_module(problem: DromProblem, overrides: dict[int, int] | None = None):
    """Quadratic module for the decision set at the canonical total degree."""
    degc = max((c.degree for c in problem.constraints), default=0)
    d1 = max(math.ceil(problem.f.degree / 2), math.ceil(degc / 2), 1)
    return QuadraticModuleSpec.build(
        problem.n, tuple(problem.constraints), total_degree=2 * d1, overrides=overrides
    )


def assemble_order_k(
    problem: DromProblem,
    k: int,
    support: SemiAlgSet | None = None,
    multiplier_overrides: dict[int, int] | None = None,
) -> tuple[conesolve.ConicProgram, IndexMaps]:
    """Build the order-k relaxation as a single standard-form conic program.

    Variables: gamma and the degree-2k sequence z (free), the homogenization
    scalar and slacks of the moment-set blocks, PSD blocks instantiating the
    moment-cone maps, and the Gram blocks of the quadratic-module membership.
    The objective minimizes -(gamma - <b, z|_d>).
    """
    support = support or problem.support
    if 2 * k < max(problem.d, support.degree):
        raise DegreeError(
            f"order {k} too low: need 2k >= max(d={problem.d}, deg g={support.degree})"
        )
    p, d = problem.p, problem.d
    Ld = problem.y_dim
    L2k = basis_size(p, 2 * k)
    ysys = build_cone_y(problem.y_blocks, Ld)
    maps = compile_cone_Sg(support, 2 * k)
    qm = decision_module(problem, multiplier_overrides)

    # membership target: f - gamma - sum_alpha z_alpha (A[alpha, :] . x)
    params: dict[int, Poly] = {0: Poly.constant(problem.n, -1.0)}
    for a_idx in range(Ld):
        lin = Poly(
            problem.n,
            {
                tuple(1 if t == j else 0 for t in range(problem.n)): -problem.A[a_idx, j]
                for j in range(problem.n)
                if problem.A[a_idx, j] != 0.0
            },
        )
        if not lin.is_zero():
            params[1 + a_idx] = lin
    target = AffinePoly(problem.n, 1 + Ld, problem.f, params)
    compiled = compile_qm_membership(target, qm)

    builder = ProgramBuilder()
    _, free_cols = builder.add_cone("free", 1 + L2k)
    gamma_col = free_cols.start
    z_cols = slice(free_cols.start + 1, free_cols.stop)
    zd_cols = slice(z_cols.start, z_cols.start + Ld)

    s_col = None
    if ysys.uses_s:
        _, s_cols = builder.add_cone("nonneg", 1)
        s_col = s_cols.start

    y_slack = []
    for blk in ysys.blocks:
        if isinstance(blk, PolyhedralYBlock):
            _, cols = builder.add_cone("nonneg", blk.T.shape[0])
            y_slack.append(cols)
        elif isinstance(blk, SecondOrderYBlock):
            _, cols = builder.add_cone("soc", blk.rows.shape[0])
            y_slack.append(cols)
        else:
            _, cols = builder.add_cone("psd", blk.side)
            y_slack.append(cols)

    moment_block_ids, moment_cols = [], []
    for mp in maps:
        idx, cols = builder.add_cone("psd", mp.side)
        moment_block_ids.append(idx)
        moment_cols.append(cols)

    gram_block_ids, gram_cols, gram_sides = [], [], []
    for side in qm.gram_sides():
        kind = "nonneg" if side == 1 else "psd"
        idx, cols = builder.add_cone(kind, side)
        gram_block_ids.append(idx)
        gram_cols.append(cols)
        gram_sides.append(side)

    # ties: psd moment blocks equal their maps applied to z
    for mp, cols in zip(maps, moment_cols):
        W = mp.svec_rows()
        rows = builder.add_rows(W.shape[0])
        builder.set_entries(rows, cols, np.eye(W.shape[0]))
        builder.set_entries(rows, z_cols, -W)

    # moment-set blocks act on the degree-d prefix of z
    for blk, cols in zip(ysys.blocks, y_slack):
        if isinstance(blk, PolyhedralYBlock):
            rows = builder.add_rows(blk.T.shape[0])
            builder.set_entries(rows, cols, np.eye(blk.T.shape[0]))
            builder.set_entries(rows, zd_cols, -blk.T)
            if s_col is not None and blk.references_s():
                builder.set_entries(rows, slice(s_col, s_col + 1), -blk.u[:, None])
        elif isinstance(blk, SecondOrderYBlock):
            rows = builder.add_rows(blk.rows.shape[0])
            builder.set_entries(rows, cols, np.eye(blk.rows.shape[0]))
            builder.set_entries(rows, zd_cols, -blk.rows)
            if s_col is not None and blk.references_s():
                builder.set_entries(rows, slice(s_col, s_col + 1), -blk.offset[:, None])
        else:
            sv = conesolve.svec_dim(blk.side)
            W = np.zeros((sv, Ld))
            for a_idx in range(Ld):
                W[:, a_idx] = conesolve.svec(blk.coeff_mats[a_idx])
            rows = builder.add_rows(sv)
            builder.set_entries(rows, cols, np.eye(sv))
            builder.set_entries(rows, zd_cols, -W)
            if s_col is not None and blk.references_s():
                builder.set_entries(
                    rows, slice(s_col, s_col + 1), -conesolve.svec(blk.B)[:, None]
                )

    # coefficient matching: gram expansion == f - gamma - (z' A x) rowwise
    qm_rows = builder.add_rows(compiled.nrows)
    for cols, rowmat in zip(gram_cols, compiled.gram_rows):
        builder.set_entries(qm_rows, cols, rowmat)
    builder.set_entries(
        qm_rows, slice(gamma_col, gamma_col + 1), -compiled.param_rows[:, :1]
    )
    builder.set_entries(qm_rows, zd_cols, -compiled.param_rows[:, 1:])
    builder.set_rhs(qm_rows, compiled.rhs)

    # maximize gamma - <b, y>  ==  minimize -gamma + <b, z|_d>
    builder.add_objective(slice(gamma_col, gamma_col + 1), np.array([-1.0]))
    builder.add_objective(zd_cols, problem.b)

    program = builder.build()
    index_maps = IndexMaps(
        order_k=k,
        d1=qm.total_degree // 2,
        y_dim=Ld,
        gamma_col=gamma_col,
        z_cols=z_cols,
        s_col=s_col,
        moment_block_ids=moment_block_ids,
        moment_maps=maps,
        gram_block_ids=gram_block_ids,
        gram_sides=gram_sides,
        qm_rows=qm_rows,
        qm=qm,
    )
    return program, index_maps


# ---------------------------------------------------------------------------
# recovery and certification
# ---------------------------------------------------------------------------


class RecoveryError(RuntimeError):
    """The decision vector could not be read off the dual solution."""


def recover_primal(
    solution: conesolve.SolverSolution, maps: IndexMaps, n: int
) -> tuple[np.ndarray, Tms]:
    """Decision point and its moment vector from the unit-Gram dual block.

    The dual slack on the unit-generator Gram block is a degree-2*d1 moment
    matrix; averaging its entries over equal exponent sums recovers w, which
    is normalized to w_0 = 1, and x* is the degree-1 coordinate projection.
    """
    if solution.status != SolverStatus.OPTIMAL:
        raise RecoveryError(f"solver status {solution.status.value} is not optimal")
    omega = solution.dual_cone_block(maps.gram_block_ids[0])
    bx = basis(n, maps.d1)
    b2 = basis(n, 2 * maps.d1)
    sums = np.zeros(len(b2))
    counts = np.zeros(len(b2))
    for i, ai in enumerate(bx.exponents):
        for j, aj in enumerate(bx.exponents):
            pos = b2.position(tuple(x + y for x, y in zip(ai, aj)))
            sums[pos] += omega[i, j]
            counts[pos] += 1.0
    w = sums / np.maximum(counts, 1.0)
    if abs(w[0]) < 1e-10:
        raise RecoveryError(f"unit mass of the recovered moment vector is {w[0]:.2e}")
    w = w / w[0]
    xstar = np.array([w[b2.position(tuple(1 if t == j else 0 for t in range(n)))]
                      for j in range(n)])
    return xstar, Tms(n, 2 * maps.d1, w)


@dataclass
class CertificateSet:
    """Residuals of the optimality and tightness checks."""

    duality_gap: float
    feasibility_residual: float
    objective_match: float
    complementarity: float
    complementarity_scaled: float
    moment_match: float | None = None
    support_violation: float | None = None
    cone_membership_residual: float | None = None
    worst_case_expectation: float | None = None

    def optimality_passed(self, tol: float, tol_complementarity: float) -> bool:
        return (
            self.duality_gap <= tol
            and self.feasibility_residual <= tol
            and self.objective_match <= tol
            and self.complementarity_scaled <= tol_complementarity
        )


def certify(
    problem: DromProblem,
    xstar: np.ndarray,
    wstar: Tms,
    fstar: float,
    ystar: Tms,
    duality_gap: float,
) -> CertificateSet:
    """Pure evaluation of the optimality residuals at a candidate solution."""
    feas = 0.0
    for c in problem.constraints:
        feas = max(feas, -c(xstar))
    obj_match = abs(riesz_pair(problem.f, wstar) - problem.f(xstar))
    hv = problem.h_coefficients(xstar)
    comp = abs(float(hv @ ystar.values))
    comp_scale = comp / (1.0 + float(np.linalg.norm(hv)) * float(np.linalg.norm(ystar.values)))
    return CertificateSet(
        duality_gap=duality_gap,
        feasibility_residual=feas,
        objective_match=obj_match,
        complementarity=comp,
        complementarity_scaled=comp_scale,
    )


def cone_membership_residual(
    problem: DromProblem, y: np.ndarray, s_value: float
) -> float:
    """Worst violation of the moment-set closure constraints at (y, s)."""
    worst = 0.0
    for blk in problem.y_blocks:
        if isinstance(blk, PolyhedralYBlock):
            vals = blk.T @ y + s_value * blk.u
            worst = max(worst, float(-vals.min(initial=0.0)))
        elif isinstance(blk, SecondOrderYBlock):
            v = blk.rows @ y + s_value * blk.offset
            worst = max(worst, float(np.linalg.norm(v[1:]) - v[0]))
        else:
            M = np.tensordot(blk.coeff_mats, y, axes=(0, 0)) + s_value * blk.B
            worst = max(worst, float(-np.linalg.eigvalsh(M).min()))
    return worst


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------


class Tightness(enum.Enum):
    CERTIFIED = "certified"
    UNDECIDED = "undecided"
    NO_MEASURE = "no_measure"


class ReportStatus(enum.Enum):
    SOLVED = "solved"
    UNDECIDED = "undecided"
    INFEASIBLE = "infeasible"
    UNBOUNDED_OR_ORDER_LIMIT = "unbounded_or_order_limit"
    SOLVER_FAILURE = "solver_failure"


@dataclass(frozen=True)
class DromOptions:
    order: int | None = None
    max_order: int | None = None
    level_max: int | None = None
    seed: int = 42
    tol_certificate: float = 1e-6
    tol_complementarity: float = 1e-5
    tol_moment_match: float = 1e-4
    tol_support: float = 1e-6
    ball_radius: float | None = None
    multiplier_overrides: dict[int, int] | None = None
    solver: SolverOptions = field(default_factory=SolverOptions)


@dataclass
class SolveReport:
    status: ReportStatus
    tightness: Tightness
    order_k: int | None = None
    optimal_value: float | None = None
    x: np.ndarray | None = None
    gamma: float | None = None
    y: Tms | None = None
    z: Tms | None = None
    w: Tms | None = None
    worst_case_measure: AtomicMeasure | None = None
    certificates: CertificateSet | None = None
    attempts: list[dict] = field(default_factory=list)
    solver_iterations: int = 0
    wall_time: float = 0.0
    seed: int = 42
    detail: str = ""


def run(problem: DromProblem, options: DromOptions | None = None) -> SolveReport:
    """Hierarchy driver: solve, test tightness, extract the worst-case measure.

    Relaxation orders start at ceil(d/2) and increase whenever the relaxed
    moment vector y* provably admits no representing measure on the support;
    for each order, the completion level ell grows until the completed
    sequence is flat (measure extracted, certificates evaluated) or the level
    budget runs out (tightness undecided).  An unbounded relaxation is
    reported as infeasible-or-order-too-low and the order is raised.
    """
    from .soskit import random_sos

    opts = options or DromOptions()
    t_start = time.monotonic()
    p, d = problem.p, problem.d
    support = problem.support
    if opts.ball_radius is not None:
        support = support.with_ball(opts.ball_radius**2)

    t0 = math.ceil(d / 2)
    d0 = max(1, math.ceil(support.degree / 2))
    R = random_sos(opts.seed, p, t0)
    k0 = opts.order if opts.order is not None else math.ceil(d / 2)
    k0 = max(k0, math.ceil(max(d, support.degree) / 2))
    k_max = opts.max_order if opts.max_order is not None else k0 + 3
    level0 = t0 + 1
    level_max = opts.level_max if opts.level_max is not None else t0 + 4

    attempts: list[dict] = []
    total_iters = 0

    def report(**kw) -> SolveReport:
        rep = SolveReport(
            attempts=attempts,
            solver_iterations=total_iters,
            wall_time=time.monotonic() - t_start,
            seed=opts.seed,
            **kw,
        )
        return rep

    k = k0
    while k <= k_max:
        program, maps = assemble_order_k(
            problem, k, support=support, multiplier_overrides=opts.multiplier_overrides
        )
        sol = conesolve.solve(program, opts.solver)
        total_iters += sol.iterations
        if sol.status == SolverStatus.DUAL_INFEASIBLE:
            attempts.append({"k": k, "event": "relaxation unbounded above"})
            k += 1
            continue
        if sol.status == SolverStatus.PRIMAL_INFEASIBLE:
            return report(
                status=ReportStatus.INFEASIBLE,
                tightness=Tightness.UNDECIDED,
                order_k=k,
                detail="order-k relaxation infeasible",
            )
        if sol.status != SolverStatus.OPTIMAL:
            return report(
                status=ReportStatus.SOLVER_FAILURE,
                tightness=Tightness.UNDECIDED,
                order_k=k,
                detail=f"solver status {sol.status.value}",
            )

        gamma = float(sol.x[maps.gamma_col])
        z = Tms(p, 2 * k, sol.x[maps.z_cols])
        y = z.truncate(d)
        fstar = -sol.primal_objective
        s_value = float(sol.x[maps.s_col]) if maps.s_col is not None else 0.0
        try:
            xstar, w = recover_primal(sol, maps, problem.n)
        except RecoveryError as exc:
            return report(
                status=ReportStatus.SOLVER_FAILURE,
                tightness=Tightness.UNDECIDED,
                order_k=k,
                detail=str(exc),
            )

        verdict: str | None = None
        measure: AtomicMeasure | None = None
        for level in range(level0, level_max + 1):
            res = atmp_solve(y, support, R, level, solver_options=opts.solver)
            if res.solution is not None:
                total_iters += res.solution.iterations
            if res.status == AtmpStatus.INFEASIBLE:
                attempts.append(
                    {"k": k, "level": level, "event": "y* admits no support measure"}
                )
                verdict = "no_measure"
                break
            if res.status == AtmpStatus.INCONCLUSIVE:
                attempts.append(
                    {"k": k, "level": level, "event": f"completion inconclusive: {res.detail}"}
                )
                continue
            flat = check_flat(res.omega, d0, t0)
            if flat is None:
                attempts.append({"k": k, "level": level, "event": "no flat truncation"})
                continue
            try:
                measure = extract_atoms(
                    res.omega, flat[0], flat[1],
                    support=support, tol_feas=opts.tol_support, seed=opts.seed,
                )
            except ExtractionError as exc:
                attempts.append({"k": k, "level": level, "event": f"extraction: {exc}"})
                continue
            attempts.append(
                {"k": k, "level": level, "event": f"flat at s={flat[0]}, rank {flat[1]}"}
            )
            verdict = "measure"
            break

        if verdict == "no_measure":
            k += 1
            continue
        if verdict != "measure":
            return report(
                status=ReportStatus.UNDECIDED,
                tightness=Tightness.UNDECIDED,
                order_k=k,
                optimal_value=fstar,
                x=xstar,
                gamma=gamma,
                y=y,
                z=z,
                w=w,
                detail="completion level budget exhausted",
            )

        certs = certify(problem, xstar, w, fstar, y, sol.residuals["gap"])
        certs.moment_match = moment_mismatch(measure, z, d)
        certs.support_violation = measure.support_violation(support)
        certs.cone_membership_residual = cone_membership_residual(
            problem, moments(measure, d, nvars=p).values, s_value
        )
        certs.worst_case_expectation = float(
            sum(
                wj * problem.h_in_xi(xstar)(uj)
                for uj, wj in zip(measure.atoms, measure.weights)
            )
        )
        tight = (
            Tightness.CERTIFIED
            if certs.moment_match <= opts.tol_moment_match
            else Tightness.UNDECIDED
        )
        ok = tight == Tightness.CERTIFIED and certs.optimality_passed(
            opts.tol_certificate, opts.tol_complementarity
        )
        return report(
            status=ReportStatus.SOLVED if ok else ReportStatus.UNDECIDED,
            tightness=tight,
            order_k=k,
            optimal_value=fstar,
            x=xstar,
            gamma=gamma,
            y=y,
            z=z,
            w=w,
            worst_case_measure=measure,
            certificates=certs,
        )

    last_event = attempts[-1]["event"] if attempts else ""
    if "unbounded" in last_event:
        return report(
            status=ReportStatus.UNBOUNDED_OR_ORDER_LIMIT,
            tightness=Tightness.UNDECIDED,
            detail=(
                "relaxation unbounded above at every tried order: the problem "
                "is infeasible or the order budget is too small"
            ),
        )
    return report(
        status=ReportStatus.UNDECIDED,
        tightness=Tightness.NO_MEASURE,
        order_k=k_max,
        detail="order budget exhausted while y* admits no support measure",
    )
