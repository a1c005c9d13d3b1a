"""Truncated moment sequences and the machinery built on them.

Covers moment and localizing matrices, the compiler that turns a support
description into PSD membership maps, the flat-truncation rank test, atomic
measure extraction via multiplication matrices, the Hankel conditions for
interval-supported univariate sequences, and the moment completion
subproblem that certifies whether a sequence admits a representing measure.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.optimize

from . import conesolve
from .conesolve import (
    ConicProgram,
    ProgramBuilder,
    SolverOptions,
    SolverSolution,
    SolverStatus,
)
from .polycore import (
    DegreeError,
    MonomialBasis,
    Poly,
    VariableCountError,
    basis,
    basis_size,
    riesz_pair,
)

RANK_TOL = 1e-6
TOL_FEAS = 1e-6
TOL_EXTRACT = 1e-6
MERGE_TOL = 1e-5
WEIGHT_DROP = 1e-8
INFEAS_CERT_TOL = 1e-7


class Tms:
    """Truncated moment sequence: values indexed by the graded-lex basis."""

    __slots__ = ("nvars", "degree", "values")

    def __init__(self, nvars: int, degree: int, values):
        values = np.array(values, dtype=float)
        expected = basis_size(nvars, degree)
        if values.shape != (expected,):
            raise ValueError(
                f"tms of degree {degree} in {nvars} variables needs "
                f"{expected} entries, got {values.shape}"
            )
        self.nvars = nvars
        self.degree = degree
        values.setflags(write=False)
        self.values = values

    @classmethod
    def zeros(cls, nvars: int, degree: int) -> "Tms":
        return cls(nvars, degree, np.zeros(basis_size(nvars, degree)))

    def __getitem__(self, alpha) -> float:
        b = basis(self.nvars, self.degree)
        return float(self.values[b.position(tuple(alpha))])

    def truncate(self, degree: int) -> "Tms":
        """Prefix truncation to a lower degree (the sequences are graded)."""
        if degree > self.degree:
            raise DegreeError(f"cannot truncate degree {self.degree} up to {degree}")
        return Tms(self.nvars, degree, self.values[: basis_size(self.nvars, degree)])

    def __add__(self, other: "Tms") -> "Tms":
        if (self.nvars, self.degree) != (other.nvars, other.degree):
            raise ValueError("tms shape mismatch")
        return Tms(self.nvars, self.degree, self.values + other.values)

    def __mul__(self, factor: float) -> "Tms":
        return Tms(self.nvars, self.degree, self.values * float(factor))

    __rmul__ = __mul__

    def __repr__(self) -> str:
        return f"Tms(nvars={self.nvars}, degree={self.degree}, values={self.values})"


@dataclass(frozen=True)
class SemiAlgSet:
    """Basic closed semialgebraic support set {xi : g_i(xi) >= 0}."""

    generators: tuple[Poly, ...]

    def __post_init__(self):
        if not self.generators:
            raise ValueError("support needs at least one generator")
        n = self.generators[0].nvars
        for g in self.generators:
            if g.nvars != n:
                raise VariableCountError("support generators disagree on variables")

    @property
    def nvars(self) -> int:
        return self.generators[0].nvars

    @property
    def degree(self) -> int:
        return max(g.degree for g in self.generators)

    def violation(self, point) -> float:
        """Largest constraint violation at a point (0 when inside)."""
        return max(0.0, max(-g(point) for g in self.generators))

    def with_ball(self, radius_sq: float) -> "SemiAlgSet":
        """Append the redundant ball constraint N - |xi|^2 >= 0."""
        n = self.nvars
        ball = Poly.constant(n, radius_sq)
        for i in range(n):
            ball = ball - Poly.variable(n, i) * Poly.variable(n, i)
        return SemiAlgSet(self.generators + (ball,))


@dataclass
class AtomicMeasure:
    """Finite weighted sum of Dirac atoms."""

    atoms: list[np.ndarray]
    weights: list[float]

    def __post_init__(self):
        self.atoms = [np.atleast_1d(np.asarray(a, dtype=float)) for a in self.atoms]
        self.weights = [float(w) for w in self.weights]
        if len(self.atoms) != len(self.weights):
            raise ValueError("atom and weight counts differ")
        if any(w <= 0 for w in self.weights):
            raise ValueError("weights must be positive")

    @property
    def mass(self) -> float:
        return sum(self.weights)

    def __len__(self) -> int:
        return len(self.atoms)

    def support_violation(self, support: SemiAlgSet) -> float:
        return max(support.violation(u) for u in self.atoms) if self.atoms else 0.0


def dirac_moments(u, d: int) -> Tms:
    """Moments z_alpha = u^alpha of the Dirac measure at u, up to degree d."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    p = len(u)
    b = basis(p, d)
    vals = np.empty(len(b))
    for i, alpha in enumerate(b):
        v = 1.0
        for x, a in zip(u, alpha):
            if a:
                v *= x**a
        vals[i] = v
    return Tms(p, d, vals)


def moments(measure: AtomicMeasure, d: int, nvars: int | None = None) -> Tms:
    """Degree-d moment sequence of an atomic measure.

    The empty measure (zero measure) needs ``nvars`` to fix the dimension.
    """
    if not measure.atoms:
        if nvars is None:
            raise ValueError("zero measure needs an explicit variable count")
        return Tms.zeros(nvars, d)
    p = len(measure.atoms[0])
    out = Tms.zeros(p, d)
    for u, w in zip(measure.atoms, measure.weights):
        out = out + w * dirac_moments(u, d)
    return out


# ---------------------------------------------------------------------------
# moment and localizing matrices
# ---------------------------------------------------------------------------


def moment_matrix(z: Tms, k: int) -> np.ndarray:
    """M_k[z] with entry (alpha, beta) = z_{alpha+beta}."""
    if z.degree < 2 * k:
        raise DegreeError(f"moment matrix of order {k} needs degree >= {2 * k}")
    bk = basis(z.nvars, k)
    bfull = basis(z.nvars, z.degree)
    n = len(bk)
    M = np.empty((n, n))
    for i, a in enumerate(bk):
        for j in range(i, n):
            bexp = bk[j]
            pos = bfull.position(tuple(x + y for x, y in zip(a, bexp)))
            M[i, j] = M[j, i] = z.values[pos]
    return M


def localizing_matrix(q: Poly, z: Tms, k: int) -> np.ndarray:
    """L_q^{(k)}[z]; side is the basis size of degree k - ceil(deg(q)/2)."""
    return localizing_map(q, z.nvars, k, z.degree).instantiate(z)


@dataclass(frozen=True)
class LinearMatrixMap:
    """Symbolic symmetric matrix whose entries are linear functionals of a tms.

    ``entries[(i, j)]`` (stored for i <= j only) is a tuple of
    (position, weight) pairs over the coordinates of a degree-``source_degree``
    sequence; symmetry holds by construction.
    """

    side: int
    nvars: int
    source_degree: int
    entries: dict[tuple[int, int], tuple[tuple[int, float], ...]]
    label: str = ""

    def instantiate(self, z: "Tms | np.ndarray") -> np.ndarray:
        vals = z.values if isinstance(z, Tms) else np.asarray(z, dtype=float)
        if len(vals) < basis_size(self.nvars, self.source_degree):
            raise DegreeError("sequence too short for this map")
        M = np.zeros((self.side, self.side))
        for (i, j), terms in self.entries.items():
            v = sum(w * vals[pos] for pos, w in terms)
            M[i, j] = M[j, i] = v
        return M

    def svec_rows(self) -> np.ndarray:
        """Dense matrix W with svec(instantiate(z)) = W @ z, in solver convention."""
        L = basis_size(self.nvars, self.source_degree)
        pairs = conesolve.svec_indices(self.side)
        W = np.zeros((len(pairs), L))
        for r, (i, j) in enumerate(pairs):
            scale = 1.0 if i == j else math.sqrt(2.0)
            for pos, w in self.entries.get((i, j), ()):
                W[r, pos] += scale * w
        return W


def moment_map(nvars: int, k: int, source_degree: int) -> LinearMatrixMap:
    """Symbolic form of M_k[.] over sequences of the given degree."""
    if source_degree < 2 * k:
        raise DegreeError("source degree too low for this moment matrix order")
    bk = basis(nvars, k)
    bfull = basis(nvars, source_degree)
    entries = {}
    for i, a in enumerate(bk):
        for j in range(i, len(bk)):
            bexp = bk[j]
            pos = bfull.position(tuple(x + y for x, y in zip(a, bexp)))
            entries[(i, j)] = ((pos, 1.0),)
    return LinearMatrixMap(len(bk), nvars, source_degree, entries, label="moment")


def localizing_map(q: Poly, nvars: int, k: int, source_degree: int) -> LinearMatrixMap:
    """Symbolic form of L_q^{(k)}[.] over sequences of the given degree."""
    if q.nvars != nvars:
        raise VariableCountError("generator variable count mismatch")
    if q.degree > 2 * k:
        raise DegreeError(f"generator degree {q.degree} exceeds 2k = {2 * k}")
    if source_degree < 2 * k:
        raise DegreeError("source degree too low for this localizer order")
    s = k - math.ceil(q.degree / 2)
    bs = basis(nvars, s)
    bfull = basis(nvars, source_degree)
    entries = {}
    for i, a in enumerate(bs):
        for j in range(i, len(bs)):
            acc: dict[int, float] = {}
            for eta, cq in q.coeffs.items():
                pos = bfull.position(
                    tuple(x + y + e for x, y, e in zip(a, bs[j], eta))
                )
                acc[pos] = acc.get(pos, 0.0) + cq
            entries[(i, j)] = tuple(sorted(acc.items()))
    return LinearMatrixMap(len(bs), nvars, source_degree, entries, label=repr(q))


def compile_cone_Sg(g: SemiAlgSet, two_k: int) -> list[LinearMatrixMap]:
    """PSD membership maps for the order-k moment cone of the support set.

    Returns the moment-matrix map followed by one localizer per generator;
    a degree-two_k sequence lies in the cone iff every instantiated matrix
    is positive semidefinite.
    """
    if two_k % 2 != 0:
        raise DegreeError(f"membership degree must be even, got {two_k}")
    k = two_k // 2
    if g.degree > two_k:
        raise DegreeError("support generators exceed the membership degree")
    maps = [moment_map(g.nvars, k, two_k)]
    for gi in g.generators:
        maps.append(localizing_map(gi, g.nvars, k, two_k))
    return maps


def univariate_interval_constraints(a1: float, a2: float, k: int) -> list[LinearMatrixMap]:
    """Hankel conditions characterizing degree-2k moments on an interval [a1, a2].

    Two maps: M_k[z] >= 0 and the shifted-Hankel inequality
    (a1+a2) H1[z] - a1*a2 H0[z] - H2[z] >= 0, which together are necessary and
    sufficient for a representing measure on the interval.
    """
    if a1 >= a2:
        raise ValueError(f"need a1 < a2, got [{a1}, {a2}]")
    interval = Poly(1, {(1,): a1 + a2, (2,): -1.0, (0,): -a1 * a2})
    return [
        moment_map(1, k, 2 * k),
        localizing_map(interval, 1, k, 2 * k),
    ]


# ---------------------------------------------------------------------------
# flat truncation and atom extraction
# ---------------------------------------------------------------------------


def numerical_rank(M: np.ndarray, rel_tol: float = RANK_TOL, abs_tol: float = 0.0) -> int:
    """Rank with singular values below max(rel_tol * sigma_max, abs_tol) zeroed."""
    if M.size == 0:
        return 0
    sv = np.linalg.svd(M, compute_uv=False)
    top = sv[0]
    if top <= abs_tol:
        return 0
    return int(np.sum(sv > max(rel_tol * top, abs_tol)))


def check_flat(
    omega: Tms, d0: int, t0: int, rel_tol: float = RANK_TOL
) -> tuple[int, int] | None:
    """Smallest s in [max(d0, t0), ell] with rank M_{s-d0} = rank M_s, plus the rank.

    ``omega`` must have even degree 2*ell.  Returns None when no order
    qualifies; absence is a valid outcome (the caller may extend the sequence).
    An absolute singular-value floor tied to the sequence scale recognizes the
    identically-zero measure (all matrices at noise level, rank 0).
    """
    if omega.degree % 2 != 0:
        raise DegreeError("flatness check needs an even-degree sequence")
    ell = omega.degree // 2
    d0 = max(1, d0)
    lo = max(d0, t0)
    floor = rel_tol * max(1.0, float(np.max(np.abs(omega.values))))
    for s in range(lo, ell + 1):
        r_lo = numerical_rank(moment_matrix(omega, s - d0), rel_tol, floor)
        r_hi = numerical_rank(moment_matrix(omega, s), rel_tol, floor)
        if r_lo == r_hi:
            return s, r_hi
    return None


class ExtractionError(RuntimeError):
    """Atom extraction failed (ill-conditioned factorization or bad support)."""


def extract_atoms(
    omega: Tms,
    s: int,
    r: int,
    support: SemiAlgSet | None = None,
    rank_tol: float = RANK_TOL,
    merge_tol: float = MERGE_TOL,
    weight_drop: float = WEIGHT_DROP,
    tol_feas: float = TOL_FEAS,
    seed: int = 0,
) -> AtomicMeasure:
    """Recover the r-atomic measure behind a flat sequence.

    Rank-revealing factorization of M_s, shift-based multiplication matrices
    per variable, Schur decomposition of a seeded random convex combination,
    atom read-off from the joint triangularization and weights by nonnegative
    least squares against all monomials up to degree 2s.  Rank 0 yields the
    identically-zero measure (no atoms).
    """
    if r < 0:
        raise ExtractionError("flat rank must be nonnegative")
    if r == 0:
        return AtomicMeasure(atoms=[], weights=[])
    p = omega.nvars
    M = moment_matrix(omega, s)
    w, V = np.linalg.eigh(M)
    order = np.argsort(w)[::-1]
    w, V = w[order], V[:, order]
    if w[0] <= 0:
        raise ExtractionError("moment matrix is numerically zero")
    if r > len(w) or w[r - 1] <= rank_tol**2 * w[0]:
        # eigenvalues fall off before the requested rank
        if w[r - 1] <= 0:
            raise ExtractionError("moment matrix rank deficient below target rank")
    F = V[:, :r] * np.sqrt(np.maximum(w[:r], 0.0))

    bs = basis(p, s)
    low_rows = [i for i, a in enumerate(bs) if sum(a) <= s - 1]
    Flow = F[low_rows, :]
    # pivoted QR on the low-degree rows picks r well-conditioned basis monomials
    _, Rq, piv = scipy.linalg.qr(Flow.T, mode="economic", pivoting=True)
    diag = np.abs(np.diag(Rq))
    if len(diag) < r or diag[r - 1] <= 1e-12 * max(diag[0], 1e-300):
        raise ExtractionError("could not select a stable pivot basis")
    pivots = [low_rows[piv[i]] for i in range(r)]
    B = F[pivots, :]
    try:
        U = np.linalg.solve(B.T, F.T).T  # U = F B^{-1}, identity on pivot rows
    except np.linalg.LinAlgError as exc:
        raise ExtractionError("pivot block is singular") from exc

    mult = []
    for var in range(p):
        rows = []
        for pi in pivots:
            alpha = list(bs[pi])
            alpha[var] += 1
            rows.append(bs.position(tuple(alpha)))
        mult.append(U[rows, :])

    rng = np.random.default_rng(seed)
    coeffs = rng.random(p)
    coeffs /= coeffs.sum()
    N = sum(ci * Ni for ci, Ni in zip(coeffs, mult))
    T, Q = scipy.linalg.schur(N, output="real")
    off = np.abs(np.tril(T, -1)).max(initial=0.0)
    if off > 1e-6 * (1.0 + np.abs(T).max()):
        raise ExtractionError("complex eigenvalue cluster in multiplication matrix")

    points = np.empty((r, p))
    for j in range(r):
        q = Q[:, j]
        for var in range(p):
            points[j, var] = q @ mult[var] @ q

    # merge clustered read-offs into single atoms
    clusters: list[list[int]] = []
    for j in range(r):
        for cl in clusters:
            if np.max(np.abs(points[cl[0]] - points[j])) <= merge_tol:
                cl.append(j)
                break
        else:
            clusters.append([j])
    atoms = [points[cl].mean(axis=0) for cl in clusters]

    def fit(atom_list: list[np.ndarray]) -> tuple[np.ndarray, float]:
        b2s = basis(p, 2 * s)
        A = np.empty((len(b2s), len(atom_list)))
        for j, u in enumerate(atom_list):
            A[:, j] = dirac_moments(u, 2 * s).values
        target = omega.values[: len(b2s)]
        weights, _ = scipy.optimize.nnls(A, target)
        resid = float(np.max(np.abs(A @ weights - target)))
        return weights, resid

    weights, resid = fit(atoms)
    keep = [j for j, wj in enumerate(weights) if wj > weight_drop]
    if not keep:
        raise ExtractionError("all recovered weights are negligible")
    if len(keep) < len(atoms):
        atoms = [atoms[j] for j in keep]
        weights, resid = fit(atoms)
        if np.any(weights <= 0):
            keep2 = [j for j, wj in enumerate(weights) if wj > 0]
            atoms = [atoms[j] for j in keep2]
            weights, resid = fit(atoms)

    atoms, weights = _polish_atoms(omega, s, atoms, list(weights), support=support)
    measure = AtomicMeasure(atoms=list(atoms), weights=list(weights))
    if support is not None:
        bad = measure.support_violation(support)
        if bad > tol_feas:
            raise ExtractionError(
                f"extracted atom violates the support set by {bad:.3e}"
            )
    return measure


def _polish_atoms(
    omega: Tms,
    s: int,
    atoms: list[np.ndarray],
    weights: list[float],
    support: SemiAlgSet | None = None,
) -> tuple[list[np.ndarray], list[float]]:
    """Gauss-Newton refinement of (atoms, weights) against the moment system.

    The Schur read-off carries noise amplified by approximate flatness; a few
    least-squares steps on the full parameter vector pull atom locations and
    weights onto the best measure fit of the sequence.  When the support set
    is known, a stiff hinge penalty on negative generator values steers atoms
    back onto the support: the completed sequence is only accurate to solver
    tolerance, so light-weight atoms can otherwise drift outside by far more
    than their weighted effect on the moments.  Falls back to the input on
    any numerical trouble.
    """
    p = omega.nvars
    r = len(atoms)
    b2s = basis(p, 2 * s)
    target = omega.values[: len(b2s)]
    exps = np.array(b2s.exponents)  # (rows, p)
    gens = support.generators if support is not None else ()
    pen = 1e4 * max(1.0, float(np.max(np.abs(target))))
    nrows = len(b2s) + r * len(gens)

    def residual_and_jacobian(theta):
        pts = theta[: r * p].reshape(r, p)
        ws = theta[r * p :]
        J = np.zeros((nrows, r * (p + 1)))
        res = np.zeros(nrows)
        res[: len(b2s)] = -target
        for j in range(r):
            vals = np.prod(pts[j] ** exps, axis=1)
            res[: len(b2s)] += ws[j] * vals
            J[: len(b2s), r * p + j] = vals
            for i in range(p):
                down = exps.copy()
                down[:, i] = np.maximum(down[:, i] - 1, 0)
                dvals = exps[:, i] * np.prod(pts[j] ** down, axis=1)
                J[: len(b2s), j * p + i] = ws[j] * dvals
            for gi, g in enumerate(gens):
                row = len(b2s) + j * len(gens) + gi
                val = g(pts[j])
                if val < 0.0:
                    res[row] = pen * val
                    for i in range(p):
                        J[row, j * p + i] = pen * g.diff(i)(pts[j])
        return res, J

    theta = np.concatenate([np.concatenate(atoms), np.array(weights)])
    best_theta = theta.copy()
    res, _ = residual_and_jacobian(theta)
    best = float(np.max(np.abs(res)))
    for _ in range(20):
        res, J = residual_and_jacobian(theta)
        try:
            step, *_ = np.linalg.lstsq(J, -res, rcond=None)
        except np.linalg.LinAlgError:
            break
        if not np.all(np.isfinite(step)):
            break
        theta = theta + step
        res_new, _ = residual_and_jacobian(theta)
        score = float(np.max(np.abs(res_new)))
        if score < best:
            best = score
            best_theta = theta.copy()
        if np.max(np.abs(step)) < 1e-14:
            break
    pts = best_theta[: r * p].reshape(r, p)
    ws = best_theta[r * p :]
    if np.any(ws <= 0.0):
        return atoms, weights
    return [pts[j].copy() for j in range(r)], [float(w) for w in ws]


def moment_mismatch(measure: AtomicMeasure, omega: Tms, degree: int) -> float:
    """sup-norm gap between the measure's moments and omega truncated to degree."""
    got = moments(measure, degree, nvars=omega.nvars)
    return float(np.max(np.abs(got.values - omega.truncate(degree).values)))


# ---------------------------------------------------------------------------
# moment completion: does a sequence admit a representing measure?
# ---------------------------------------------------------------------------


class AtmpStatus(enum.Enum):
    FEASIBLE = "feasible"
    INFEASIBLE = "infeasible"
    INCONCLUSIVE = "inconclusive"


@dataclass
class AtmpResult:
    status: AtmpStatus
    omega: Tms | None = None
    solution: SolverSolution | None = None
    detail: str = ""


def atmp_solve(
    y: Tms,
    g: SemiAlgSet,
    R: Poly,
    level: int,
    solver_options: SolverOptions | None = None,
    infeas_cert_tol: float = INFEAS_CERT_TOL,
) -> AtmpResult:
    """Complete ``y`` to a degree-2*level sequence in the support's moment cone.

    Minimizes <R, omega> subject to omega|_d = y and the PSD membership maps;
    a generic SOS objective R drives the optimizer toward flat solutions.
    Returns FEASIBLE with the minimizer, INFEASIBLE when the solver produces a
    certificate that no completion exists (certificate residual below
    ``infeas_cert_tol``), and INCONCLUSIVE otherwise.
    """
    p = y.nvars
    d = y.degree
    two_l = 2 * level
    if two_l < max(R.degree, g.degree, d):
        raise DegreeError(
            f"completion degree {two_l} below max(deg R, deg g, d) = "
            f"{max(R.degree, g.degree, d)}"
        )
    if R.nvars != p or g.nvars != p:
        raise VariableCountError("objective/support variable count mismatch")

    maps = compile_cone_Sg(g, two_l)
    L = basis_size(p, two_l)
    Ld = basis_size(p, d)

    builder = ProgramBuilder()
    _, omega_cols = builder.add_cone("free", L)
    psd_cols = []
    for mp in maps:
        _, cols = builder.add_cone("psd", mp.side)
        psd_cols.append(cols)

    rows = builder.add_rows(Ld)
    builder.set_entries(rows, omega_cols, np.eye(Ld, L))
    builder.set_rhs(rows, y.values)
    for mp, cols in zip(maps, psd_cols):
        W = mp.svec_rows()
        tie = builder.add_rows(W.shape[0])
        builder.set_entries(tie, cols, np.eye(W.shape[0]))
        builder.set_entries(tie, omega_cols, -W)

    robj = R.coefficient_vector(basis(p, two_l))
    builder.add_objective(omega_cols, robj)

    program = builder.build()
    sol = conesolve.solve(program, solver_options or SolverOptions())

    if sol.status == SolverStatus.OPTIMAL:
        omega = Tms(p, two_l, sol.x[omega_cols])
        return AtmpResult(AtmpStatus.FEASIBLE, omega=omega, solution=sol)
    if sol.status == SolverStatus.PRIMAL_INFEASIBLE and (
        sol.cert_residual is not None and sol.cert_residual <= infeas_cert_tol
    ):
        return AtmpResult(
            AtmpStatus.INFEASIBLE,
            solution=sol,
            detail=f"certificate residual {sol.cert_residual:.2e}",
        )
    return AtmpResult(
        AtmpStatus.INCONCLUSIVE,
        solution=sol,
        detail=f"solver status {sol.status.value}",
    )
