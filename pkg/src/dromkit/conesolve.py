"""Dense primal-dual interior-point solver for conic programs.

Solves   min c'x  s.t.  Ax = b,  x in K,   where K is an ordered product of
free, nonnegative, second-order and positive-semidefinite blocks.  PSD blocks
live in scaled symmetric vectorization (off-diagonal entries carry sqrt(2)),
which keeps inner products isometric so dual multipliers read off exactly.

The algorithm is a homogeneous self-dual embedding with Nesterov-Todd
scaling and a Mehrotra predictor-corrector step.  Each iteration solves one
dense LU factorization of the full linearized KKT system in
(dx, dy, ds, dtau, dkappa); all problem sizes this package produces are desk
scale, so no sparsity is exploited.  The iteration is fully deterministic.

Status semantics:
  OPTIMAL            primal/dual residuals and relative gap all <= tol
  PRIMAL_INFEASIBLE  certificate y with A'y + s ~ 0, s in K*, b'y = 1
  DUAL_INFEASIBLE    improving ray x in K with Ax ~ 0, c'x = -1
  ITER_LIMIT         iteration cap reached; best scaled iterate reported
  NUMERICAL_FAILURE  singular KKT system or interior lost
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg


# ---------------------------------------------------------------------------
# symmetric vectorization
# ---------------------------------------------------------------------------

_SQRT2 = math.sqrt(2.0)


def svec_dim(side: int) -> int:
    return side * (side + 1) // 2


def svec_indices(side: int) -> list[tuple[int, int]]:
    """Pair order of the scaled symmetric vectorization: (0,0),(0,1),...,(1,1),..."""
    return [(i, j) for i in range(side) for j in range(i, side)]


def svec(M: np.ndarray) -> np.ndarray:
    side = M.shape[0]
    out = np.empty(svec_dim(side))
    k = 0
    for i in range(side):
        out[k] = M[i, i]
        k += 1
        for j in range(i + 1, side):
            out[k] = _SQRT2 * 0.5 * (M[i, j] + M[j, i])
            k += 1
    return out


def smat(v: np.ndarray) -> np.ndarray:
    n = len(v)
    side = int(round((math.sqrt(8 * n + 1) - 1) / 2))
    if svec_dim(side) != n:
        raise ValueError(f"vector length {n} is not a triangular number")
    M = np.zeros((side, side))
    k = 0
    for i in range(side):
        M[i, i] = v[k]
        k += 1
        for j in range(i + 1, side):
            M[i, j] = M[j, i] = v[k] / _SQRT2
            k += 1
    return M


# ---------------------------------------------------------------------------
# program data
# ---------------------------------------------------------------------------

VALID_KINDS = ("free", "nonneg", "soc", "psd")


@dataclass(frozen=True)
class ConeBlock:
    """One cone factor. ``size`` is the vector length, except psd where it is the side."""

    kind: str
    size: int

    def __post_init__(self):
        if self.kind not in VALID_KINDS:
            raise ValueError(f"unknown cone kind {self.kind!r}")
        if self.size < 1:
            raise ValueError(f"cone size must be positive, got {self.size}")
        if self.kind == "soc" and self.size < 2:
            raise ValueError("second-order blocks need dimension >= 2")

    @property
    def length(self) -> int:
        return svec_dim(self.size) if self.kind == "psd" else self.size

    @property
    def barrier_rank(self) -> int:
        if self.kind == "free":
            return 0
        if self.kind == "soc":
            return 2
        return self.size


@dataclass
class ConicProgram:
    """Standard-form conic program: min c'x s.t. Ax = b, x in product of cones."""

    c: np.ndarray
    A: np.ndarray
    b: np.ndarray
    cones: list[ConeBlock]

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        self.A = np.asarray(self.A, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        if self.A.ndim != 2:
            raise ValueError("A must be a matrix")
        n = sum(blk.length for blk in self.cones)
        if self.c.shape != (n,):
            raise ValueError(f"c has length {self.c.shape}, cones give {n}")
        if self.A.shape[1] != n:
            raise ValueError(f"A has {self.A.shape[1]} columns, cones give {n}")
        if self.b.shape != (self.A.shape[0],):
            raise ValueError("b length does not match row count of A")

    @property
    def dimension(self) -> int:
        return self.A.shape[1]

    def block_slices(self) -> list[slice]:
        out, off = [], 0
        for blk in self.cones:
            out.append(slice(off, off + blk.length))
            off += blk.length
        return out

    def to_text(self) -> str:
        """Plain-text standard-form listing for cross-checking with other solvers."""
        lines = [
            "conic program (min c'x : Ax = b, x in K)",
            f"variables: {self.dimension}, equalities: {self.A.shape[0]}",
            "cones: " + ", ".join(f"{blk.kind}({blk.size})" for blk in self.cones),
            "c = " + np.array2string(self.c, max_line_width=100000),
            "b = " + np.array2string(self.b, max_line_width=100000),
            "A =",
        ]
        for row in self.A:
            lines.append("  " + np.array2string(row, max_line_width=100000))
        return "\n".join(lines)


class SolverStatus(enum.Enum):
    OPTIMAL = "optimal"
    PRIMAL_INFEASIBLE = "primal_infeasible"
    DUAL_INFEASIBLE = "dual_infeasible"
    ITER_LIMIT = "iter_limit"
    NUMERICAL_FAILURE = "numerical_failure"


@dataclass(frozen=True)
class SolverOptions:
    tol: float = 1e-8
    tol_cert: float = 1e-7
    max_iter: int = 200
    verbose: bool = False


@dataclass
class SolverSolution:
    status: SolverStatus
    x: np.ndarray
    y: np.ndarray
    s: np.ndarray
    primal_objective: float
    dual_objective: float
    residuals: dict
    iterations: int
    cones: list[ConeBlock]
    certificate: np.ndarray | None = None
    cert_residual: float | None = None
    iterates: list[dict] = field(default_factory=list)

    def block_slices(self) -> list[slice]:
        out, off = [], 0
        for blk in self.cones:
            out.append(slice(off, off + blk.length))
            off += blk.length
        return out

    def dual_cone_block(self, index: int) -> np.ndarray:
        """Dual slack restricted to one cone block (psd blocks come back as matrices)."""
        sl = self.block_slices()[index]
        if self.cones[index].kind == "psd":
            return smat(self.s[sl])
        return self.s[sl]

    def primal_block(self, index: int) -> np.ndarray:
        sl = self.block_slices()[index]
        if self.cones[index].kind == "psd":
            return smat(self.x[sl])
        return self.x[sl]


# ---------------------------------------------------------------------------
# incremental program builder shared by the assembly layers
# ---------------------------------------------------------------------------


class ProgramBuilder:
    """Accumulates cone blocks, equality rows and objective entries, then
    materializes a dense ConicProgram."""

    def __init__(self):
        self.cones: list[ConeBlock] = []
        self._ncols = 0
        self._nrows = 0
        self._entries: list[tuple[slice, slice, np.ndarray]] = []
        self._rhs: list[tuple[slice, np.ndarray]] = []
        self._obj: list[tuple[slice, np.ndarray]] = []

    def add_cone(self, kind: str, size: int) -> tuple[int, slice]:
        blk = ConeBlock(kind, size)
        self.cones.append(blk)
        cols = slice(self._ncols, self._ncols + blk.length)
        self._ncols += blk.length
        return len(self.cones) - 1, cols

    def add_rows(self, n: int) -> slice:
        rows = slice(self._nrows, self._nrows + n)
        self._nrows += n
        return rows

    def set_entries(self, rows: slice, cols: slice, mat: np.ndarray) -> None:
        mat = np.atleast_2d(np.asarray(mat, dtype=float))
        self._entries.append((rows, cols, mat))

    def set_rhs(self, rows: slice, vec: np.ndarray) -> None:
        self._rhs.append((rows, np.atleast_1d(np.asarray(vec, dtype=float))))

    def add_objective(self, cols: slice, vec: np.ndarray) -> None:
        self._obj.append((cols, np.atleast_1d(np.asarray(vec, dtype=float))))

    @property
    def ncols(self) -> int:
        return self._ncols

    def build(self) -> ConicProgram:
        A = np.zeros((self._nrows, self._ncols))
        b = np.zeros(self._nrows)
        c = np.zeros(self._ncols)
        for rows, cols, mat in self._entries:
            A[rows, cols] += mat
        for rows, vec in self._rhs:
            b[rows] += vec
        for cols, vec in self._obj:
            c[cols] += vec
        return ConicProgram(c=c, A=A, b=b, cones=list(self.cones))


# ---------------------------------------------------------------------------
# Jordan-algebra helpers per block kind
# ---------------------------------------------------------------------------


def _soc_det(u: np.ndarray) -> float:
    return u[0] * u[0] - float(u[1:] @ u[1:])


def _soc_sqrt(u: np.ndarray) -> np.ndarray:
    det = _soc_det(u)
    gamma = math.sqrt(max(det, 0.0))
    t = math.sqrt(max((u[0] + gamma) / 2.0, 1e-300))
    out = np.empty_like(u)
    out[0] = t
    out[1:] = u[1:] / (2.0 * t)
    return out


def _soc_inv(u: np.ndarray) -> np.ndarray:
    det = _soc_det(u)
    out = np.empty_like(u)
    out[0] = u[0] / det
    out[1:] = -u[1:] / det
    return out


def _soc_quad_rep(u: np.ndarray) -> np.ndarray:
    """P(u) = 2 u u' - det(u) J as a dense matrix."""
    n = len(u)
    J = -np.eye(n)
    J[0, 0] = 1.0
    return 2.0 * np.outer(u, u) - _soc_det(u) * J


def _soc_jprod(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    out = np.empty_like(u)
    out[0] = float(u @ v)
    out[1:] = u[0] * v[1:] + v[0] * u[1:]
    return out


def _soc_max_step(u: np.ndarray, du: np.ndarray) -> float:
    """sup alpha such that u + alpha*du stays in the second-order cone."""
    best = math.inf
    if du[0] < 0:
        best = -u[0] / du[0]
    a = _soc_det(du)
    bq = 2.0 * (u[0] * du[0] - float(u[1:] @ du[1:]))
    cq = _soc_det(u)
    # smallest positive root of a t^2 + bq t + cq = 0 (cq > 0 in the interior)
    roots = []
    if abs(a) < 1e-300:
        if bq < 0:
            roots.append(-cq / bq)
    else:
        disc = bq * bq - 4.0 * a * cq
        if disc >= 0:
            sq = math.sqrt(disc)
            for r in ((-bq - sq) / (2 * a), (-bq + sq) / (2 * a)):
                if r > 0:
                    roots.append(r)
    for r in roots:
        best = min(best, r)
    return best


def _symkron(G: np.ndarray) -> np.ndarray:
    """Matrix of the map svec(M) -> svec(G M G') for symmetric G."""
    side = G.shape[0]
    pairs = svec_indices(side)
    dim = len(pairs)
    out = np.empty((dim, dim))
    for col, (i, j) in enumerate(pairs):
        E = np.zeros((side, side))
        if i == j:
            E[i, i] = 1.0
        else:
            E[i, j] = E[j, i] = 1.0 / _SQRT2
        out[:, col] = svec(G @ E @ G.T)
    return out


def _psd_arrow(lam_mat: np.ndarray) -> np.ndarray:
    """Matrix of the map svec(M) -> svec((lam M + M lam)/2)."""
    side = lam_mat.shape[0]
    pairs = svec_indices(side)
    dim = len(pairs)
    out = np.empty((dim, dim))
    for col, (i, j) in enumerate(pairs):
        E = np.zeros((side, side))
        if i == j:
            E[i, i] = 1.0
        else:
            E[i, j] = E[j, i] = 1.0 / _SQRT2
        out[:, col] = svec(0.5 * (lam_mat @ E + E @ lam_mat))
    return out


def _sym_inv_sqrt(M: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(M^{1/2}, M^{-1/2}) for symmetric positive definite M."""
    w, V = np.linalg.eigh(0.5 * (M + M.T))
    if w.min() <= 0:
        raise np.linalg.LinAlgError("matrix not positive definite")
    rt = V @ np.diag(np.sqrt(w)) @ V.T
    irt = V @ np.diag(1.0 / np.sqrt(w)) @ V.T
    return rt, irt


class _BlockScaling:
    """NT scaling data for one proper cone block.

    Provides the dense operators E_x = Arw(lam) Theta and
    E_s = Arw(lam) Theta^{-1} of the linearized scaled complementarity
    Arw(lam) (Theta dx + Theta^{-1} ds) = rhs, plus the pieces needed for the
    Mehrotra corrector.
    """

    def __init__(self, blk: ConeBlock, x: np.ndarray, s: np.ndarray):
        self.kind = blk.kind
        if blk.kind == "nonneg":
            self.lam = np.sqrt(x * s)
            g = np.sqrt(s / x)
            self.theta = g
            self.Ex = np.diag(s)
            self.Es = np.diag(x)
        elif blk.kind == "soc":
            q = _soc_sqrt(x)
            Pq = _soc_quad_rep(q)
            v = Pq @ s
            w = Pq @ _soc_inv(_soc_sqrt(v))
            wh = _soc_sqrt(w)
            self.theta_mat = _soc_quad_rep(_soc_inv(wh))
            self.theta_inv_mat = _soc_quad_rep(wh)
            self.lam = self.theta_mat @ x
            n = len(x)
            arrow = np.zeros((n, n))
            arrow[0, :] = self.lam
            arrow[:, 0] = self.lam
            arrow[np.arange(1, n), np.arange(1, n)] = self.lam[0]
            self.Ex = arrow @ self.theta_mat
            self.Es = arrow @ self.theta_inv_mat
        elif blk.kind == "psd":
            X = smat(x)
            S = smat(s)
            Lx = np.linalg.cholesky(X)
            M = Lx.T @ S @ Lx
            Mrt, Mirt = _sym_inv_sqrt(M)
            Wp = Lx @ Mirt @ Lx.T  # NT point: Wp S Wp = X
            _, G = _sym_inv_sqrt(0.5 * (Wp + Wp.T))
            self.G = G
            self.Ginv = np.linalg.inv(G)
            self.lam_mat = G @ X @ G
            self.lam_mat = 0.5 * (self.lam_mat + self.lam_mat.T)
            self.theta_mat = _symkron(G)
            self.theta_inv_mat = _symkron(self.Ginv)
            arrow = _psd_arrow(self.lam_mat)
            self.lam = svec(self.lam_mat)
            self.Ex = arrow @ self.theta_mat
            self.Es = arrow @ self.theta_inv_mat
        else:  # pragma: no cover - free blocks never build scalings
            raise ValueError("free blocks have no scaling")

    def lam_sq(self) -> np.ndarray:
        if self.kind == "nonneg":
            return self.lam * self.lam
        if self.kind == "soc":
            return _soc_jprod(self.lam, self.lam)
        return svec(self.lam_mat @ self.lam_mat)

    def identity(self) -> np.ndarray:
        n = len(self.lam)
        if self.kind == "nonneg":
            return np.ones(n)
        if self.kind == "soc":
            e = np.zeros(n)
            e[0] = 1.0
            return e
        side = smat(self.lam).shape[0]
        return svec(np.eye(side))

    def corrector(self, dx: np.ndarray, ds: np.ndarray) -> np.ndarray:
        """(Theta dx) o (Theta^{-1} ds) in the block's Jordan algebra."""
        if self.kind == "nonneg":
            return (self.theta * dx) * (ds / self.theta)
        if self.kind == "soc":
            return _soc_jprod(self.theta_mat @ dx, self.theta_inv_mat @ ds)
        A = smat(self.theta_mat @ dx)
        B = smat(self.theta_inv_mat @ ds)
        return svec(0.5 * (A @ B + B @ A))


def _block_identity(blk: ConeBlock) -> np.ndarray:
    if blk.kind == "free":
        return np.zeros(blk.size)
    if blk.kind == "nonneg":
        return np.ones(blk.size)
    if blk.kind == "soc":
        e = np.zeros(blk.size)
        e[0] = 1.0
        return e
    return svec(np.eye(blk.size))


def _block_max_step(blk: ConeBlock, v: np.ndarray, dv: np.ndarray) -> float:
    if blk.kind == "free":
        return math.inf
    if blk.kind == "nonneg":
        neg = dv < 0
        if not neg.any():
            return math.inf
        return float(np.min(-v[neg] / dv[neg]))
    if blk.kind == "soc":
        return _soc_max_step(v, dv)
    X = smat(v)
    dX = smat(dv)
    try:
        L = np.linalg.cholesky(X)
    except np.linalg.LinAlgError:
        return 0.0
    Linv_dX = scipy.linalg.solve_triangular(L, dX, lower=True)
    W = scipy.linalg.solve_triangular(L, Linv_dX.T, lower=True)
    wmin = float(np.linalg.eigvalsh(0.5 * (W + W.T)).min())
    if wmin >= 0:
        return math.inf
    return -1.0 / wmin


# ---------------------------------------------------------------------------
# presolve: drop numerically dependent equality rows
# ---------------------------------------------------------------------------


@dataclass
class _Presolve:
    A: np.ndarray
    b: np.ndarray
    keep: np.ndarray
    scale: np.ndarray
    m_orig: int
    infeasible_certificate: np.ndarray | None = None
    cert_residual: float | None = None

    def inflate_dual(self, y_red: np.ndarray) -> np.ndarray:
        y = np.zeros(self.m_orig)
        y[self.keep] = self.scale * y_red
        return y


def _presolve(A: np.ndarray, b: np.ndarray, drop_tol: float = 1e-10) -> _Presolve:
    m = A.shape[0]
    if m == 0:
        return _Presolve(A, b, np.arange(0), np.zeros(0), 0)
    norms = np.max(np.abs(A), axis=1)
    scale = 1.0 / np.where(norms > 0, norms, 1.0)
    As = A * scale[:, None]
    bs = b * scale
    # pivoted QR of As' selects a maximal independent row set
    _, R, piv = scipy.linalg.qr(As.T, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    ref = diag[0] if len(diag) and diag[0] > 0 else 1.0
    rank = int(np.sum(diag > drop_tol * ref))
    keep = np.sort(piv[:rank])
    drop = np.sort(piv[rank:])
    Ak, bk = As[keep], bs[keep]
    pre = _Presolve(Ak, bk, keep, scale[keep], m)
    if len(drop):
        # dropped rows must be consistent: A_drop = C A_keep, b_drop = C b_keep
        C, *_ = np.linalg.lstsq(Ak.T, As[drop].T, rcond=None)
        resid = bs[drop] - C.T @ bk
        worst = int(np.argmax(np.abs(resid)))
        if abs(resid[worst]) > 1e-8 * (1.0 + np.max(np.abs(bs))):
            y = np.zeros(m)
            y[drop[worst]] = scale[drop[worst]]
            y[keep] -= C[:, worst] * scale[keep]
            sgn = math.copysign(1.0, b @ y)
            y *= sgn / abs(b @ y)
            pre.infeasible_certificate = y
            pre.cert_residual = float(
                np.max(np.abs(A.T @ y)) / (1.0 + np.max(np.abs(A)))
            )
    return pre


# ---------------------------------------------------------------------------
# main solve loop
# ---------------------------------------------------------------------------


def solve(program: ConicProgram, options: SolverOptions | None = None) -> SolverSolution:
    """Run the homogeneous self-dual interior-point method on ``program``."""
    opts = options or SolverOptions()
    cones = program.cones
    slices = program.block_slices()
    N = program.dimension
    c = program.c.copy()

    pre = _presolve(program.A, program.b)
    if pre.infeasible_certificate is not None and pre.cert_residual <= opts.tol_cert:
        y = pre.infeasible_certificate
        return SolverSolution(
            status=SolverStatus.PRIMAL_INFEASIBLE,
            x=np.zeros(N),
            y=y,
            s=np.zeros(N),
            primal_objective=math.nan,
            dual_objective=math.nan,
            residuals={"primal": math.inf, "dual": math.inf, "gap": math.inf},
            iterations=0,
            cones=list(cones),
            certificate=y,
            cert_residual=pre.cert_residual,
        )
    A, b = pre.A, pre.b
    m = A.shape[0]

    proper = [i for i, blk in enumerate(cones) if blk.kind != "free"]
    free = [i for i, blk in enumerate(cones) if blk.kind == "free"]
    nu = sum(cones[i].barrier_rank for i in proper)

    x = np.concatenate([_block_identity(blk) for blk in cones]) if cones else np.zeros(0)
    s = x.copy()
    y = np.zeros(m)
    tau, kappa = 1.0, 1.0

    normb = 1.0 + np.linalg.norm(b)
    normc = 1.0 + np.linalg.norm(c)
    maxA = 1.0 + (np.max(np.abs(A)) if A.size else 0.0)

    nsys = 2 * N + m + 2
    ix = slice(0, N)
    iy = slice(N, N + m)
    isl = slice(N + m, 2 * N + m)
    itau = 2 * N + m
    ikap = 2 * N + m + 1

    iterates: list[dict] = []
    status = SolverStatus.ITER_LIMIT
    certificate = None
    cert_residual = None
    it = 0

    def finish(st, xx, yy, ss, res, cert=None, cres=None):
        pobj = float(c @ xx)
        dobj = float(b @ yy) if m else 0.0
        return SolverSolution(
            status=st,
            x=xx,
            y=pre.inflate_dual(yy),
            s=ss,
            primal_objective=pobj,
            dual_objective=dobj,
            residuals=res,
            iterations=it,
            cones=list(cones),
            certificate=cert,
            cert_residual=cres,
            iterates=iterates,
        )

    last_res = {"primal": math.inf, "dual": math.inf, "gap": math.inf}
    for it in range(1, opts.max_iter + 1):
        rp = A @ x - b * tau
        rd = -A.T @ y + c * tau - s
        rg = float(b @ y - c @ x - kappa)
        mu = (float(x @ s) + tau * kappa) / (nu + 1)

        xh, yh, sh = x / tau, y / tau, s / tau
        pres = float(np.linalg.norm(A @ xh - b) / normb)
        dres = float(np.linalg.norm(A.T @ yh + sh - c) / normc)
        pobj, dobj = float(c @ xh), float(b @ yh)
        relgap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
        last_res = {"primal": pres, "dual": dres, "gap": relgap}
        iterates.append(
            {
                "primal_objective": pobj,
                "dual_objective": dobj,
                "primal_residual": pres,
                "dual_residual": dres,
                "gap": relgap,
                "mu": mu,
                "tau": tau,
                "kappa": kappa,
                "rg": rg,
            }
        )
        if opts.verbose:
            print(
                f"  it {it:3d}  mu {mu:9.2e}  pres {pres:9.2e}  "
                f"dres {dres:9.2e}  gap {relgap:9.2e}  tau {tau:8.2e}"
            )

        if max(pres, dres, relgap) <= opts.tol:
            return finish(SolverStatus.OPTIMAL, xh, yh, sh, last_res)

        bty = float(b @ y) if m else 0.0
        if bty > 1e-12:
            ycert, scert = y / bty, s / bty
            rcert = float(np.max(np.abs(A.T @ ycert + scert), initial=0.0) / maxA)
            if rcert <= opts.tol_cert and tau <= 1e-3 * max(1.0, kappa):
                return finish(
                    SolverStatus.PRIMAL_INFEASIBLE,
                    np.zeros(N),
                    ycert,
                    scert,
                    last_res,
                    cert=pre.inflate_dual(ycert),
                    cres=rcert,
                )
        ctx = float(c @ x)
        if ctx < -1e-12:
            xcert = x / (-ctx)
            rcert = float(np.max(np.abs(A @ xcert), initial=0.0) / maxA)
            if rcert <= opts.tol_cert and tau <= 1e-3 * max(1.0, kappa):
                return finish(
                    SolverStatus.DUAL_INFEASIBLE,
                    xcert,
                    np.zeros(m),
                    np.zeros(N),
                    last_res,
                    cert=xcert,
                    cres=rcert,
                )

        # --- NT scalings and KKT assembly -------------------------------
        try:
            scalings = {
                i: _BlockScaling(cones[i], x[slices[i]], s[slices[i]]) for i in proper
            }
        except np.linalg.LinAlgError:
            return finish(SolverStatus.NUMERICAL_FAILURE, xh, yh, sh, last_res)

        M = np.zeros((nsys, nsys))
        r1 = slice(0, m)
        r2 = slice(m, m + N)
        r3 = m + N
        r4 = slice(m + N + 1, m + 2 * N + 1)
        r5 = m + 2 * N + 1

        M[r1, ix] = A
        M[r1, itau] = -b
        M[r2, iy] = -A.T
        M[r2, isl] = -np.eye(N)
        M[r2, itau] = c
        M[r3, ix] = -c
        M[r3, iy] = b
        M[r3, ikap] = -1.0
        for i, blk in enumerate(cones):
            rows = slice(m + N + 1 + slices[i].start, m + N + 1 + slices[i].stop)
            if blk.kind == "free":
                M[rows, slices[i].start + N + m : slices[i].stop + N + m] = np.eye(
                    blk.length
                )
            else:
                sc = scalings[i]
                M[rows, slices[i]] = sc.Ex
                M[rows, slices[i].start + N + m : slices[i].stop + N + m] = sc.Es
        M[r5, itau] = kappa
        M[r5, ikap] = tau

        try:
            lu, piv = scipy.linalg.lu_factor(M)
        except (np.linalg.LinAlgError, ValueError):
            return finish(SolverStatus.NUMERICAL_FAILURE, xh, yh, sh, last_res)

        def newton(eta: float, cent: dict[int, np.ndarray], cent_tau: float):
            rhs = np.zeros(nsys)
            rhs[r1] = -eta * rp
            rhs[r2] = -eta * rd
            rhs[r3] = -eta * rg
            for i, blk in enumerate(cones):
                rows = slice(m + N + 1 + slices[i].start, m + N + 1 + slices[i].stop)
                if blk.kind == "free":
                    rhs[rows] = -s[slices[i]]
                else:
                    rhs[rows] = cent[i]
            rhs[r5] = cent_tau
            d = scipy.linalg.lu_solve((lu, piv), rhs)
            return d[ix], d[iy], d[isl], d[itau], d[ikap]

        def boundary(dx, ds, dtau, dkappa):
            amax = math.inf
            for i in proper:
                amax = min(amax, _block_max_step(cones[i], x[slices[i]], dx[slices[i]]))
                amax = min(amax, _block_max_step(cones[i], s[slices[i]], ds[slices[i]]))
            if dtau < 0:
                amax = min(amax, -tau / dtau)
            if dkappa < 0:
                amax = min(amax, -kappa / dkappa)
            return amax

        cent_aff = {i: -scalings[i].lam_sq() for i in proper}
        try:
            dxa, dya, dsa, dta, dka = newton(1.0, cent_aff, -tau * kappa)
        except ValueError:
            return finish(SolverStatus.NUMERICAL_FAILURE, xh, yh, sh, last_res)
        if not np.all(np.isfinite(dxa)):
            return finish(SolverStatus.NUMERICAL_FAILURE, xh, yh, sh, last_res)

        a_aff = min(1.0, boundary(dxa, dsa, dta, dka))
        mu_aff = (
            float((x + a_aff * dxa) @ (s + a_aff * dsa))
            + (tau + a_aff * dta) * (kappa + a_aff * dka)
        ) / (nu + 1)
        sigma = min(1.0, max(0.0, mu_aff / mu)) ** 3

        cent = {}
        for i in proper:
            sc = scalings[i]
            cent[i] = (
                sigma * mu * sc.identity()
                - sc.lam_sq()
                - sc.corrector(dxa[slices[i]], dsa[slices[i]])
            )
        cent_tau = sigma * mu - tau * kappa - dta * dka
        dx, dy, ds, dt, dk = newton(1.0 - sigma, cent, cent_tau)
        if not np.all(np.isfinite(dx)):
            return finish(SolverStatus.NUMERICAL_FAILURE, xh, yh, sh, last_res)

        eta = min(0.9999, max(0.99, 1.0 - 10.0 * mu))
        alpha = min(1.0, eta * boundary(dx, ds, dt, dk))
        if alpha <= 1e-13:
            return finish(SolverStatus.NUMERICAL_FAILURE, xh, yh, sh, last_res)

        x = x + alpha * dx
        y = y + alpha * dy
        s = s + alpha * ds
        tau += alpha * dt
        kappa += alpha * dk

    xh, yh, sh = x / tau, y / tau, s / tau
    return finish(SolverStatus.ITER_LIMIT, xh, yh, sh, last_res)
