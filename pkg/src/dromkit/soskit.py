"""Sum-of-squares compilation: Gram blocks plus coefficient matching.

Turns memberships in truncated quadratic modules into conic constraint
blocks, decides SOS-convexity through the lifted quadratic-form test, and
generates the seeded generic SOS objectives used by the moment completion
step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import conesolve
from .conesolve import ProgramBuilder, SolverOptions, SolverStatus
from .polycore import (
    DegreeError,
    Exponent,
    Poly,
    VariableCountError,
    basis,
    hessian,
)

GRAM_PSD_TOL = 1e-8
REASSEMBLY_TOL = 1e-6


class SosCheckInconclusive(RuntimeError):
    """The backing solver could not decide the membership either way."""


@dataclass(frozen=True)
class QuadraticModuleSpec:
    """Truncated quadratic module generated by (1, c_1, ..., c_m).

    The unit generator always comes first with multiplier degree equal to the
    total degree; generator i gets the truncation degree
    2*(d1 - ceil(deg(c_i)/2)), unless overridden per generator.
    """

    nvars: int
    generators: tuple[Poly, ...]
    total_degree: int
    multiplier_degrees: tuple[int, ...]

    def __post_init__(self):
        if self.total_degree % 2 != 0 or self.total_degree < 0:
            raise DegreeError(f"total degree must be even, got {self.total_degree}")
        if not self.generators or not self.generators[0].allclose(
            Poly.constant(self.nvars, 1.0)
        ):
            raise ValueError("the unit generator must come first")
        if self.multiplier_degrees[0] != self.total_degree:
            raise ValueError("unit multiplier degree must equal the total degree")
        for g, md in zip(self.generators, self.multiplier_degrees):
            if md < 0 or md % 2 != 0:
                raise DegreeError(f"multiplier degree {md} must be even nonnegative")
            if g.nvars != self.nvars:
                raise VariableCountError("generator variable count mismatch")

    @classmethod
    def build(
        cls,
        nvars: int,
        constraints: tuple[Poly, ...] = (),
        total_degree: int = 2,
        overrides: dict[int, int] | None = None,
    ) -> "QuadraticModuleSpec":
        gens = (Poly.constant(nvars, 1.0),) + tuple(constraints)
        mds = [total_degree]
        for i, c in enumerate(constraints):
            md = 2 * (total_degree // 2 - math.ceil(c.degree / 2))
            if overrides and i in overrides:
                md = overrides[i]
            mds.append(max(md, 0))
        return cls(nvars, gens, total_degree, tuple(mds))

    def gram_sides(self) -> list[int]:
        return [
            len(basis(self.nvars, md // 2)) for md in self.multiplier_degrees
        ]


@dataclass
class GramCertificate:
    """Witness blocks for a quadratic-module membership."""

    qm: QuadraticModuleSpec
    blocks: list[np.ndarray]

    def reassemble(self) -> Poly:
        """Sum of c_i * [x]' G_i [x] over all generators."""
        out = Poly.zero(self.qm.nvars)
        for gen, md, G in zip(
            self.qm.generators, self.qm.multiplier_degrees, self.blocks
        ):
            monos = basis(self.qm.nvars, md // 2)
            sigma = Poly.zero(self.qm.nvars)
            for i, a in enumerate(monos):
                for j, b in enumerate(monos):
                    coeff = G[i, j]
                    if coeff != 0.0:
                        sigma = sigma + Poly.monomial(
                            self.qm.nvars,
                            tuple(x + y for x, y in zip(a, b)),
                            coeff,
                        )
            out = out + gen * sigma
        return out

    def min_eigenvalue(self) -> float:
        return min(float(np.linalg.eigvalsh(G).min()) for G in self.blocks)


@dataclass(frozen=True)
class AffinePoly:
    """Polynomial whose coefficients are affine in a parameter vector.

    target(x; theta) = const(x) + sum_j theta_j * linear[j](x).
    """

    nvars: int
    nparams: int
    const: Poly
    linear: dict[int, Poly]

    def __post_init__(self):
        if self.const.nvars != self.nvars:
            raise VariableCountError("constant part variable count mismatch")
        for j, pol in self.linear.items():
            if not 0 <= j < self.nparams:
                raise ValueError(f"parameter index {j} out of range")
            if pol.nvars != self.nvars:
                raise VariableCountError("linear part variable count mismatch")

    @classmethod
    def fixed(cls, poly: Poly) -> "AffinePoly":
        return cls(poly.nvars, 0, poly, {})

    @property
    def degree(self) -> int:
        d = self.const.degree
        for pol in self.linear.values():
            d = max(d, pol.degree)
        return d

    def at(self, theta: np.ndarray) -> Poly:
        out = self.const
        for j, pol in self.linear.items():
            if theta[j] != 0.0:
                out = out + pol.scale(float(theta[j]))
        return out


def gram_expansion_rows(
    weight: Poly,
    monos: list[Exponent],
    row_index: dict[Exponent, int],
    nrows: int,
) -> np.ndarray:
    """Coefficients of weight * [m]' G [m] as linear functions of svec(G).

    Row r is the coefficient of the r-th monomial; off-diagonal svec slots
    carry the sqrt(2) convention of the conic solver.
    """
    dim = len(monos)
    out = np.zeros((nrows, dim * (dim + 1) // 2))
    col = 0
    for i in range(dim):
        for j in range(i, dim):
            pair_scale = 1.0 if i == j else math.sqrt(2.0)
            for eta, cw in weight.coeffs.items():
                key = tuple(a + b + e for a, b, e in zip(monos[i], monos[j], eta))
                r = row_index.get(key)
                if r is None:
                    raise DegreeError(
                        f"expansion monomial {key} falls outside the row basis"
                    )
                out[r, col] += pair_scale * cw
            col += 1
    return out


@dataclass
class QmMembership:
    """Compiled conic form of: target(x; theta) lies in the quadratic module.

    Semantics of the rows:  sum_i gram_rows[i] @ svec(G_i)  ==  rhs + param_rows @ theta,
    with every G_i constrained positive semidefinite (side-1 blocks are plain
    nonnegative scalars).
    """

    qm: QuadraticModuleSpec
    row_exponents: tuple[Exponent, ...]
    gram_rows: list[np.ndarray]
    param_rows: np.ndarray
    rhs: np.ndarray

    @property
    def nrows(self) -> int:
        return len(self.row_exponents)


def compile_qm_membership(target: AffinePoly, qm: QuadraticModuleSpec) -> QmMembership:
    """Emit Gram blocks and coefficient-matching equalities for the membership."""
    if target.nvars != qm.nvars:
        raise VariableCountError("target and module variable counts differ")
    if target.degree > qm.total_degree:
        raise DegreeError(
            f"target degree {target.degree} exceeds module degree {qm.total_degree}"
        )
    rows_basis = basis(qm.nvars, qm.total_degree)
    row_index = {a: i for i, a in enumerate(rows_basis.exponents)}
    nrows = len(rows_basis)

    gram_rows = []
    for gen, md in zip(qm.generators, qm.multiplier_degrees):
        monos = list(basis(qm.nvars, md // 2).exponents)
        gram_rows.append(gram_expansion_rows(gen, monos, row_index, nrows))

    # rows read: sum_i gram_rows[i] svec(G_i) = rhs + param_rows theta,
    # i.e. the Gram expansion matches const + sum theta_j linear_j coefficientwise.
    rhs = target.const.coefficient_vector(rows_basis)
    param_rows = np.zeros((nrows, target.nparams))
    for j, pol in target.linear.items():
        param_rows[:, j] = pol.coefficient_vector(rows_basis)
    return QmMembership(qm, rows_basis.exponents, gram_rows, param_rows, rhs)


def sos_membership(
    target: Poly,
    qm: QuadraticModuleSpec,
    solver_options: SolverOptions | None = None,
) -> tuple[bool | None, GramCertificate | None]:
    """Feasibility of a fixed polynomial's membership in the module.

    Returns (True, certificate), (False, None) on a clean infeasibility
    certificate, or (None, None) when the solver cannot decide.
    """
    compiled = compile_qm_membership(AffinePoly.fixed(target), qm)
    builder = ProgramBuilder()
    block_cols = []
    block_idx = []
    for side, rowmat in zip(qm.gram_sides(), compiled.gram_rows):
        kind = "nonneg" if side == 1 else "psd"
        idx, cols = builder.add_cone(kind, side)
        block_cols.append(cols)
        block_idx.append(idx)
    rows = builder.add_rows(compiled.nrows)
    for cols, rowmat in zip(block_cols, compiled.gram_rows):
        builder.set_entries(rows, cols, rowmat)
    builder.set_rhs(rows, compiled.rhs)
    program = builder.build()
    sol = conesolve.solve(program, solver_options or SolverOptions())

    if sol.status == SolverStatus.OPTIMAL:
        blocks = []
        for idx, side in zip(block_idx, qm.gram_sides()):
            if side == 1:
                blocks.append(np.array([[float(sol.x[block_cols[len(blocks)]][0])]]))
            else:
                blocks.append(sol.primal_block(idx))
        return True, GramCertificate(qm, blocks)
    if sol.status == SolverStatus.PRIMAL_INFEASIBLE:
        return False, None
    return None, None


def sos_convexity_check(
    f: Poly, solver_options: SolverOptions | None = None
) -> tuple[bool, GramCertificate | None]:
    """Decide whether the quadratic form y' H_f(x) y is a sum of squares.

    The lifted polynomial lives in (x, y); any SOS decomposition must be
    homogeneous of degree one in y, so the Gram basis is {x^a y_i} with
    |a| bounded by half the Hessian degree.  Raises SosCheckInconclusive on
    solver failure instead of silently reporting non-convexity.
    """
    n = f.nvars
    H = hessian(f)
    nv = 2 * n
    q = Poly.zero(nv)
    for i in range(n):
        for j in range(n):
            entry = H[i][j]
            if entry.is_zero():
                continue
            for alpha, cc in entry.coeffs.items():
                exp = tuple(alpha) + tuple(
                    (1 if t == i else 0) + (1 if t == j else 0) for t in range(n)
                )
                q = q + Poly.monomial(nv, exp, cc)
    if q.is_zero():
        return True, GramCertificate(
            QuadraticModuleSpec.build(nv, (), 2), [np.zeros((1, 1))]
        )

    sx = max(0, math.ceil((f.degree - 2) / 2))
    monos: list[Exponent] = []
    for a in basis(n, sx).exponents:
        for i in range(n):
            monos.append(tuple(a) + tuple(1 if t == i else 0 for t in range(n)))

    support: set[Exponent] = set(q.coeffs)
    for i, mi in enumerate(monos):
        for mj in monos[i:]:
            support.add(tuple(x + y for x, y in zip(mi, mj)))
    row_exps = sorted(support, key=lambda a: (sum(a), tuple(-e for e in a)))
    row_index = {a: r for r, a in enumerate(row_exps)}

    rowmat = gram_expansion_rows(Poly.constant(nv, 1.0), monos, row_index, len(row_exps))
    rhs = np.zeros(len(row_exps))
    for alpha, cc in q.coeffs.items():
        rhs[row_index[alpha]] = cc

    builder = ProgramBuilder()
    idx, cols = builder.add_cone("psd" if len(monos) > 1 else "nonneg", len(monos))
    rows = builder.add_rows(len(row_exps))
    builder.set_entries(rows, cols, rowmat)
    builder.set_rhs(rows, rhs)
    sol = conesolve.solve(builder.build(), solver_options or SolverOptions())

    if sol.status == SolverStatus.OPTIMAL:
        G = sol.primal_block(idx) if len(monos) > 1 else np.array([[float(sol.x[0])]])
        cert_qm = QuadraticModuleSpec(
            nvars=nv,
            generators=(Poly.constant(nv, 1.0),),
            total_degree=2 * (sx + 1),
            multiplier_degrees=(2 * (sx + 1),),
        )
        cert = GramCertificate(cert_qm, [G])
        # the certificate blocks are indexed by the reduced basis; reassemble here
        check = Poly.zero(nv)
        for i, mi in enumerate(monos):
            for j, mj in enumerate(monos):
                if G[i, j] != 0.0:
                    check = check + Poly.monomial(
                        nv, tuple(x + y for x, y in zip(mi, mj)), G[i, j]
                    )
        if check.max_coeff_diff(q) > REASSEMBLY_TOL * (1.0 + max(abs(v) for v in q.coeffs.values())):
            raise SosCheckInconclusive("certificate does not reassemble the Hessian form")
        return True, cert
    if sol.status == SolverStatus.PRIMAL_INFEASIBLE:
        return False, None
    raise SosCheckInconclusive(f"solver returned {sol.status.value}")


def random_sos(seed: int, p: int, t0: int) -> Poly:
    """Generic SOS polynomial [xi]' (Q'Q) [xi] of degree 2*t0 + 2.

    Q has independent standard normal entries from the seeded generator, so
    the result is SOS by construction and reproducible for a fixed seed.
    """
    if t0 < 0:
        raise DegreeError("half-degree must be nonnegative")
    monos = basis(p, t0 + 1)
    L = len(monos)
    rng = np.random.default_rng(seed)
    Q = rng.standard_normal((L, L))
    G = Q.T @ Q
    out = Poly.zero(p)
    acc: dict[Exponent, float] = {}
    for i, a in enumerate(monos):
        for j, b in enumerate(monos):
            key = tuple(x + y for x, y in zip(a, b))
            acc[key] = acc.get(key, 0.0) + G[i, j]
    return Poly(p, acc)
