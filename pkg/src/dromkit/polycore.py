"""Sparse multivariate polynomials over a graded-lexicographic monomial order.

Every module in this package indexes monomials the same way: grade-major,
lexicographic within a grade with the first variable dominant, so position 0
is the constant monomial and positions 1..n are the plain variables.  All
matrix and vector indexing downstream inherits this single order.
"""

from __future__ import annotations

import math
from functools import lru_cache
from typing import Iterable, Iterator, Mapping

import numpy as np

Exponent = tuple[int, ...]


class DegreeError(ValueError):
    """A monomial or polynomial exceeds the degree bound of its context."""


class VariableCountError(ValueError):
    """Operands disagree on the number of indeterminates."""


def basis_size(nvars: int, degree: int) -> int:
    """Number of monomials in nvars variables of total degree <= degree."""
    return math.comb(nvars + degree, degree)


def _grlex_exponents(nvars: int, degree: int) -> list[Exponent]:
    out: list[Exponent] = []

    def fill(prefix: Exponent, remaining: int, total: int) -> None:
        if remaining == 1:
            out.append(prefix + (total,))
            return
        for head in range(total, -1, -1):
            fill(prefix + (head,), remaining - 1, total - head)

    for total in range(degree + 1):
        fill((), nvars, total)
    return out


class MonomialBasis:
    """The graded-lex enumeration of all exponents alpha with |alpha| <= degree."""

    __slots__ = ("nvars", "degree", "exponents", "_index")

    def __init__(self, nvars: int, degree: int):
        if nvars < 1:
            raise VariableCountError(f"need at least one variable, got {nvars}")
        if degree < 0:
            raise DegreeError(f"degree bound must be nonnegative, got {degree}")
        self.nvars = nvars
        self.degree = degree
        self.exponents: tuple[Exponent, ...] = tuple(_grlex_exponents(nvars, degree))
        self._index: dict[Exponent, int] = {a: i for i, a in enumerate(self.exponents)}

    def __len__(self) -> int:
        return len(self.exponents)

    def __iter__(self) -> Iterator[Exponent]:
        return iter(self.exponents)

    def __getitem__(self, pos: int) -> Exponent:
        return self.exponents[pos]

    def position(self, alpha: Iterable[int]) -> int:
        alpha = tuple(alpha)
        pos = self._index.get(alpha)
        if pos is None:
            if len(alpha) != self.nvars:
                raise VariableCountError(
                    f"exponent has {len(alpha)} entries, basis has {self.nvars} variables"
                )
            raise DegreeError(
                f"exponent {alpha} has degree {sum(alpha)} > bound {self.degree}"
            )
        return pos

    def __repr__(self) -> str:
        return f"MonomialBasis(nvars={self.nvars}, degree={self.degree}, size={len(self)})"


@lru_cache(maxsize=None)
def basis(nvars: int, degree: int) -> MonomialBasis:
    """Cached graded-lex basis of ``nvars`` variables up to ``degree``."""
    return MonomialBasis(nvars, degree)


def monomial_index(b: MonomialBasis, alpha: Iterable[int]) -> int:
    """Position of alpha in the graded-lex order; inverse of enumeration."""
    return b.position(alpha)


class Poly:
    """Sparse polynomial with real coefficients.

    Stored as a map exponent -> coefficient; coefficients that are exactly
    zero are never kept.  The zero polynomial has degree 0 by convention.
    Instances are immutable by convention: all operations return new objects.
    """

    __slots__ = ("nvars", "coeffs")

    def __init__(self, nvars: int, coeffs: Mapping[Exponent, float] | None = None):
        if nvars < 1:
            raise VariableCountError(f"need at least one variable, got {nvars}")
        self.nvars = nvars
        clean: dict[Exponent, float] = {}
        if coeffs:
            for alpha, c in coeffs.items():
                alpha = tuple(int(a) for a in alpha)
                if len(alpha) != nvars:
                    raise VariableCountError(
                        f"exponent {alpha} does not have {nvars} entries"
                    )
                if any(a < 0 for a in alpha):
                    raise ValueError(f"negative exponent in {alpha}")
                c = float(c)
                if c != 0.0:
                    clean[alpha] = clean.get(alpha, 0.0) + c
                    if clean[alpha] == 0.0:
                        del clean[alpha]
        self.coeffs = clean

    # -- constructors ------------------------------------------------

    @classmethod
    def zero(cls, nvars: int) -> "Poly":
        return cls(nvars)

    @classmethod
    def constant(cls, nvars: int, value: float) -> "Poly":
        return cls(nvars, {(0,) * nvars: value})

    @classmethod
    def variable(cls, nvars: int, i: int) -> "Poly":
        """The monomial x_i (0-based index)."""
        if not 0 <= i < nvars:
            raise VariableCountError(f"variable index {i} out of range for {nvars}")
        e = [0] * nvars
        e[i] = 1
        return cls(nvars, {tuple(e): 1.0})

    @classmethod
    def monomial(cls, nvars: int, alpha: Iterable[int], coeff: float = 1.0) -> "Poly":
        return cls(nvars, {tuple(alpha): coeff})

    @classmethod
    def from_terms(cls, nvars: int, terms: Iterable[tuple[Iterable[int], float]]) -> "Poly":
        acc: dict[Exponent, float] = {}
        for alpha, c in terms:
            key = tuple(alpha)
            acc[key] = acc.get(key, 0.0) + float(c)
        return cls(nvars, acc)

    # -- basic queries -----------------------------------------------

    @property
    def degree(self) -> int:
        if not self.coeffs:
            return 0
        return max(sum(a) for a in self.coeffs)

    def coefficient(self, alpha: Iterable[int]) -> float:
        return self.coeffs.get(tuple(alpha), 0.0)

    def terms(self) -> Iterator[tuple[Exponent, float]]:
        return iter(self.coeffs.items())

    def is_zero(self) -> bool:
        return not self.coeffs

    def coefficient_vector(self, b: MonomialBasis) -> np.ndarray:
        """Dense coefficient vector in the given basis; raises on overflow."""
        if b.nvars != self.nvars:
            raise VariableCountError("basis variable count mismatch")
        v = np.zeros(len(b))
        for alpha, c in self.coeffs.items():
            v[b.position(alpha)] = c
        return v

    # -- arithmetic ---------------------------------------------------

    def _check(self, other: "Poly") -> None:
        if self.nvars != other.nvars:
            raise VariableCountError(
                f"operand variable counts differ: {self.nvars} vs {other.nvars}"
            )

    def __add__(self, other: "Poly | float | int") -> "Poly":
        if isinstance(other, (int, float)):
            other = Poly.constant(self.nvars, other)
        self._check(other)
        acc = dict(self.coeffs)
        for alpha, c in other.coeffs.items():
            acc[alpha] = acc.get(alpha, 0.0) + c
        return Poly(self.nvars, acc)

    __radd__ = __add__

    def __sub__(self, other: "Poly | float | int") -> "Poly":
        return self + (-other if isinstance(other, Poly) else -float(other))

    def __rsub__(self, other: float | int) -> "Poly":
        return (-self) + float(other)

    def __neg__(self) -> "Poly":
        return Poly(self.nvars, {a: -c for a, c in self.coeffs.items()})

    def __mul__(self, other: "Poly | float | int") -> "Poly":
        if isinstance(other, (int, float)):
            return self.scale(float(other))
        self._check(other)
        acc: dict[Exponent, float] = {}
        for a1, c1 in self.coeffs.items():
            for a2, c2 in other.coeffs.items():
                key = tuple(e1 + e2 for e1, e2 in zip(a1, a2))
                acc[key] = acc.get(key, 0.0) + c1 * c2
        return Poly(self.nvars, acc)

    __rmul__ = __mul__

    def scale(self, factor: float) -> "Poly":
        return Poly(self.nvars, {a: factor * c for a, c in self.coeffs.items()})

    def __pow__(self, power: int) -> "Poly":
        if power < 0:
            raise ValueError("negative powers are not supported")
        out = Poly.constant(self.nvars, 1.0)
        for _ in range(power):
            out = out * self
        return out

    def __call__(self, point: Iterable[float]) -> float:
        pt = np.asarray(list(point), dtype=float)
        if pt.shape != (self.nvars,):
            raise VariableCountError(
                f"evaluation point has shape {pt.shape}, expected ({self.nvars},)"
            )
        total = 0.0
        for alpha, c in self.coeffs.items():
            term = c
            for x, a in zip(pt, alpha):
                if a:
                    term *= x**a
            total += term
        return total

    def diff(self, i: int) -> "Poly":
        """Partial derivative with respect to x_i."""
        if not 0 <= i < self.nvars:
            raise VariableCountError(f"variable index {i} out of range")
        acc: dict[Exponent, float] = {}
        for alpha, c in self.coeffs.items():
            if alpha[i] == 0:
                continue
            down = list(alpha)
            down[i] -= 1
            acc[tuple(down)] = acc.get(tuple(down), 0.0) + c * alpha[i]
        return Poly(self.nvars, acc)

    # -- comparison / display ------------------------------------------

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Poly):
            return NotImplemented
        return self.nvars == other.nvars and self.coeffs == other.coeffs

    def __hash__(self) -> int:
        return hash((self.nvars, frozenset(self.coeffs.items())))

    def allclose(self, other: "Poly", tol: float = 1e-12) -> bool:
        self._check(other)
        keys = set(self.coeffs) | set(other.coeffs)
        return all(
            abs(self.coeffs.get(k, 0.0) - other.coeffs.get(k, 0.0)) <= tol for k in keys
        )

    def max_coeff_diff(self, other: "Poly") -> float:
        self._check(other)
        keys = set(self.coeffs) | set(other.coeffs)
        if not keys:
            return 0.0
        return max(abs(self.coeffs.get(k, 0.0) - other.coeffs.get(k, 0.0)) for k in keys)

    def __repr__(self) -> str:
        if not self.coeffs:
            return "0"
        parts = []
        order = sorted(self.coeffs, key=lambda a: (sum(a), tuple(-e for e in a)))
        for alpha in order:
            c = self.coeffs[alpha]
            mono = "*".join(
                f"x{i + 1}" + (f"^{a}" if a > 1 else "")
                for i, a in enumerate(alpha)
                if a
            )
            parts.append(f"{c:g}" + (f"*{mono}" if mono else ""))
        return " + ".join(parts).replace("+ -", "- ")


def hessian(f: Poly) -> list[list[Poly]]:
    """Second-derivative matrix of f; symmetric entry by entry."""
    n = f.nvars
    grad = [f.diff(i) for i in range(n)]
    out = [[Poly.zero(n) for _ in range(n)] for _ in range(n)]
    for i in range(n):
        for j in range(i, n):
            entry = grad[i].diff(j)
            out[i][j] = entry
            out[j][i] = entry
    return out


def gradient(f: Poly) -> list[Poly]:
    return [f.diff(i) for i in range(f.nvars)]


def riesz_pair(q: Poly, z) -> float:
    """Pairing <q, z> = sum_alpha q_alpha * z_alpha against a moment sequence.

    ``z`` is any truncated moment sequence exposing ``nvars``, ``degree`` and
    ``values`` in graded-lex order (see momentkit.Tms).
    """
    if q.nvars != z.nvars:
        raise VariableCountError(
            f"polynomial has {q.nvars} variables, sequence has {z.nvars}"
        )
    if q.degree > z.degree:
        raise DegreeError(
            f"polynomial degree {q.degree} exceeds sequence degree {z.degree}"
        )
    b = basis(z.nvars, z.degree)
    values = z.values
    return float(sum(c * values[b.position(alpha)] for alpha, c in q.coeffs.items()))
