"""Bivariate polynomial vector fields and the parabolic Hörmander rank test.

A diffusion driven by two Brownian motions through polynomial vector fields
reduces to monomial Stratonovich integrals once the fields satisfy the rank
test implemented here by `check_phc`.
"""

from dataclasses import dataclass
from dataclasses import field

import math
import numpy as np
import typing as t

Exponent = t.Tuple[int, int]


class DimensionMismatch(ValueError):
    """Two polynomial vectors that must share dim_out do not."""

    def __init__(self, left: int, right: int):
        super().__init__(f"Polynomial dimensions differ: {left} != {right}")
        self.left = left
        self.right = right


class PHCFailure(ValueError):
    """The rank test fails, so the reduction to monomial integrals is impossible."""

    def __init__(self, rank: int, required: int):
        super().__init__("Parabolic Hörmander condition fails")
        self.rank = rank
        self.required = required

    def __str__(self):
        """Stringer method."""
        return f"{super().__str__()} - rank {self.rank} < {self.required}"


class InconsistentStart(ValueError):
    """Σ·z = w₃ has no solution within tolerance."""

    def __init__(self, residual: float):
        super().__init__(f"Starting point is not reachable, residual {residual:.3e}")
        self.residual = residual


def _frozen(values: t.Iterable[float]) -> np.ndarray:
    array = np.array(values, dtype=float)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class BivariatePolyVec:
    """A (d-2)-vector of bivariate polynomials, stored sparsely by exponent.

    `coeffs[(l, m)]` is the vector coefficient of x1**l * x2**m. Missing keys
    are zero; construction drops exact-zero vectors so that two equal
    polynomials compare equal.
    """

    dim_out: int
    max_degree: int
    coeffs: t.Mapping[Exponent, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.dim_out < 1:
            raise ValueError(f"dim_out must be positive, got {self.dim_out}")
        if self.max_degree < 0:
            raise ValueError(f"max_degree must be non-negative, got {self.max_degree}")
        canonical = {}
        for (l, m), coef in sorted(self.coeffs.items()):
            vector = _frozen(coef)
            if vector.shape != (self.dim_out,):
                raise DimensionMismatch(self.dim_out, vector.size)
            if l < 0 or m < 0 or l + m > self.max_degree:
                raise ValueError(
                    f"Term ({l},{m}) exceeds max_degree {self.max_degree}"
                )
            if np.any(vector != 0.0):
                canonical[(int(l), int(m))] = vector
        object.__setattr__(self, "coeffs", canonical)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BivariatePolyVec):
            return NotImplemented
        return (
            self.dim_out == other.dim_out
            and self.coeffs.keys() == other.coeffs.keys()
            and all(np.array_equal(v, other.coeffs[k]) for k, v in self.coeffs.items())
        )

    def __hash__(self) -> int:
        return hash((self.dim_out, tuple((k, v.tobytes()) for k, v in self.coeffs.items())))

    @classmethod
    def zero(cls, dim_out: int, max_degree: int = 0) -> "BivariatePolyVec":
        return cls(dim_out, max_degree, {})

    @property
    def is_zero(self) -> bool:
        return not self.coeffs

    def __add__(self, other: "BivariatePolyVec") -> "BivariatePolyVec":
        _same_dim(self, other)
        summed: t.Dict[Exponent, np.ndarray] = {k: v.copy() for k, v in self.coeffs.items()}
        for key, coef in other.coeffs.items():
            summed[key] = summed[key] + coef if key in summed else coef.copy()
        return BivariatePolyVec(
            self.dim_out, max(self.max_degree, other.max_degree), summed
        )

    def __neg__(self) -> "BivariatePolyVec":
        return self.scaled(-1.0)

    def __sub__(self, other: "BivariatePolyVec") -> "BivariatePolyVec":
        return self + (-other)

    def scaled(self, factor: float) -> "BivariatePolyVec":
        return BivariatePolyVec(
            self.dim_out,
            self.max_degree,
            {k: factor * v for k, v in self.coeffs.items()},
        )

    def to_literal(self) -> t.Dict[str, t.Any]:
        """Render into the JSON polynomial literal format."""
        return {
            "dim_out": self.dim_out,
            "n": self.max_degree,
            "terms": [
                {"l": l, "m": m, "coef": [float(c) for c in coef]}
                for (l, m), coef in self.coeffs.items()
            ],
        }

    @classmethod
    def from_literal(cls, literal: t.Mapping[str, t.Any]) -> "BivariatePolyVec":
        """Parse the JSON polynomial literal format.

        {"dim_out": d-2, "n": n, "terms": [{"l": int, "m": int, "coef": [floats]}]}
        Repeated (l, m) terms are summed.
        """
        try:
            dim_out = int(literal["dim_out"])
            max_degree = int(literal["n"])
            terms = literal.get("terms", [])
            coeffs: t.Dict[Exponent, np.ndarray] = {}
            for term in terms:
                key = (int(term["l"]), int(term["m"]))
                coef = np.array(term["coef"], dtype=float)
                coeffs[key] = coeffs[key] + coef if key in coeffs else coef
        except (KeyError, TypeError) as exc:
            raise ValueError(f"Malformed polynomial literal: {exc}") from exc
        return cls(dim_out, max_degree, coeffs)


def _same_dim(p: BivariatePolyVec, q: BivariatePolyVec) -> None:
    if p.dim_out != q.dim_out:
        raise DimensionMismatch(p.dim_out, q.dim_out)


def eval(p: BivariatePolyVec, x1: float, x2: float) -> np.ndarray:  # noqa: A001
    """Evaluate p at (x1, x2)."""
    value = np.zeros(p.dim_out)
    for (l, m), coef in p.coeffs.items():
        value = value + coef * (x1 ** l) * (x2 ** m)
    return value


def partial(p: BivariatePolyVec, axis: int) -> BivariatePolyVec:
    """Formal partial derivative along x1 (axis=1) or x2 (axis=2)."""
    if axis not in (1, 2):
        raise ValueError(f"axis must be 1 or 2, got {axis}")
    derived: t.Dict[Exponent, np.ndarray] = {}
    for (l, m), coef in p.coeffs.items():
        power = l if axis == 1 else m
        if power == 0:
            continue
        key = (l - 1, m) if axis == 1 else (l, m - 1)
        derived[key] = power * coef
    return BivariatePolyVec(p.dim_out, max(p.max_degree - 1, 0), derived)


def antiderivative_x1(p: BivariatePolyVec, w1: float) -> BivariatePolyVec:
    """Return q with ∂₁q = p and q(w1, ·) ≡ 0.

    The lower-limit constant -c·w1**(l+1)/(l+1)·x2**m is folded into the
    (0, m) coefficient.
    """
    integrated: t.Dict[Exponent, np.ndarray] = {}
    for (l, m), coef in p.coeffs.items():
        upper = coef / (l + 1)
        integrated[(l + 1, m)] = integrated.get((l + 1, m), 0.0) + upper
        if w1 != 0.0:
            integrated[(0, m)] = integrated.get((0, m), 0.0) - upper * w1 ** (l + 1)
    return BivariatePolyVec(p.dim_out, p.max_degree + 1, integrated)


def compute_phi(
    sigma1: BivariatePolyVec, sigma2: BivariatePolyVec, w1: float
) -> BivariatePolyVec:
    """φ = σ₂ − ∫_{w1}^{x1} ∂₂σ₁(u, x2) du."""
    _same_dim(sigma1, sigma2)
    return sigma2 - antiderivative_x1(partial(sigma1, 2), w1)


def sigma_columns(n: int) -> t.List[Exponent]:
    """Derivative orders (l+1, m) with 1 <= l+1+m <= n, in ≺ order."""
    orders = [(p, m) for p in range(1, n + 1) for m in range(0, n - p + 1)]
    return sorted(orders, key=lambda pm: 2 * n * pm[0] + (2 * n + 1) * pm[1])


@dataclass(frozen=True)
class SigmaMatrix:
    """Σ(w1, w2): columns ∂₁^{l+1}∂₂^m φ at the base point."""

    entries: np.ndarray
    col_index: t.Tuple[Exponent, ...]

    @property
    def rows(self) -> int:
        return int(self.entries.shape[0])

    @property
    def cols(self) -> int:
        return len(self.col_index)


def build_sigma_matrix(
    phi: BivariatePolyVec, n: int, w1: float, w2: float
) -> SigmaMatrix:
    """Assemble Σ at (w1, w2), columns in ≺ order of (l+1, m)."""
    if phi.max_degree > n:
        raise ValueError(f"phi has degree bound {phi.max_degree} > n={n}")
    orders = sigma_columns(n)
    entries = np.zeros((phi.dim_out, len(orders)))
    for column, (p, m) in enumerate(orders):
        derived = phi
        for _ in range(p):
            derived = partial(derived, 1)
        for _ in range(m):
            derived = partial(derived, 2)
        entries[:, column] = eval(derived, w1, w2)
    entries.setflags(write=False)
    return SigmaMatrix(entries=entries, col_index=tuple((p - 1, m) for p, m in orders))


def numerical_rank(matrix: np.ndarray) -> int:
    """Count singular values above max(rows, cols)·eps·σ_max."""
    if matrix.size == 0:
        return 0
    singular = np.linalg.svd(matrix, compute_uv=False)
    if singular[0] == 0.0:
        return 0
    cutoff = max(matrix.shape) * np.finfo(float).eps * singular[0]
    return int(np.sum(singular > cutoff))


@dataclass(frozen=True)
class PHCVerdict:
    holds: bool
    rank: int
    cols: int


def check_phc(
    sigma1: BivariatePolyVec,
    sigma2: BivariatePolyVec,
    w1: float,
    w2: float,
    n: int,
) -> PHCVerdict:
    """Decide the parabolic Hörmander condition via the rank of Σ(w1, w2)."""
    phi = compute_phi(sigma1, sigma2, w1)
    sigma = build_sigma_matrix(phi, n, w1, w2)
    rank = numerical_rank(sigma.entries)
    return PHCVerdict(holds=rank == sigma1.dim_out, rank=rank, cols=sigma.cols)


@dataclass(frozen=True)
class Reduction:
    """Output of `reduce_to_monomials`.

    The Stratonovich polynomial P(w2, w2 + W2) that also appears in the
    reduced coordinates is not built: it couples on its own once W2 = W̃2.
    """

    phi: BivariatePolyVec
    psi1: BivariatePolyVec
    sigma: SigmaMatrix
    z3: np.ndarray
    z3_tilde: np.ndarray


def _min_norm_solve(sigma: SigmaMatrix, target: np.ndarray, tol: float) -> np.ndarray:
    solution, *_ = np.linalg.lstsq(sigma.entries, target, rcond=None)
    residual = float(np.linalg.norm(sigma.entries @ solution - target))
    if residual > tol * max(1.0, float(np.linalg.norm(target))):
        raise InconsistentStart(residual)
    return solution


def reduce_to_monomials(
    sigma1: BivariatePolyVec,
    sigma2: BivariatePolyVec,
    start: t.Sequence[t.Any],
    start_tilde: t.Sequence[t.Any],
    n: int,
    tol: float = 1e-10,
) -> Reduction:
    """Reduce a polynomial-driven diffusion to monomial-integral coordinates.

    `start` and `start_tilde` are (w1, w2, w3) with w3 a vector of length
    d-2; the Brownian coordinates must already agree.
    """
    w1, w2, w3 = start
    v1, v2, w3_tilde = start_tilde
    if (w1, w2) != (v1, v2):
        raise ValueError("Both starting points must share (w1, w2)")
    w3 = np.atleast_1d(np.asarray(w3, dtype=float))
    w3_tilde = np.atleast_1d(np.asarray(w3_tilde, dtype=float))
    for vector in (w3, w3_tilde):
        if vector.shape != (sigma1.dim_out,):
            raise DimensionMismatch(sigma1.dim_out, vector.size)

    verdict = check_phc(sigma1, sigma2, w1, w2, n)
    if not verdict.holds:
        raise PHCFailure(verdict.rank, sigma1.dim_out)

    phi = compute_phi(sigma1, sigma2, w1)
    sigma = build_sigma_matrix(phi, n, w1, w2)
    return Reduction(
        phi=phi,
        psi1=antiderivative_x1(sigma1, w1),
        sigma=sigma,
        z3=_min_norm_solve(sigma, w3, tol),
        z3_tilde=_min_norm_solve(sigma, w3_tilde, tol),
    )


def _central_difference(
    phi: BivariatePolyVec, order: Exponent, w1: float, w2: float, h: float
) -> np.ndarray:
    p, m = order
    total = np.zeros(phi.dim_out)
    for i in range(p + 1):
        for j in range(m + 1):
            weight = (-1) ** (i + j) * math.comb(p, i) * math.comb(m, j)
            x1 = w1 + (p / 2 - i) * h
            x2 = w2 + (m / 2 - j) * h
            total = total + weight * eval(phi, x1, x2)
    return total / h ** (p + m)


def finite_difference_column(
    phi: BivariatePolyVec, order: Exponent, w1: float, w2: float, h: float = 0.1
) -> np.ndarray:
    """Central finite-difference estimate of ∂₁^p∂₂^m φ at (w1, w2).

    One Richardson step removes the h² term of the tensor-product central
    stencil, so the estimate is exact up to rounding for degree <= p+m+3.
    """
    coarse = _central_difference(phi, order, w1, w2, h)
    fine = _central_difference(phi, order, w1, w2, h / 2)
    return (4.0 * fine - coarse) / 3.0
