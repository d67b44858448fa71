"""Tessarine scalars, vectors and matrices.

A tessarine is a commutative 4D hypercomplex number

    x = x_r + i*x_i + j*x_j + k*x_k

with unit rules  i^2 = k^2 = -1,  j^2 = +1,  i*j = j*i = k,
j*k = k*j = i,  k*i = i*k = -j.  The ring is commutative but has zero
divisors ((1+j)*(1-j) = 0), so linear solves cannot use plain Gaussian
elimination over tessarines.  Internally every product and solve is routed
through the idempotent splitting

    x  <->  (z_plus, z_minus),   z_pm = (x_r ± x_j) + 1i*(x_i ± x_k),

which is a ring isomorphism onto C (+) C: multiplication, Hermitian
transposition and inversion all act componentwise on the two complex
images.  A tessarine matrix is invertible exactly when both complex
components are.

The four real parts are the primary stored representation; the complex
pair is derived on demand.  All values are immutable after construction.
"""

from __future__ import annotations

import numbers
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Tessarine",
    "ComplexPair",
    "TessArray",
    "SingularMatrixError",
    "tmul",
    "conjugate",
    "augment",
    "augmentation_matrix",
    "star",
    "star_matrix",
    "solve",
    "solve_right",
    "restrict_augmented",
    "to_real_stack",
    "from_real_stack",
    "augmented_from_real",
]

# A component system counts as singular once its 2-norm condition number
# exceeds this (= 1 / (100 * machine epsilon)).
COND_LIMIT = 1.0 / (100.0 * np.finfo(float).eps)

PARTS = ("r", "i", "j", "k")
CONJ_SIGNS = {
    "star": (1.0, -1.0, 1.0, -1.0),
    "iota": (1.0, 1.0, -1.0, -1.0),
    "kappa": (1.0, -1.0, -1.0, 1.0),
}


class SingularMatrixError(ValueError):
    """A tessarine system has a rank-deficient complex component.

    Raised by :func:`solve` when either complex image of the coefficient
    matrix is numerically singular -- a zero-divisor obstruction or a
    degenerate model, never silently regularised.
    """


@dataclass(frozen=True)
class Tessarine:
    """Scalar tessarine with real parts (r, i, j, k)."""

    r: float = 0.0
    i: float = 0.0
    j: float = 0.0
    k: float = 0.0

    def __add__(self, other: "Tessarine") -> "Tessarine":
        other = _as_tess(other)
        return Tessarine(self.r + other.r, self.i + other.i,
                         self.j + other.j, self.k + other.k)

    __radd__ = __add__

    def __neg__(self) -> "Tessarine":
        return Tessarine(-self.r, -self.i, -self.j, -self.k)

    def __sub__(self, other: "Tessarine") -> "Tessarine":
        return self + (-_as_tess(other))

    def __rsub__(self, other) -> "Tessarine":
        return _as_tess(other) + (-self)

    def __mul__(self, other) -> "Tessarine":
        b = _as_tess(other)
        return tmul(self, b)

    __rmul__ = __mul__

    def conj(self, kind: str = "star") -> "Tessarine":
        sr, si, sj, sk = CONJ_SIGNS[kind]
        return Tessarine(sr * self.r, si * self.i, sj * self.j, sk * self.k)

    @property
    def pair(self) -> "ComplexPair":
        return ComplexPair.from_tessarine(self)

    def abs2(self) -> float:
        """Sum of squared real parts (the 4-channel squared modulus)."""
        return self.r * self.r + self.i * self.i + self.j * self.j + self.k * self.k

    def isclose(self, other: "Tessarine", tol: float = 1e-12) -> bool:
        return (self - other).abs2() ** 0.5 <= tol

    def __repr__(self) -> str:
        return f"Tessarine({self.r}, {self.i}, {self.j}, {self.k})"


def _as_tess(x) -> Tessarine:
    if isinstance(x, Tessarine):
        return x
    if isinstance(x, numbers.Real):
        return Tessarine(float(x))
    raise TypeError(f"cannot interpret {type(x).__name__} as a tessarine")


def tmul(a: Tessarine, b: Tessarine) -> Tessarine:
    """Ring product of two scalar tessarines (commutative)."""
    return Tessarine(
        a.r * b.r - a.i * b.i + a.j * b.j - a.k * b.k,
        a.r * b.i + a.i * b.r + a.j * b.k + a.k * b.j,
        a.r * b.j + a.j * b.r - a.i * b.k - a.k * b.i,
        a.r * b.k + a.k * b.r + a.i * b.j + a.j * b.i,
    )


@dataclass(frozen=True)
class ComplexPair:
    """Image of a scalar tessarine under the idempotent basis (1±j)/2."""

    z_plus: complex
    z_minus: complex

    @classmethod
    def from_tessarine(cls, x: Tessarine) -> "ComplexPair":
        return cls(complex(x.r + x.j, x.i + x.k), complex(x.r - x.j, x.i - x.k))

    def to_tessarine(self) -> Tessarine:
        zp, zm = self.z_plus, self.z_minus
        return Tessarine(
            0.5 * (zp.real + zm.real),
            0.5 * (zp.imag + zm.imag),
            0.5 * (zp.real - zm.real),
            0.5 * (zp.imag - zm.imag),
        )

    def __mul__(self, other: "ComplexPair") -> "ComplexPair":
        return ComplexPair(self.z_plus * other.z_plus, self.z_minus * other.z_minus)

    def __add__(self, other: "ComplexPair") -> "ComplexPair":
        return ComplexPair(self.z_plus + other.z_plus, self.z_minus + other.z_minus)


class TessArray:
    """Dense tessarine array (vector, matrix, or scalar-shaped).

    Stores the four real parts as one read-only float64 ndarray of shape
    ``(4,) + shape``.  Elementwise ``*`` is the ring product, ``@`` the
    matrix product (routed through the complex pair), ``.H`` the Hermitian
    (star-conjugate) transpose.
    """

    __slots__ = ("_q", "_zpzm")

    def __init__(self, parts):
        q = np.asarray(parts, dtype=float)
        if q.ndim < 1 or q.shape[0] != 4:
            raise ValueError("parts must have shape (4, ...)")
        q = np.ascontiguousarray(q)
        q.setflags(write=False)
        self._q = q
        self._zpzm = None

    # -- construction -------------------------------------------------

    @classmethod
    def from_parts(cls, r, i=None, j=None, k=None) -> "TessArray":
        r = np.asarray(r, dtype=float)
        zeros = np.zeros_like(r)
        i = zeros if i is None else np.asarray(i, dtype=float)
        j = zeros if j is None else np.asarray(j, dtype=float)
        k = zeros if k is None else np.asarray(k, dtype=float)
        return cls(np.stack(np.broadcast_arrays(r, i, j, k)))

    @classmethod
    def from_real(cls, a) -> "TessArray":
        return cls.from_parts(np.asarray(a, dtype=float))

    @classmethod
    def from_scalar(cls, x: Tessarine, shape=()) -> "TessArray":
        q = np.empty((4,) + tuple(shape))
        for m, v in enumerate((x.r, x.i, x.j, x.k)):
            q[m] = v
        return cls(q)

    @classmethod
    def zeros(cls, shape) -> "TessArray":
        if isinstance(shape, int):
            shape = (shape,)
        return cls(np.zeros((4,) + tuple(shape)))

    @classmethod
    def eye(cls, n: int) -> "TessArray":
        q = np.zeros((4, n, n))
        q[0] = np.eye(n)
        return cls(q)

    @classmethod
    def from_pair(cls, zp, zm) -> "TessArray":
        zp = np.asarray(zp, dtype=complex)
        zm = np.asarray(zm, dtype=complex)
        q = np.empty((4,) + zp.shape)
        np.multiply(zp.real + zm.real, 0.5, out=q[0])
        np.multiply(zp.imag + zm.imag, 0.5, out=q[1])
        np.multiply(zp.real - zm.real, 0.5, out=q[2])
        np.multiply(zp.imag - zm.imag, 0.5, out=q[3])
        out = cls(q)
        out._zpzm = (zp, zm)
        return out

    # -- views ---------------------------------------------------------

    @property
    def parts(self) -> np.ndarray:
        return self._q

    @property
    def r(self) -> np.ndarray:
        return self._q[0]

    @property
    def i(self) -> np.ndarray:
        return self._q[1]

    @property
    def j(self) -> np.ndarray:
        return self._q[2]

    @property
    def k(self) -> np.ndarray:
        return self._q[3]

    @property
    def shape(self):
        return self._q.shape[1:]

    @property
    def ndim(self) -> int:
        return self._q.ndim - 1

    @property
    def pair(self):
        """The two complex images (z_plus, z_minus) as ndarrays."""
        q = self._q
        return (q[0] + q[2]) + 1j * (q[1] + q[3]), (q[0] - q[2]) + 1j * (q[1] - q[3])

    def item(self) -> Tessarine:
        if self._q[0].size != 1:
            raise ValueError("item() requires a single-element array")
        return Tessarine(*(float(p.reshape(-1)[0]) for p in self._q))

    def __getitem__(self, ix) -> "TessArray":
        if not isinstance(ix, tuple):
            ix = (ix,)
        return TessArray(self._q[(slice(None),) + ix])

    # -- arithmetic ----------------------------------------------------

    def __add__(self, other: "TessArray") -> "TessArray":
        return TessArray(self._q + _coerce(other)._q)

    __radd__ = __add__

    def __sub__(self, other: "TessArray") -> "TessArray":
        return TessArray(self._q - _coerce(other)._q)

    def __rsub__(self, other) -> "TessArray":
        return TessArray(_coerce(other)._q - self._q)

    def __neg__(self) -> "TessArray":
        return TessArray(-self._q)

    def __mul__(self, other) -> "TessArray":
        if isinstance(other, (numbers.Real, np.ndarray)):
            return TessArray(self._q * np.asarray(other, dtype=float))
        b = _coerce(other)
        a = self._q
        q = b._q
        return TessArray(np.stack([
            a[0] * q[0] - a[1] * q[1] + a[2] * q[2] - a[3] * q[3],
            a[0] * q[1] + a[1] * q[0] + a[2] * q[3] + a[3] * q[2],
            a[0] * q[2] + a[2] * q[0] - a[1] * q[3] - a[3] * q[1],
            a[0] * q[3] + a[3] * q[0] + a[1] * q[2] + a[2] * q[1],
        ]))

    __rmul__ = __mul__

    def __matmul__(self, other: "TessArray") -> "TessArray":
        b = _coerce(other)
        ap, am = self.pair
        bp, bm = b.pair
        return TessArray.from_pair(ap @ bp, am @ bm)

    # -- conjugations and transposes ------------------------------------

    def conj(self, kind: str = "star") -> "TessArray":
        s = CONJ_SIGNS[kind]
        return TessArray(self._q * np.asarray(s)[(slice(None),) + (None,) * self.ndim])

    def conj_star(self) -> "TessArray":
        return self.conj("star")

    def conj_iota(self) -> "TessArray":
        return self.conj("iota")

    def conj_kappa(self) -> "TessArray":
        return self.conj("kappa")

    @property
    def T(self) -> "TessArray":
        axes = (0,) + tuple(range(self._q.ndim - 1, 0, -1))
        return TessArray(self._q.transpose(axes))

    @property
    def H(self) -> "TessArray":
        return self.conj("star").T

    # -- reductions and helpers -----------------------------------------

    def trace(self) -> Tessarine:
        if self.ndim != 2:
            raise ValueError("trace requires a matrix")
        return Tessarine(*(float(np.trace(p)) for p in self._q))

    def diagonal(self) -> "TessArray":
        return TessArray(np.stack([np.diagonal(p) for p in self._q]))

    def norm(self) -> float:
        return float(np.sqrt(np.sum(self._q * self._q)))

    def max_abs(self) -> float:
        return float(np.max(np.abs(self._q))) if self._q.size else 0.0

    def allclose(self, other: "TessArray", atol: float = 1e-12, rtol: float = 0.0) -> bool:
        return bool(np.allclose(self._q, _coerce(other)._q, atol=atol, rtol=rtol))

    def symmetrized(self) -> "TessArray":
        """(M + M^H)/2 -- floating-point drift control for pseudo-covariances."""
        return (self + self.H) * 0.5

    def __repr__(self) -> str:
        return f"TessArray(shape={self.shape})"


def _coerce(x) -> TessArray:
    if isinstance(x, TessArray):
        return x
    if isinstance(x, Tessarine):
        return TessArray.from_scalar(x)
    if isinstance(x, numbers.Real):
        return TessArray.from_scalar(Tessarine(float(x)))
    raise TypeError(f"cannot interpret {type(x).__name__} as a tessarine array")


def conjugate(x, kind: str):
    """Conjugation by kind: star (r,-i,j,-k), iota (r,i,-j,-k), kappa (r,-i,-j,k)."""
    if kind not in CONJ_SIGNS:
        raise ValueError(f"unknown conjugation kind {kind!r}")
    return x.conj(kind)


# -- augmentation machinery ---------------------------------------------

_UNIT_ROWS = np.array([
    # rows express [x, x*, x^iota, x^kappa] in terms of the real parts
    [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 1, 0], [0, 0, 0, 1]],
    [[1, 0, 0, 0], [0, -1, 0, 0], [0, 0, 1, 0], [0, 0, 0, -1]],
    [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, -1, 0], [0, 0, 0, -1]],
    [[1, 0, 0, 0], [0, -1, 0, 0], [0, 0, -1, 0], [0, 0, 0, 1]],
], dtype=float)


def augmentation_matrix(n: int) -> TessArray:
    """The unitary 4n x 4n map J_n with  augment(x) = 2 * J_n @ real_stack(x).

    Satisfies J_n.H @ J_n = I_{4n}.
    """
    ident = np.eye(n)
    parts = [np.kron(_UNIT_ROWS[:, :, m], ident) * 0.5 for m in range(4)]
    return TessArray(np.stack(parts))


def augment(x: TessArray) -> TessArray:
    """Stack [x; x*; x^iota; x^kappa] of a length-n vector into length 4n."""
    if x.ndim != 1:
        raise ValueError("augment expects a vector")
    out = np.concatenate([
        x.parts,
        x.conj("star").parts,
        x.conj("iota").parts,
        x.conj("kappa").parts,
    ], axis=1)
    return TessArray(out)


def restrict_augmented(x: TessArray, k: int) -> TessArray:
    """First k*n components of the augmented vector: x, [x; x*], or all four."""
    if k not in (1, 2, 4):
        raise ValueError("k must be 1, 2 or 4")
    if k == 1:
        return x
    if k == 2:
        return TessArray(np.concatenate([x.parts, x.conj("star").parts], axis=1))
    return augment(x)


def to_real_stack(x: TessArray) -> np.ndarray:
    """Real 4n-vector [x_r; x_i; x_j; x_k] of a length-n tessarine vector."""
    if x.ndim != 1:
        raise ValueError("expected a vector")
    return np.concatenate([x.r, x.i, x.j, x.k])


def from_real_stack(a: np.ndarray, n: int) -> TessArray:
    a = np.asarray(a, dtype=float)
    if a.shape != (4 * n,):
        raise ValueError(f"expected shape ({4 * n},), got {a.shape}")
    return TessArray(a.reshape(4, n))


def augmented_from_real(c: np.ndarray) -> TessArray:
    """Map a real 4n x 4n part-covariance C to 4 * J_n C J_n^H.

    This is the pseudo-covariance of the augmented vector of a signal whose
    stacked real parts have covariance C.
    """
    c = np.asarray(c, dtype=float)
    if c.ndim != 2 or c.shape[0] != c.shape[1] or c.shape[0] % 4:
        raise ValueError("expected a real 4n x 4n matrix")
    n = c.shape[0] // 4
    jmap = augmentation_matrix(n)
    return (jmap @ TessArray.from_real(c) @ jmap.H) * 4.0


def star(x: TessArray, y: TessArray) -> TessArray:
    """Part-wise Hadamard product: result_nu = x_nu * y_nu for each part."""
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.shape} vs {y.shape}")
    return TessArray(x.parts * y.parts)


def star_matrix(x: TessArray) -> TessArray:
    """Linear operator D with  augment(star(x, y)) = D @ augment(y).

    Equals J_n @ diag(real_stack(x)) @ J_n^H.
    """
    if x.ndim != 1:
        raise ValueError("star_matrix expects a vector")
    n = x.shape[0]
    jmap = augmentation_matrix(n)
    diag = TessArray.from_real(np.diag(to_real_stack(x)))
    return jmap @ diag @ jmap.H


# -- linear solves -------------------------------------------------------

def _component_solve(a: np.ndarray, b: np.ndarray, label: str) -> np.ndarray:
    cond = np.linalg.cond(a)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise SingularMatrixError(
            f"{label} complex component is singular (condition estimate {cond:.3e})")
    try:
        return np.linalg.solve(a, b)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - cond check catches first
        raise SingularMatrixError(f"{label} complex component: {exc}") from exc


def solve(a: TessArray, b: TessArray) -> TessArray:
    """Solve A @ X = B over the tessarines via the two complex components.

    Raises :class:`SingularMatrixError` when either component system is
    rank-deficient (relative condition threshold ``COND_LIMIT``).
    """
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("coefficient matrix must be square")
    if b.shape[0] != a.shape[0]:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    ap, am = a.pair
    bp, bm = b.pair
    xp = _component_solve(ap, bp, "plus")
    xm = _component_solve(am, bm, "minus")
    return TessArray.from_pair(xp, xm)


def solve_right(b: TessArray, a: TessArray) -> TessArray:
    """Solve X @ A = B (apply A^{-1} from the right)."""
    return solve(a.H, b.H).H


def inv(a: TessArray) -> TessArray:
    return solve(a, TessArray.eye(a.shape[0]))


# -- block assembly -------------------------------------------------------

def vstack(blocks) -> TessArray:
    return TessArray(np.concatenate([b.parts for b in blocks], axis=1))


def hstack(blocks) -> TessArray:
    return TessArray(np.concatenate([b.parts for b in blocks], axis=2))


def block(nested) -> TessArray:
    """Assemble a matrix from a 2D nest of TessArray blocks."""
    return vstack([hstack(row) for row in nested])
