"""Quasi-exponential functions in matrix-exponential form.

A quasi-exponential (QE) function is a finite sum of terms

    e^(a*x) * [p(x)*cos(w*x) + q(x)*sin(w*x)]

with real polynomials p, q. Every such function can be written canonically
as ``f(x) = c . (exp(A*x) @ b)`` for a square matrix ``A`` and vectors
``b, c``; equivalently, it is one component of the solution of a constant
coefficient linear ODE system. This module stores QE functions only in the
``(c, A, b)`` form and provides exact evaluation, differentiation and
integration on top of it, plus a least-squares fit that recovers the ODE
generator from samples of a vector-valued trajectory.

All objects are immutable after construction and all operations are pure
functions, so everything here is safe to use from multiple threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.linalg import expm


class MatrixExponentialOverflowError(ArithmeticError):
    """exp(M*x) left the representable double-precision range."""


def _as_readonly(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=float, copy=True)
    out.flags.writeable = False
    return out


def mat_exp(matrix: np.ndarray, x: float) -> np.ndarray:
    """Matrix exponential exp(matrix * x).

    Delegates to scipy's scaling-and-squaring Pade-13 implementation, which
    holds relative accuracy well below 1e-12 for ``||matrix * x|| <= 50``.
    The result is checked entry by entry: an exponential that overflows the
    double range raises instead of returning silent infinities.

    Parameters
    ----------
    matrix : (n, n) array_like
        Real square matrix.
    x : float
        Scale factor (typically a time-to-maturity).

    Returns
    -------
    (n, n) ndarray
    """
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"matrix must be square, got shape {m.shape}")
    if not np.isfinite(m).all():
        raise ValueError("matrix has non-finite entries")
    if not np.isfinite(x):
        raise ValueError(f"scale factor must be finite, got {x!r}")
    with np.errstate(over="ignore", invalid="ignore"):
        result = expm(m * x)
    if not np.isfinite(result).all():
        raise MatrixExponentialOverflowError(
            f"exp(M*x) overflowed for ||M*x||_inf = "
            f"{np.abs(m * x).sum(axis=1).max():.3g}"
        )
    return result


@dataclass(frozen=True)
class QEFunction:
    """A quasi-exponential function f(x) = c . (exp(A*x) @ b).

    Attributes
    ----------
    A : (n, n) ndarray
        ODE generator; units are 1 / time-to-maturity.
    b : (n,) ndarray
        Initial state of the underlying linear ODE.
    c : (n,) ndarray
        Readout vector.
    """

    A: np.ndarray
    b: np.ndarray
    c: np.ndarray

    def __post_init__(self) -> None:
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        b = np.atleast_1d(np.asarray(self.b, dtype=float))
        c = np.atleast_1d(np.asarray(self.c, dtype=float))
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError(f"A must be square, got shape {A.shape}")
        n = A.shape[0]
        if n < 1:
            raise ValueError("state dimension must be >= 1")
        if b.shape != (n,) or c.shape != (n,):
            raise ValueError(
                f"b and c must have shape ({n},), got {b.shape} and {c.shape}"
            )
        for name, arr in (("A", A), ("b", b), ("c", c)):
            if not np.isfinite(arr).all():
                raise ValueError(f"{name} has non-finite entries")
        object.__setattr__(self, "A", _as_readonly(A))
        object.__setattr__(self, "b", _as_readonly(b))
        object.__setattr__(self, "c", _as_readonly(c))

    @property
    def n(self) -> int:
        return self.A.shape[0]

    def __call__(self, x: float) -> float:
        return qe_eval(self, x)

    def eval_grid(self, xs: np.ndarray) -> np.ndarray:
        """Evaluate on an array of points x >= 0."""
        xs = np.asarray(xs, dtype=float)
        flat = xs.ravel()
        out = np.empty(flat.shape)
        for i, x in enumerate(flat):
            out[i] = qe_eval(self, x)
        return out.reshape(xs.shape)

    # -- constructors -------------------------------------------------

    @classmethod
    def constant(cls, value: float) -> QEFunction:
        return cls(A=np.zeros((1, 1)), b=np.ones(1), c=np.array([float(value)]))

    @classmethod
    def exponential(cls, rate: float, scale: float = 1.0) -> QEFunction:
        """scale * e^(rate*x)."""
        return cls(A=np.array([[float(rate)]]), b=np.ones(1), c=np.array([float(scale)]))

    @classmethod
    def from_poly_trig(
        cls, terms: Iterable[tuple[float, float, Sequence[float], Sequence[float]]]
    ) -> QEFunction:
        """Build the (c, A, b) form from polynomial-trigonometric terms.

        Each term is ``(alpha, omega, p, q)`` representing
        ``e^(alpha*x) * (p(x)*cos(omega*x) + q(x)*sin(omega*x))`` with
        polynomial coefficients ``p, q`` in increasing-degree order. Each
        term becomes one companion block (a Jordan block for omega == 0,
        interleaved rotation blocks otherwise) and the blocks are direct
        summed. This is one of several equivalent conversions; the produced
        state dimension is 2 * (deg + 1) per oscillatory term.
        """
        blocks: list[np.ndarray] = []
        b_parts: list[np.ndarray] = []
        c_parts: list[np.ndarray] = []
        for alpha, omega, p, q in terms:
            p = np.atleast_1d(np.asarray(p, dtype=float))
            q = np.atleast_1d(np.asarray(q, dtype=float))
            if omega == 0.0:
                if np.any(q != 0.0):
                    raise ValueError("sine coefficients require omega != 0")
                deg = len(p) - 1
                m = deg + 1
                # basis u_k = x^k e^(alpha x) / k!  =>  u_k' = alpha u_k + u_(k-1)
                blk = np.diag(np.full(m, float(alpha)))
                for k in range(1, m):
                    blk[k, k - 1] = 1.0
                b0 = np.zeros(m)
                b0[0] = 1.0
                facts = np.cumprod(np.concatenate(([1.0], np.arange(1, m))))
                c0 = p * facts
            else:
                deg = max(len(p), len(q)) - 1
                p = np.pad(p, (0, deg + 1 - len(p)))
                q = np.pad(q, (0, deg + 1 - len(q)))
                m = 2 * (deg + 1)
                blk = np.zeros((m, m))
                rot = np.array([[alpha, -omega], [omega, alpha]], dtype=float)
                for k in range(deg + 1):
                    blk[2 * k : 2 * k + 2, 2 * k : 2 * k + 2] = rot
                    if k >= 1:
                        blk[2 * k, 2 * k - 2] = 1.0
                        blk[2 * k + 1, 2 * k - 1] = 1.0
                b0 = np.zeros(m)
                b0[0] = 1.0
                c0 = np.zeros(m)
                fact = 1.0
                for k in range(deg + 1):
                    if k > 0:
                        fact *= k
                    c0[2 * k] = p[k] * fact
                    c0[2 * k + 1] = q[k] * fact
            blocks.append(blk)
            b_parts.append(b0)
            c_parts.append(c0)
        if not blocks:
            raise ValueError("at least one term is required")
        n = sum(blk.shape[0] for blk in blocks)
        A = np.zeros((n, n))
        pos = 0
        for blk in blocks:
            m = blk.shape[0]
            A[pos : pos + m, pos : pos + m] = blk
            pos += m
        return cls(A=A, b=np.concatenate(b_parts), c=np.concatenate(c_parts))

    # -- serialisation ------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "A": self.A.tolist(),
            "b": self.b.tolist(),
            "c": self.c.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> QEFunction:
        expected = {"n", "A", "b", "c"}
        unknown = set(data) - expected
        if unknown:
            raise ValueError(f"unknown QEFunction keys: {sorted(unknown)}")
        f = cls(A=np.asarray(data["A"], dtype=float),
                b=np.asarray(data["b"], dtype=float),
                c=np.asarray(data["c"], dtype=float))
        if "n" in data and int(data["n"]) != f.n:
            raise ValueError(f"declared n={data['n']} does not match A shape {f.A.shape}")
        return f


def qe_eval(f: QEFunction, x: float) -> float:
    """Evaluate f at time-to-maturity x >= 0."""
    if x < 0:
        raise ValueError(f"time-to-maturity must be >= 0, got {x}")
    return float(f.c @ (mat_exp(f.A, x) @ f.b))


def qe_derivative(f: QEFunction) -> QEFunction:
    """Exact derivative; same generator and state, readout becomes A^T c."""
    return QEFunction(A=f.A, b=f.b, c=f.A.T @ f.c)


def qe_integral(f: QEFunction, x0: float, x1: float) -> float:
    """Integrate f exactly over [x0, x1] via the augmented generator.

    The block matrix ``[[A, b], [0, 0]]`` has the running integral of the
    state in the last column of its exponential, so no quadrature is needed:

        int_0^x f(z) dz = c . exp([[A, b], [0, 0]] * x)[:n, n]
    """
    if not (0 <= x0 <= x1):
        raise ValueError(f"need 0 <= x0 <= x1, got x0={x0}, x1={x1}")
    n = f.n
    aug = np.zeros((n + 1, n + 1))
    aug[:n, :n] = f.A
    aug[:n, n] = f.b

    def antiderivative(x: float) -> float:
        return float(f.c @ mat_exp(aug, x)[:n, n])

    return antiderivative(x1) - antiderivative(x0)


@dataclass(frozen=True)
class OdeFitResult:
    """Least-squares generator fit for v'(x) = B v(x).

    ``residual`` is the root-mean-square misfit over the interior sample
    points; ``rank_deficient`` flags a sample matrix whose numerical rank is
    below the state dimension (B is then the minimal-norm solution).
    """

    B: np.ndarray
    residual: float
    rank_deficient: bool = field(default=False)


def fit_linear_ode(samples: Sequence[tuple[float, np.ndarray]]) -> OdeFitResult:
    """Fit the constant generator of a linear ODE from trajectory samples.

    Parameters
    ----------
    samples : sequence of (x, v(x))
        Uniformly spaced samples of a d-dimensional trajectory. At least
        ``max(2*d, 3)`` samples are required (three for the central
        differences that estimate v').

    Returns
    -------
    OdeFitResult
        ``B`` minimising ``||v'(x) - B v(x)||`` over the interior points,
        with v' taken as second-order central differences.
    """
    xs = np.array([float(x) for x, _ in samples])
    V = np.array([np.atleast_1d(np.asarray(v, dtype=float)) for _, v in samples])
    if V.ndim != 2:
        raise ValueError("sample vectors must share one dimension")
    m, d = V.shape
    if m < max(2 * d, 3):
        raise ValueError(f"need at least {max(2 * d, 3)} samples, got {m}")
    if not (np.isfinite(xs).all() and np.isfinite(V).all()):
        raise ValueError("samples contain non-finite values")
    steps = np.diff(xs)
    h = steps.mean()
    if h <= 0 or np.any(np.abs(steps - h) > 1e-8 * max(abs(h), 1.0)):
        raise ValueError("samples must lie on a uniform, increasing grid")

    dV = (V[2:] - V[:-2]) / (2.0 * h)  # central differences, interior points
    Vi = V[1:-1]
    Bt, _, rank, sv = np.linalg.lstsq(Vi, dV, rcond=1e-10)
    misfit = Vi @ Bt - dV
    residual = float(np.sqrt(np.mean(misfit**2)))
    return OdeFitResult(B=_as_readonly(Bt.T), residual=residual,
                        rank_deficient=bool(rank < d))
