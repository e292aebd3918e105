"""Phase-space points, the Hamiltonian h(q,p) = |p|^2/2 + V(q) and observable symbols.

Arrays of phase-space points have shape ``(n, 2d)`` with positions in the first
``d`` columns and momenta in the last ``d``.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ._validation import check_phase_points, check_scalar
from .exceptions import CapabilityError, ContractViolation
from .potentials import Potential


@dataclass(frozen=True)
class PhasePoint:
    """A point z = (q, p) of R^{2d}."""

    q: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        q = np.atleast_1d(np.asarray(self.q, dtype=float))
        p = np.atleast_1d(np.asarray(self.p, dtype=float))
        if q.ndim != 1 or q.shape != p.shape or q.size < 1:
            raise ContractViolation("q and p must be 1-D vectors of equal length >= 1")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(p))):
            raise ContractViolation("phase point has non-finite components")
        q.setflags(write=False)
        p.setflags(write=False)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "p", p)

    @classmethod
    def from_array(cls, z):
        z = np.asarray(z, dtype=float).ravel()
        if z.size % 2:
            raise ContractViolation("phase-space vector must have even length")
        d = z.size // 2
        return cls(z[:d], z[d:])

    @property
    def dim(self):
        return self.q.size

    def as_array(self):
        return np.concatenate([self.q, self.p])

    def __array__(self, dtype=None, copy=None):
        z = self.as_array()
        return z if dtype is None else z.astype(dtype)


def as_phase_array(z, dim=None):
    """Coerce a PhasePoint, a vector or an ``(n, 2d)`` array to an ``(n, 2d)`` array."""
    if isinstance(z, PhasePoint):
        z = z.as_array()
    return check_phase_points(z, dim)


def symplectic_matrix(dim):
    """The block matrix ``J = [[0, Id], [-Id, 0]]`` of size ``2d x 2d``."""
    eye = np.eye(dim)
    zero = np.zeros((dim, dim))
    return np.block([[zero, eye], [-eye, zero]])


@dataclass(frozen=True)
class SymplecticStructure:
    dim: int
    J: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "J", symplectic_matrix(self.dim))


@dataclass(frozen=True)
class HamiltonianModel:
    """``h(q,p) = |p|^2/2 + V(q)`` together with the semiclassical parameter."""

    potential: Potential
    epsilon: float

    def __post_init__(self):
        check_scalar(self.epsilon, "epsilon", nonnegative=True)

    @property
    def dim(self):
        return self.potential.dim

    def _split(self, z):
        Z = as_phase_array(z, self.dim)
        d = self.dim
        return Z[:, :d], Z[:, d:]

    def h(self, z):
        q, p = self._split(z)
        return 0.5 * np.sum(p * p, axis=1) + self.potential.value(q)

    def laplacian_h(self, z):
        """Phase-space Laplacian ``d + tr D^2 V(q)``."""
        q, _ = self._split(z)
        return self.dim + self.potential.laplacian(q)

    def effective_force(self, q, epsilon=None):
        """``-grad_q h_eps(q) = -grad V(q) + (eps/4) grad (Delta V)(q)``."""
        eps = self.epsilon if epsilon is None else epsilon
        force = -self.potential.gradient(q)
        if eps:
            try:
                force = force + 0.25 * eps * self.potential.grad_laplacian(q)
            except NotImplementedError as exc:
                raise CapabilityError(
                    f"{self.potential.name} cannot provide third derivatives"
                ) from exc
        return force


def eval_h_eps(model, z):
    """``h_eps(z) = h(z) - (eps/4)(d + Delta V(q))``, one value per point."""
    return model.h(z) - 0.25 * model.epsilon * model.laplacian_h(z)


def grad_h_eps(model, z):
    """Gradient of :func:`eval_h_eps`, shape ``(n, 2d)``.

    ``J @ grad_h_eps`` is the vector field of the corrected flow.
    """
    q, p = model._split(z)
    return np.concatenate([-model.effective_force(q), p], axis=1)


@dataclass(frozen=True)
class ObservableSymbol:
    """A phase-space function a(z) with its derivatives.

    All callbacks are vectorised: they take an ``(n, 2d)`` array and return
    arrays of shape ``(n,)``, ``(n, 2d)``, ``(n, 2d, 2d)`` and ``(n,)``.
    Derivative callbacks may be ``None`` for value-only symbols (see
    :func:`correct_symbol`).
    """

    name: str
    value: Callable
    gradient: Optional[Callable] = None
    hessian: Optional[Callable] = None
    laplacian: Optional[Callable] = None
    dim: Optional[int] = None
    kind: tuple = ()
    base: Optional["ObservableSymbol"] = None

    def __call__(self, z):
        return self.value(as_phase_array(z, self.dim))

    def _need(self, attr):
        fn = getattr(self, attr)
        if fn is None:
            raise CapabilityError(f"observable {self.name!r} does not provide {attr}")
        return fn

    def grad(self, z):
        return self._need("gradient")(as_phase_array(z, self.dim))

    def hess(self, z):
        return self._need("hessian")(as_phase_array(z, self.dim))

    def lap(self, z):
        return self._need("laplacian")(as_phase_array(z, self.dim))


def correct_symbol(a, epsilon):
    """Return the value-only symbol ``a_eps = a - (eps/4) Delta a``.

    The derivatives of ``a_eps`` are never needed downstream: the corrected
    estimator evaluates ``a_eps`` for the leading term and the derivatives of the
    original symbol for the correction term, so the result keeps a reference to
    ``a`` in ``base`` instead of carrying ``grad Delta a``.
    """
    check_scalar(epsilon, "epsilon", nonnegative=True)
    if epsilon == 0:
        value = a.value
    else:
        lap = a._need("laplacian")

        def value(Z):
            return a.value(Z) - 0.25 * epsilon * lap(Z)

    return ObservableSymbol(
        name=f"{a.name}_eps",
        value=value,
        dim=a.dim,
        kind=a.kind,
        base=a,
    )


def linear_combination(symbols, coeffs, name=None):
    """Pointwise ``sum_k c_k a_k`` with all available derivatives combined."""
    symbols = list(symbols)
    coeffs = [float(c) for c in coeffs]
    if len(symbols) != len(coeffs) or not symbols:
        raise ContractViolation("need one coefficient per symbol")

    def combine(attr):
        fns = [getattr(s, attr) for s in symbols]
        if any(f is None for f in fns):
            return None
        return lambda Z: sum(c * f(Z) for c, f in zip(coeffs, fns))

    return ObservableSymbol(
        name=name or "+".join(f"{c:g}*{s.name}" for c, s in zip(coeffs, symbols)),
        value=combine("value"),
        gradient=combine("gradient"),
        hessian=combine("hessian"),
        laplacian=combine("laplacian"),
        dim=symbols[0].dim,
        kind=("combination", tuple(s.kind for s in symbols), tuple(coeffs)),
    )


def _unit(n, dim2, k):
    e = np.zeros((n, dim2))
    e[:, k] = 1.0
    return e


def position(dim, j):
    """Symbol ``(q, p) -> q_j`` (0-based ``j``)."""
    return ObservableSymbol(
        name=f"q{j + 1}",
        value=lambda Z: Z[:, j].copy(),
        gradient=lambda Z: _unit(len(Z), 2 * dim, j),
        hessian=lambda Z: np.zeros((len(Z), 2 * dim, 2 * dim)),
        laplacian=lambda Z: np.zeros(len(Z)),
        dim=dim,
        kind=("position", j),
    )


def momentum(dim, j):
    """Symbol ``(q, p) -> p_j`` (0-based ``j``)."""
    return ObservableSymbol(
        name=f"p{j + 1}",
        value=lambda Z: Z[:, dim + j].copy(),
        gradient=lambda Z: _unit(len(Z), 2 * dim, dim + j),
        hessian=lambda Z: np.zeros((len(Z), 2 * dim, 2 * dim)),
        laplacian=lambda Z: np.zeros(len(Z)),
        dim=dim,
        kind=("momentum", j),
    )


def kinetic_energy(dim):
    def hess(Z):
        H = np.zeros((len(Z), 2 * dim, 2 * dim))
        idx = np.arange(dim, 2 * dim)
        H[:, idx, idx] = 1.0
        return H

    def grad(Z):
        G = np.zeros_like(Z)
        G[:, dim:] = Z[:, dim:]
        return G

    return ObservableSymbol(
        name="kinetic",
        value=lambda Z: 0.5 * np.sum(Z[:, dim:] ** 2, axis=1),
        gradient=grad,
        hessian=hess,
        laplacian=lambda Z: np.full(len(Z), float(dim)),
        dim=dim,
        kind=("kinetic",),
    )


def potential_energy(potential):
    d = potential.dim

    def grad(Z):
        G = np.zeros_like(Z)
        G[:, :d] = potential.gradient(Z[:, :d])
        return G

    def hess(Z):
        H = np.zeros((len(Z), 2 * d, 2 * d))
        H[:, :d, :d] = potential.hessian(Z[:, :d])
        return H

    return ObservableSymbol(
        name="potential",
        value=lambda Z: potential.value(Z[:, :d]),
        gradient=grad,
        hessian=hess,
        laplacian=lambda Z: potential.laplacian(Z[:, :d]),
        dim=d,
        kind=("potential",),
    )


def total_energy(potential):
    d = potential.dim
    kin = kinetic_energy(d)
    pot = potential_energy(potential)
    return ObservableSymbol(
        name="total",
        value=lambda Z: kin.value(Z) + pot.value(Z),
        gradient=lambda Z: kin.gradient(Z) + pot.gradient(Z),
        hessian=lambda Z: kin.hessian(Z) + pot.hessian(Z),
        laplacian=lambda Z: kin.laplacian(Z) + pot.laplacian(Z),
        dim=d,
        kind=("total",),
    )


def builtin_observables(model):
    """Positions, momenta, potential, kinetic and total energy for ``model``."""
    pot = model.potential if isinstance(model, HamiltonianModel) else model
    d = pot.dim
    return (
        [position(d, j) for j in range(d)]
        + [momentum(d, j) for j in range(d)]
        + [potential_energy(pot), kinetic_energy(d), total_energy(pot)]
    )
