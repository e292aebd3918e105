"""Grid reference for ``i eps d_t psi = -(eps^2/2) Delta psi + V psi`` in one or two dimensions.

Strang splitting with Fourier collocation on a periodic box ``prod [-L_j, L_j)``:

    psi <- exp(-i V h / 2eps) IFFT[ exp(-i eps h |xi|^2 / 2) FFT[ exp(-i V h / 2eps) psi ] ],

with wavenumbers ``xi = pi m / L``. Consecutive potential half steps are merged
between recording times.
"""

import re
import warnings
from dataclasses import dataclass, replace

import numpy as np
import scipy.fft as sfft
from sklearn.base import BaseEstimator

from ._validation import check_scalar
from .exceptions import CapabilityError, ContractViolation
from .estimator import ExpectationSeries, _as_potential, _record_stride
from .phase_space import HamiltonianModel
from .states import GaussianSuperposition, GaussianWavePacket

#: Mass fraction allowed in the outer 10% of the wavenumber band.
ALIASING_TOLERANCE = 1e-10

_HEADER_RE = re.compile(
    r"husimi-egorov-grid v1 shape=(?P<shape>[\d,]+) L=(?P<L>[^ ]+) "
    r"epsilon=(?P<eps>[^ ]+) t=(?P<t>[^ ]+)"
)


@dataclass
class GridState:
    """Wave function samples on a uniform periodic grid."""

    L: tuple
    psi: np.ndarray
    epsilon: float
    t: float = 0.0

    def __post_init__(self):
        self.psi = np.asarray(self.psi, dtype=complex)
        self.L = tuple(float(x) for x in np.broadcast_to(self.L, (self.psi.ndim,)))
        for n in self.psi.shape:
            if n < 2 or n & (n - 1):
                raise ContractViolation(f"grid sizes must be powers of two, got {self.psi.shape}")
        if self.psi.ndim not in (1, 2):
            raise CapabilityError("grids are supported in one and two dimensions")
        check_scalar(self.epsilon, "epsilon", positive=True)

    @property
    def shape(self):
        return self.psi.shape

    @property
    def dim(self):
        return self.psi.ndim

    @property
    def cell_volume(self):
        return float(np.prod([2 * L / n for L, n in zip(self.L, self.shape)]))

    def axes(self):
        return [-L + 2 * L * np.arange(n) / n for L, n in zip(self.L, self.shape)]

    def positions(self):
        """Grid coordinates, shape ``shape + (d,)``."""
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"), axis=-1)

    def wavenumbers(self):
        """``xi = pi m / L`` in FFT order, shape ``shape + (d,)``."""
        ks = [np.pi * sfft.fftfreq(n, d=1.0 / n) / L for L, n in zip(self.L, self.shape)]
        return np.stack(np.meshgrid(*ks, indexing="ij"), axis=-1)

    def norm(self):
        return float(np.sum(np.abs(self.psi) ** 2) * self.cell_volume)

    @classmethod
    def from_state(cls, psi0, L, n):
        if isinstance(psi0, GaussianWavePacket):
            psi0 = GaussianSuperposition((psi0,))
        d = psi0.dim
        L = np.broadcast_to(np.asarray(L, dtype=float), (d,))
        n = np.broadcast_to(np.asarray(n, dtype=int), (d,))
        axes = [-Lj + 2 * Lj * np.arange(nj) / nj for Lj, nj in zip(L, n)]
        X = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        return cls(tuple(L), psi0(X), psi0.epsilon, 0.0)


def _potential_on_grid(potential, state):
    if potential.dim != state.dim:
        raise ContractViolation("potential and grid have different dimensions")
    return potential.value(state.positions())


def split_step(state, model, h, n_steps=1, workers=None):
    """Advance ``state`` by ``n_steps`` Strang steps of size ``h``; returns a new state."""
    V = _potential_on_grid(model.potential, state)
    kin = np.exp(-0.5j * state.epsilon * h * np.sum(state.wavenumbers() ** 2, axis=-1))
    half = np.exp(-0.5j * h * V / state.epsilon)
    psi = _advance(state.psi, half, kin, n_steps, workers)
    return replace(state, psi=psi, t=state.t + n_steps * h)


def _advance(psi, half, kin, n_steps, workers):
    if n_steps == 0:
        return psi.copy()
    full = half * half
    psi = half * psi
    for k in range(n_steps):
        psi = sfft.ifftn(kin * sfft.fftn(psi, workers=workers), workers=workers)
        psi *= full if k < n_steps - 1 else half
    return psi


def grid_expectations(state, potential):
    """Position, momentum, potential, kinetic and total energy of a grid state.

    Positions and V use ``|psi|^2``; momenta use the discrete Fourier density
    with ``p = eps xi``.
    """
    rho = np.abs(state.psi) ** 2
    mass = rho.sum()
    X = state.positions()
    out = {}
    for j in range(state.dim):
        out[f"q{j + 1}"] = float(np.sum(X[..., j] * rho) / mass)
    phat = np.abs(sfft.fftn(state.psi)) ** 2
    pmass = phat.sum()
    P = state.epsilon * state.wavenumbers()
    for j in range(state.dim):
        out[f"p{j + 1}"] = float(np.sum(P[..., j] * phat) / pmass)
    pot = float(np.sum(potential.value(X) * rho) / mass)
    kin = float(0.5 * np.sum(np.sum(P * P, axis=-1) * phat) / pmass)
    out["potential"] = pot
    out["kinetic"] = kin
    out["total"] = pot + kin
    return out


def aliasing_mass(state):
    """Fraction of the momentum density in the outer 10% of the wavenumber band."""
    phat = np.abs(sfft.fftn(state.psi)) ** 2
    xi = state.wavenumbers()
    xi_max = np.array([np.pi * (n // 2) / L for L, n in zip(state.L, state.shape)])
    outer = np.any(np.abs(xi) >= 0.9 * xi_max, axis=-1)
    return float(phat[outer].sum() / phat.sum())


def boundary_mass(state):
    """Fraction of the position density in the outer 10% of the box."""
    rho = np.abs(state.psi) ** 2
    X = state.positions()
    outer = np.any(np.abs(X) >= 0.9 * np.asarray(state.L), axis=-1)
    return float(rho[outer].sum() / rho.sum())


def save_checkpoint(state, path):
    """Write a text header line followed by little-endian complex64 samples."""
    header = "husimi-egorov-grid v1 shape={} L={} epsilon={!r} t={!r}\n".format(
        ",".join(str(n) for n in state.shape),
        ",".join(repr(L) for L in state.L),
        state.epsilon,
        state.t,
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(np.ascontiguousarray(state.psi, dtype="<c8").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").strip()
        m = _HEADER_RE.fullmatch(header)
        if m is None:
            raise ContractViolation(f"{path}: not a grid checkpoint")
        shape = tuple(int(x) for x in m["shape"].split(","))
        data = np.frombuffer(fh.read(), dtype="<c8")
    if data.size != np.prod(shape):
        raise ContractViolation(f"{path}: expected {np.prod(shape)} samples, found {data.size}")
    L = tuple(float(x) for x in m["L"].split(","))
    return GridState(L, data.reshape(shape).astype(complex), float(m["eps"]), float(m["t"]))


GRID_OBSERVABLES = ("q", "p", "potential", "kinetic", "total")


class SplitStepReference(BaseEstimator):
    """Reference expectation values on a grid, with the estimator's interface.

    Parameters
    ----------
    potential : str or Potential
    epsilon : float
    L : float or sequence
        Half-width of the box per axis.
    n : int or sequence
        Grid points per axis (powers of two).
    h : float
        Time step.
    t_final, record_every : float
    workers : int, optional
        Threads for the FFTs.
    strict : bool
        Raise instead of warning when the aliasing guard trips.
    """

    def __init__(
        self, potential="torsional", epsilon=0.1, L=3.0, n=512, h=1e-3, t_final=1.0,
        record_every=0.1, workers=None, strict=False, dim=None,
    ):
        self.potential = potential
        self.epsilon = epsilon
        self.L = L
        self.n = n
        self.h = h
        self.t_final = t_final
        self.record_every = record_every
        self.workers = workers
        self.strict = strict
        self.dim = dim

    def fit(self, psi0):
        check_scalar(self.h, "h", positive=True)
        check_scalar(self.t_final, "t_final", nonnegative=True)
        pot = _as_potential(self.potential, self.dim)
        self.model_ = HamiltonianModel(pot, float(self.epsilon))
        self.initial_ = GridState.from_state(psi0, self.L, self.n)
        if not np.isclose(self.initial_.epsilon, self.epsilon, rtol=1e-12):
            raise ContractViolation("initial state was built for a different epsilon")
        return self

    def predict(self, observables=None):
        """Propagate and record the grid observables; sets ``final_`` and ``diagnostics_``."""
        state = self.initial_
        pot = self.model_.potential
        names = list(grid_expectations(state, pot))
        if observables is not None:
            wanted = [getattr(a, "name", a) for a in observables]
            unknown = [w for w in wanted if w not in names]
            if unknown:
                raise CapabilityError(f"grid observables are {names}; cannot compute {unknown}")
            if not wanted:
                raise ContractViolation("at least one observable is required")
            names = wanted
        n_steps = int(np.floor(self.t_final / self.h + 1e-9))
        stride = _record_stride(self.record_every, self.h, self.t_final) or max(n_steps, 1)
        V = _potential_on_grid(pot, state)
        kin = np.exp(-0.5j * state.epsilon * self.h * np.sum(state.wavenumbers() ** 2, axis=-1))
        half = np.exp(-0.5j * self.h * V / state.epsilon)
        times, rows, alias, edge = [], [], [], []

        def record(st):
            ex = grid_expectations(st, pot)
            times.append(st.t)
            rows.append([ex[k] for k in names])
            alias.append(aliasing_mass(st))
            edge.append(boundary_mass(st))

        record(state)
        done = 0
        while done < n_steps:
            k = min(stride, n_steps - done)
            psi = _advance(state.psi, half, kin, k, self.workers)
            done += k
            state = replace(state, psi=psi, t=done * self.h)
            record(state)
        self.final_ = state
        self.diagnostics_ = {
            "max_aliasing_mass": max(alias),
            "max_boundary_mass": max(edge),
            "norm_drift": abs(state.norm() - self.initial_.norm()),
            "under_resolved": max(alias) >= ALIASING_TOLERANCE,
        }
        if self.diagnostics_["under_resolved"]:
            msg = (
                f"grid under-resolved: momentum mass {max(alias):.2e} in the outer "
                f"10% of the band exceeds {ALIASING_TOLERANCE:g}"
            )
            if self.strict:
                raise ContractViolation(msg)
            warnings.warn(msg, RuntimeWarning, stacklevel=2)
        rows = np.array(rows)
        meta = {
            "method": "reference",
            "epsilon": self.epsilon,
            "L": self.L,
            "n": self.n,
            "h": self.h,
            **self.diagnostics_,
        }
        return ExpectationSeries(np.array(times), {k: rows[:, j] for j, k in enumerate(names)}, meta)
