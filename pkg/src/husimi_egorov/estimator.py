"""Expectation values of Weyl observables from propagated phase-space samples.

Three methods are available:

``husimi-corrected``
    Husimi nodes pushed through the corrected flow with symbol ``a_eps`` for the
    leading term, plus the correction ``-(eps/2) E[tr(Lambda D^2a) + Gamma . grad a]``
    estimated from a second, smaller Husimi ensemble. Error O(eps^2).
``husimi-naive``
    Husimi nodes, classical flow, symbol ``a``. Error O(eps).
``wigner``
    Wigner nodes of a single Gaussian, classical flow, symbol ``a``. Error O(eps^2).
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import check_phase_points, check_scalar
from .exceptions import CapabilityError, ContractViolation, TrajectoryInstabilityError
from .flow import IntegratorConfig, _force_fn, _yoshida_steps, propagate_correction
from .phase_space import HamiltonianModel, builtin_observables, correct_symbol
from .potentials import Potential, make_potential
from .sampling import sample_gaussian_qmc, sample_superposition
from .states import CROSS_TERM_NEGLECT, GaussianSuperposition, GaussianWavePacket

METHODS = ("husimi-corrected", "husimi-naive", "wigner")


def evaluate_F(a, state, epsilon):
    """Corrected pushed-forward symbol at the propagated points of ``state``.

    ``a_eps(Phi) - (eps/2) [tr(Lambda D^2 a(Phi)) + Gamma . grad a(Phi)]``,
    one value per trajectory.
    """
    phi = state.phi
    lead = correct_symbol(a, epsilon).value(phi)
    if epsilon == 0:
        return lead
    return lead - 0.5 * epsilon * _xi(a, state)


def _xi(a, state):
    """``tr(Lambda D^2 a(Phi)) + Gamma . grad a(Phi)`` per trajectory."""
    phi = state.phi
    tr = np.einsum("njk,nkj->n", state.lam, a.hess(phi))
    return tr + np.einsum("ni,ni->n", state.gamma, a.grad(phi))


@dataclass
class ExpectationSeries:
    """Expectation values on a time grid, one array per observable."""

    times: np.ndarray
    values: dict
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if self.times.ndim != 1 or np.any(np.diff(self.times) <= 0):
            raise ContractViolation("times must be a strictly increasing 1-D grid")
        for name, v in self.values.items():
            v = np.asarray(v, dtype=float)
            if v.shape != self.times.shape:
                raise ContractViolation(f"observable {name!r} has {v.size} values for {self.times.size} times")
            self.values[name] = v

    @property
    def observables(self):
        return list(self.values)

    @property
    def method(self):
        return self.metadata.get("method", "")

    def __getitem__(self, name):
        return self.values[name]

    def rows(self):
        """Yield ``(time, observable, value)`` in time-major order."""
        for k, t in enumerate(self.times):
            for name, v in self.values.items():
                yield t, name, v[k]

    def time_average(self, name):
        """Trapezoidal mean of an observable series over the time window."""
        v = self.values[name]
        if len(self.times) == 1:
            return float(v[0])
        return float(np.trapezoid(v, self.times) / (self.times[-1] - self.times[0]))


@dataclass
class SeriesDifference:
    times: np.ndarray
    differences: dict
    sup_norm: dict


def compare_methods(series_a, series_b):
    """Pointwise differences ``a - b`` and their sup norms over the time window."""
    if series_a.times.shape != series_b.times.shape or not np.allclose(
        series_a.times, series_b.times, rtol=0, atol=1e-12
    ):
        raise ContractViolation("series are recorded on different time grids")
    if set(series_a.values) != set(series_b.values):
        raise ContractViolation("series carry different observables")
    diff = {k: series_a[k] - series_b[k] for k in series_a.values}
    sup = {k: float(np.max(np.abs(v))) for k, v in diff.items()}
    return SeriesDifference(series_a.times.copy(), diff, sup)


def _as_potential(potential, dim):
    if isinstance(potential, Potential):
        return potential
    return make_potential(potential, dim=dim)


def resolve_observables(observables, potential):
    """Map names or symbols to symbols; ``None`` selects all built-ins."""
    builtin = {a.name: a for a in builtin_observables(potential)}
    if observables is None:
        return list(builtin.values())
    out = []
    for a in observables:
        if isinstance(a, str):
            try:
                a = builtin[a]
            except KeyError:
                raise ContractViolation(
                    f"unknown observable {a!r}; built-ins are {sorted(builtin)}"
                ) from None
        out.append(a)
    if not out:
        raise ContractViolation("at least one observable is required")
    names = [a.name for a in out]
    if len(set(names)) != len(names):
        raise ContractViolation("observable names must be unique")
    return out


def _record_stride(record_every, h, t_final):
    if record_every is None or record_every <= 0 or record_every > t_final:
        # only the initial and final times
        return None
    k = record_every / h
    if abs(k - round(k)) > 1e-6 * max(1.0, k):
        raise ContractViolation(
            f"record_every={record_every} is not a multiple of the step {h}"
        )
    return int(round(k))


class HusimiEgorovEstimator(BaseEstimator):
    """Time-evolved expectation values from phase-space samples.

    Parameters
    ----------
    potential : str or Potential
        Built-in potential name (``free``, ``harmonic``, ``torsional``,
        ``henon-heiles``) or a :class:`~husimi_egorov.potentials.Potential`.
    epsilon : float
        Semiclassical parameter.
    method : {"husimi-corrected", "husimi-naive", "wigner"}
    n1, n2 : int
        Node counts for the leading term and for the correction term.
    h1, h2 : float
        Steps of the leading flow (Yoshida-6) and of the correction system (Strang).
    t_final : float
    record_every : float
        Spacing of the output time grid; must be a multiple of ``h1`` and ``h2``.
    sampling : {"auto", "qmc", "mcmc"}
        ``auto`` uses Sobol points unless a superposition has a non-negligible
        cross term, in which case Metropolis chains are used.
    seed : int
        Seed for Metropolis chains (Sobol nodes are deterministic).
    force : {"h_eps", "h"}
        Force used for the Phi-part of the correction system.
    update : {"taylor2", "euler"}
        Realisation of the Lambda/Gamma half steps (see :func:`~husimi_egorov.flow.strang_step`).
    escape_radius : float
        Trajectories with ``max |q_j|`` beyond this abort the run.
    chunk_size : int
        Nodes per work unit; results do not depend on ``n_threads``.
    n_threads : int
    dim : int, optional
        Dimension for built-in potentials that accept one.
    """

    def __init__(
        self,
        potential="torsional",
        epsilon=0.1,
        method="husimi-corrected",
        n1=10_000,
        n2=1_000,
        h1=1e-2,
        h2=1e-3,
        t_final=1.0,
        record_every=0.1,
        sampling="auto",
        seed=0,
        force="h_eps",
        update="taylor2",
        escape_radius=1e3,
        chunk_size=8192,
        n_threads=1,
        dim=None,
    ):
        self.potential = potential
        self.epsilon = epsilon
        self.method = method
        self.n1 = n1
        self.n2 = n2
        self.h1 = h1
        self.h2 = h2
        self.t_final = t_final
        self.record_every = record_every
        self.sampling = sampling
        self.seed = seed
        self.force = force
        self.update = update
        self.escape_radius = escape_radius
        self.chunk_size = chunk_size
        self.n_threads = n_threads
        self.dim = dim

    # -- fitting: build the model and draw nodes ---------------------------------

    def _validate_params(self):
        if self.method not in METHODS:
            raise ContractViolation(f"method must be one of {METHODS}, got {self.method!r}")
        check_scalar(self.epsilon, "epsilon", nonnegative=True)
        check_scalar(self.n1, "n1", positive=True, integer=True)
        if self.method == "husimi-corrected":
            check_scalar(self.n2, "n2", positive=True, integer=True)
            if self.n2 > self.n1:
                raise ContractViolation("n2 must not exceed n1")
        check_scalar(self.chunk_size, "chunk_size", positive=True, integer=True)
        check_scalar(self.n_threads, "n_threads", positive=True, integer=True)
        if self.sampling not in ("auto", "qmc", "mcmc"):
            raise ContractViolation("sampling must be 'auto', 'qmc' or 'mcmc'")
        IntegratorConfig(self.h1, self.h2, self.t_final)

    def _strategy(self, psi0):
        if self.sampling == "mcmc":
            return "mcmc"
        if self.sampling == "qmc":
            return "qmc-split"
        return "qmc-split" if psi0.cross_term_bound() < CROSS_TERM_NEGLECT else "mcmc"

    def fit(self, X, y=None, correction_nodes=None):
        """Draw the quadrature nodes for the initial state.

        ``X`` is a :class:`GaussianSuperposition` (or a single wave packet), or an
        ``(n1, 2d)`` array of precomputed leading-term nodes; in the latter case
        ``correction_nodes`` supplies the ``(n2, 2d)`` correction nodes when the
        corrected method is used.
        """
        self._validate_params()
        pot = _as_potential(self.potential, self.dim)
        self.model_ = HamiltonianModel(pot, float(self.epsilon))
        d = pot.dim
        if isinstance(X, GaussianWavePacket):
            X = GaussianSuperposition((X,))
        self.sampling_info_ = {}
        if isinstance(X, GaussianSuperposition):
            if X.dim != d:
                raise ContractViolation("initial state and potential have different dimensions")
            if not np.isclose(X.epsilon, self.epsilon, rtol=1e-12):
                raise ContractViolation("initial state was built for a different epsilon")
            self.psi0_ = X
            if self.method == "wigner":
                if len(X.packets) != 1:
                    raise CapabilityError("the Wigner method is restricted to single Gaussians")
                ens = sample_gaussian_qmc(X.packets[0].center, 0.5 * self.epsilon, self.n1)
                self.nodes_ = ens.nodes
                self.sampling_info_["leading"] = ens.metadata | {"provenance": "qmc"}
                self.correction_nodes_ = None
            else:
                strategy = self._strategy(X)
                ens = sample_superposition(X, self.n1, strategy, seed=[self.seed, 0])
                self.nodes_ = ens.nodes
                self.sampling_info_["leading"] = ens.metadata | {"provenance": ens.provenance}
                self.correction_nodes_ = None
                if self.method == "husimi-corrected":
                    ens2 = sample_superposition(
                        X, self.n2, strategy, seed=[self.seed, 1], dim_offset=2 * d
                    )
                    self.correction_nodes_ = ens2.nodes
                    self.sampling_info_["correction"] = ens2.metadata | {"provenance": ens2.provenance}
        else:
            self.psi0_ = None
            self.nodes_ = check_phase_points(X, d, "X")
            self.correction_nodes_ = None
            if self.method == "husimi-corrected":
                if correction_nodes is None:
                    raise ContractViolation("correction_nodes are required for the corrected method")
                self.correction_nodes_ = check_phase_points(correction_nodes, d, "correction_nodes")
        self.n_features_in_ = 2 * d
        return self

    # -- prediction: propagate and average -----------------------------------------

    def _check_fitted(self):
        if not hasattr(self, "nodes_"):
            raise ContractViolation("call fit() before predict()")

    def _time_grid(self):
        strides = []
        for h in (self.h1, self.h2) if self.method == "husimi-corrected" else (self.h1,):
            strides.append(_record_stride(self.record_every, h, self.t_final))
        n1 = IntegratorConfig(self.h1, self.h2, self.t_final).n_steps(self.h1)
        if strides[0] is None:
            times = np.array([0.0, n1 * self.h1]) if n1 else np.array([0.0])
            return times, [None] * len(strides)
        n_rec = n1 // strides[0]
        return np.arange(n_rec + 1) * strides[0] * self.h1, strides

    def _map_chunks(self, fn, n):
        starts = list(range(0, n, self.chunk_size))
        if self.n_threads == 1 or len(starts) == 1:
            return [fn(s) for s in starts]
        with ThreadPoolExecutor(self.n_threads) as pool:
            return list(pool.map(fn, starts))

    def _leading_sums(self, symbols, times, stride):
        """Per-time sums of the symbols along the Yoshida-6 flow of all nodes."""
        model = self.model_
        d = model.dim
        force = "h_eps" if self.method == "husimi-corrected" else "h"
        force_fn = _force_fn(model, force)
        n_steps = IntegratorConfig(self.h1, self.h2, self.t_final).n_steps(self.h1)
        Z = self.nodes_
        if stride is None:
            record_steps = {n_steps: len(times) - 1, 0: 0}
        else:
            record_steps = {k * stride: k for k in range(len(times))}

        def run(start):
            chunk = Z[start : start + self.chunk_size]
            out = np.zeros((len(times), len(symbols)))

            def record(k, q, p):
                slot = record_steps.get(k)
                if slot is not None:
                    P = np.concatenate([q, p], axis=1)
                    out[slot] = [np.sum(a.value(P)) for a in symbols]

            record(0, chunk[:, :d], chunk[:, d:])
            try:
                _yoshida_steps(
                    chunk[:, :d].copy(), chunk[:, d:].copy(), self.h1, n_steps, force_fn,
                    on_step=record, escape_radius=self.escape_radius,
                )
            except TrajectoryInstabilityError as exc:
                raise TrajectoryInstabilityError(
                    f"leading flow: {exc}", indices=np.asarray(exc.indices) + start
                ) from None
            return out

        return np.sum(self._map_chunks(run, len(Z)), axis=0)

    def _correction_sums(self, symbols, times, stride):
        model = self.model_
        cfg = IntegratorConfig(self.h1, self.h2, self.t_final)
        Z = self.correction_nodes_
        n2_steps = cfg.n_steps(self.h2)
        # Leading and correction grids coincide at multiples of record_every; the
        # final time of a run without recording is matched by step count.
        if stride is None:
            slots = {n2_steps: len(times) - 1, 0: 0}
        else:
            slots = {k * stride: k for k in range(len(times))}

        def run(start):
            chunk = Z[start : start + self.chunk_size]
            out = np.zeros((len(times), len(symbols)))

            def record(state):
                k = int(round(state.t / self.h2))
                slot = slots.get(k)
                if slot is not None:
                    out[slot] = [np.sum(_xi(a, state)) for a in symbols]

            try:
                propagate_correction(
                    chunk, model, cfg, force=self.force, update=self.update,
                    record_every=stride or n2_steps or 1, escape_radius=self.escape_radius,
                    callback=record,
                )
            except TrajectoryInstabilityError as exc:
                raise TrajectoryInstabilityError(
                    f"correction flow: {exc}", indices=np.asarray(exc.indices) + start
                ) from None
            return out

        return np.sum(self._map_chunks(run, len(Z)), axis=0)

    def predict(self, observables=None):
        """Expectation values of ``observables`` on the recording grid.

        ``observables`` are :class:`~husimi_egorov.phase_space.ObservableSymbol`
        instances or built-in names; ``None`` selects all built-ins.
        """
        self._check_fitted()
        symbols = resolve_observables(observables, self.model_.potential)
        times, strides = self._time_grid()
        eps = self.model_.epsilon
        if self.method == "husimi-corrected":
            lead_symbols = [correct_symbol(a, eps) for a in symbols]
        else:
            lead_symbols = symbols
        lead = self._leading_sums(lead_symbols, times, strides[0]) / len(self.nodes_)
        values = lead
        if self.method == "husimi-corrected":
            corr = self._correction_sums(symbols, times, strides[1])
            values = lead - 0.5 * eps * corr / len(self.correction_nodes_)
        meta = {
            "method": self.method,
            "epsilon": eps,
            "n1": len(self.nodes_),
            "n2": 0 if self.correction_nodes_ is None else len(self.correction_nodes_),
            "h1": self.h1,
            "h2": self.h2,
            "seed": self.seed,
            "sampling": self.sampling_info_,
        }
        return ExpectationSeries(
            times, {a.name: values[:, j] for j, a in enumerate(symbols)}, meta
        )

    def fit_predict(self, X, observables=None, correction_nodes=None):
        return self.fit(X, correction_nodes=correction_nodes).predict(observables)


def estimate(psi0, observables, model, cfg=None, **params):
    """Functional wrapper: ``HusimiEgorovEstimator(**params).fit(psi0).predict(observables)``.

    ``model`` is a :class:`HamiltonianModel`; ``cfg`` an optional
    :class:`IntegratorConfig` overriding ``h1``, ``h2`` and ``t_final``.
    """
    if cfg is not None:
        params.update(h1=cfg.h1, h2=cfg.h2, t_final=cfg.t_final)
    est = HusimiEgorovEstimator(potential=model.potential, epsilon=model.epsilon, **params)
    return est.fit(psi0).predict(observables)
