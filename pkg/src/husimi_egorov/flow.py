"""Corrected classical flow and the correction fields Lambda, Gamma.

The state carried per trajectory is (Phi, Lambda, Gamma) where Phi follows the
Hamiltonian flow of ``h_eps = h - eps/4 Delta h`` and

    Lambda' = M + M Lambda + Lambda M^T,             Lambda(0) = 0,
    Gamma'  = M Gamma + (tr(C_i^T Lambda))_i,        Gamma(0) = 0,

with ``M = J D^2 h(Phi)`` and ``(C_i)_{jk} = d_k (J D^2 h)_{ij}(Phi)``.

All routines act on a batch of trajectories at once: phase points have shape
``(n, 2d)``, Lambda has shape ``(n, 2d, 2d)`` and Gamma ``(n, 2d)``.
"""

from dataclasses import dataclass

import numpy as np

from ._validation import check_scalar, check_square
from .exceptions import ContractViolation, TrajectoryInstabilityError
from .phase_space import as_phase_array, symplectic_matrix

# Yoshida (1990), sixth order, solution B
_YOSHIDA6_B = (-2.13228522200144, 0.00426068187079180, 1.43984816797678)
_W0 = 1.0 - 2.0 * sum(_YOSHIDA6_B)
YOSHIDA6_WEIGHTS = np.array(
    [_YOSHIDA6_B[2], _YOSHIDA6_B[1], _YOSHIDA6_B[0], _W0, _YOSHIDA6_B[0], _YOSHIDA6_B[1], _YOSHIDA6_B[2]]
)

FORCES = ("h_eps", "h")
UPDATES = ("taylor2", "euler")


def vec_rowwise(A):
    """Row-wise vectorisation ``(a11, a12, ..., ann)`` of the trailing square block."""
    A = check_square(A)
    n = A.shape[-1]
    return np.ascontiguousarray(A).reshape(A.shape[:-2] + (n * n,))


def unvec_rowwise(v, n):
    v = np.asarray(v)
    return v.reshape(v.shape[:-1] + (n, n))


def kron(A, B):
    """Kronecker product of the trailing square blocks, broadcasting leading axes."""
    A = check_square(A, "A")
    B = check_square(B, "B")
    n, m = A.shape[-1], B.shape[-1]
    out = A[..., :, None, :, None] * B[..., None, :, None, :]
    return out.reshape(out.shape[:-4] + (n * m, n * m))


def build_M(model, phi):
    """``M = J D^2 h(phi) = [[0, Id], [-D^2 V(q), 0]]`` for each point."""
    Z = as_phase_array(phi, model.dim)
    d = model.dim
    M = np.zeros((len(Z), 2 * d, 2 * d))
    M[:, :d, d:] = np.eye(d)
    M[:, d:, :d] = -model.potential.hessian(Z[:, :d])
    return M


def build_C(model, phi):
    """Stack of ``C_i``, shape ``(n, 2d, 2d, 2d)`` indexed ``[n, i, j, k]``.

    ``C_i`` vanishes for the position rows ``i < d``; for ``i = d + a`` its
    q-block is ``-d_a D^2 V(q)``.
    """
    Z = as_phase_array(phi, model.dim)
    d = model.dim
    C = np.zeros((len(Z), 2 * d, 2 * d, 2 * d))
    C[:, d:, :d, :d] = -model.potential.third(Z[:, :d])
    return C


# --- structured products with M = [[0, I], [-H, 0]] -------------------------


def _m_left(H, X):
    """``M @ X`` for X of shape (n, 2d, k) or (n, 2d)."""
    d = H.shape[-1]
    if X.ndim == 2:
        return np.concatenate([X[:, d:], -np.einsum("nij,nj->ni", H, X[:, :d])], axis=1)
    return np.concatenate([X[:, d:, :], -np.matmul(H, X[:, :d, :])], axis=1)


def _m_right_t(H, X):
    """``X @ M^T`` for X of shape (n, 2d, 2d)."""
    d = H.shape[-1]
    return np.concatenate([X[:, :, d:], -np.matmul(X[:, :, :d], H)], axis=2)


def _m_matrix(H):
    n, d, _ = H.shape
    M = np.zeros((n, 2 * d, 2 * d))
    M[:, :d, d:] = np.eye(d)
    M[:, d:, :d] = -H
    return M


def _trace_c(T, L):
    """``(tr(C_i^T L))_i`` from the third-derivative tensor ``T`` of V."""
    n, d = T.shape[:2]
    out = np.zeros((n, 2 * d))
    out[:, d:] = -np.einsum("najk,njk->na", T, L[:, :d, :d])
    return out


def _correction_rhs(H, T, L, G):
    """Frozen-coefficient vector field of (Lambda, Gamma)."""
    dL = _m_matrix(H) + _m_left(H, L) + _m_right_t(H, L)
    dG = _m_left(H, G) + _trace_c(T, L)
    return dL, dG


def _advance_correction(H, T, L, G, s, update):
    """Advance (Lambda, Gamma) by ``s`` with coefficients frozen at (H, T).

    ``euler`` is the explicit half step of the three-stage display; ``taylor2``
    adds the second-order term of the exact frozen-coefficient flow, which
    keeps the composed scheme second order in all components.
    """
    dL, dG = _correction_rhs(H, T, L, G)
    if update == "euler":
        return L + s * dL, G + s * dG
    ddL = _m_left(H, dL) + _m_right_t(H, dL)
    ddG = _m_left(H, dG) + _trace_c(T, dL)
    return L + s * dL + 0.5 * s * s * ddL, G + s * dG + 0.5 * s * s * ddG


@dataclass
class CorrectionState:
    """Batch of (Phi, Lambda, Gamma) at time ``t``."""

    phi: np.ndarray
    lam: np.ndarray
    gamma: np.ndarray
    t: float = 0.0

    @classmethod
    def initial(cls, z, dim=None):
        Z = as_phase_array(z, dim)
        n, dd = Z.shape
        return cls(Z.copy(), np.zeros((n, dd, dd)), np.zeros((n, dd)), 0.0)

    @property
    def dim(self):
        return self.phi.shape[1] // 2


@dataclass
class SplitVector:
    """The splitting ``Upsilon = Upsilon_1 + Upsilon_2``.

    ``upsilon1`` holds (p, vec Lambda, Gamma) with shape ``(n, d + 4d^2 + 2d)``;
    ``upsilon2`` holds q with shape ``(n, d)``.
    """

    upsilon1: np.ndarray
    upsilon2: np.ndarray

    @property
    def dim(self):
        return self.upsilon2.shape[1]

    @classmethod
    def from_state(cls, state):
        d = state.dim
        u1 = np.concatenate(
            [state.phi[:, d:], vec_rowwise(state.lam), state.gamma], axis=1
        )
        return cls(u1, state.phi[:, :d].copy())

    def to_state(self, t=0.0):
        d = self.dim
        p = self.upsilon1[:, :d]
        lam = unvec_rowwise(self.upsilon1[:, d : d + 4 * d * d], 2 * d)
        gamma = self.upsilon1[:, d + 4 * d * d :]
        return CorrectionState(
            np.concatenate([self.upsilon2, p], axis=1), lam.copy(), gamma.copy(), t
        )

    def join(self):
        """Full vector (q, p, vec Lambda, Gamma) with ``4d + 4d^2`` components."""
        return np.concatenate([self.upsilon2, self.upsilon1], axis=1)

    @classmethod
    def split(cls, Y, dim):
        Y = np.asarray(Y, dtype=float)
        if Y.shape[1] != 4 * dim + 4 * dim * dim:
            raise ContractViolation("vector length does not match 4d + 4d^2")
        return cls(Y[:, dim:].copy(), Y[:, :dim].copy())


@dataclass(frozen=True)
class IntegratorConfig:
    """Step sizes for the leading flow (``h1``) and the correction system (``h2``)."""

    h1: float
    h2: float
    t_final: float

    def __post_init__(self):
        check_scalar(self.h1, "h1", positive=True)
        check_scalar(self.h2, "h2", positive=True)
        check_scalar(self.t_final, "t_final", nonnegative=True)

    def n_steps(self, h, t=None):
        t = self.t_final if t is None else t
        return int(np.floor(t / h + 1e-9))


def _force_fn(model, force):
    if force not in FORCES:
        raise ContractViolation(f"force must be one of {FORCES}, got {force!r}")
    if force == "h" or model.epsilon == 0:
        return lambda q: -model.potential.gradient(q)
    return model.effective_force


class _Evaluation:
    __slots__ = ("q", "F", "H", "T")

    def __init__(self, model, q, force_fn, need_correction=True):
        self.q = q
        self.F = force_fn(q)
        if need_correction:
            self.H = model.potential.hessian(q)
            self.T = model.potential.third(q)


def _strang(q, p, L, G, h, ev0, model, force_fn, update):
    s = 0.5 * h
    p = p + s * ev0.F
    L, G = _advance_correction(ev0.H, ev0.T, L, G, s, update)
    q = q + h * p
    ev1 = _Evaluation(model, q, force_fn)
    p = p + s * ev1.F
    L, G = _advance_correction(ev1.H, ev1.T, L, G, s, update)
    return q, p, L, G, ev1


def strang_step(state, model, h, force="h_eps", update="taylor2"):
    """One step ``F^h = phi_a^{h/2} phi_b^h phi_a^{h/2}`` of the split system.

    ``state`` is a :class:`SplitVector` or a :class:`CorrectionState`; the same
    type is returned. The position/momentum part is Stormer-Verlet with force
    ``-grad_q h_eps`` (or ``-grad V`` when ``force="h"``). ``h`` may be negative.
    """
    split_input = isinstance(state, SplitVector)
    st = state.to_state() if split_input else state
    d = st.dim
    force_fn = _force_fn(model, force)
    if update not in UPDATES:
        raise ContractViolation(f"update must be one of {UPDATES}")
    q, p = st.phi[:, :d], st.phi[:, d:]
    ev0 = _Evaluation(model, q, force_fn)
    q, p, L, G, _ = _strang(q, p, st.lam, st.gamma, h, ev0, model, force_fn, update)
    out = CorrectionState(np.concatenate([q, p], axis=1), L, G, st.t + h)
    return SplitVector.from_state(out) if split_input else out


def _check_escape(q, bound, t):
    r = np.max(np.abs(q), axis=1)
    bad = ~np.isfinite(r) | (r > bound)
    if np.any(bad):
        idx = np.flatnonzero(bad)
        raise TrajectoryInstabilityError(
            f"{idx.size} trajectories left |q| <= {bound:g} by t = {t:.6g} "
            f"(first indices {idx[:10].tolist()})",
            indices=idx,
        )


def propagate_correction(
    z,
    model,
    cfg,
    *,
    force="h_eps",
    update="taylor2",
    record_every=None,
    escape_radius=1e3,
    callback=None,
):
    """Integrate (Phi, Lambda, Gamma) from (z, 0, 0) by ``floor(t/h2)`` Strang steps.

    With ``record_every`` (a step count) ``callback(state)`` is invoked at step 0
    and every ``record_every`` steps. Returns the final :class:`CorrectionState`.
    """
    state = CorrectionState.initial(z, model.dim)
    d = model.dim
    n = cfg.n_steps(cfg.h2)
    force_fn = _force_fn(model, force)
    if update not in UPDATES:
        raise ContractViolation(f"update must be one of {UPDATES}")
    q, p, L, G = state.phi[:, :d].copy(), state.phi[:, d:].copy(), state.lam, state.gamma
    ev = _Evaluation(model, q, force_fn)
    if callback is not None and record_every:
        callback(state)
    h = cfg.h2
    for k in range(1, n + 1):
        q, p, L, G, ev = _strang(q, p, L, G, h, ev, model, force_fn, update)
        if escape_radius is not None and (k % 16 == 0 or k == n):
            _check_escape(q, escape_radius, k * h)
        if callback is not None and record_every and k % record_every == 0:
            callback(CorrectionState(np.concatenate([q, p], axis=1), L, G, k * h))
    return CorrectionState(np.concatenate([q, p], axis=1), L, G, n * h)


def _yoshida_steps(q, p, h, n, force_fn, F=None, on_step=None, escape_radius=None):
    """``n`` Yoshida-6 steps of kick-drift-kick Verlet with merged kicks."""
    w = YOSHIDA6_WEIGHTS * h
    if F is None:
        F = force_fn(q)
    for k in range(1, n + 1):
        p = p + 0.5 * w[0] * F
        for j in range(7):
            q = q + w[j] * p
            F = force_fn(q)
            kick = 0.5 * (w[j] + (w[j + 1] if j < 6 else 0.0))
            p = p + kick * F
        if escape_radius is not None and (k % 16 == 0 or k == n):
            _check_escape(q, escape_radius, k * h)
        if on_step is not None:
            on_step(k, q, p)
    return q, p, F


def yoshida6_flow(z, model, h1, t, *, force="h_eps", escape_radius=None):
    """Sixth-order symplectic approximation of the flow at time ``t``.

    Uses ``floor(t/h1)`` steps of size ``h1`` and, if ``t`` is not a multiple
    of ``h1``, one final partial step. ``t`` may be negative.
    """
    Z = as_phase_array(z, model.dim)
    check_scalar(h1, "h1", positive=True)
    d = model.dim
    force_fn = _force_fn(model, force)
    sign = 1.0 if t >= 0 else -1.0
    n = int(np.floor(abs(t) / h1 + 1e-9))
    rest = abs(t) - n * h1
    q, p = Z[:, :d].copy(), Z[:, d:].copy()
    q, p, F = _yoshida_steps(q, p, sign * h1, n, force_fn, escape_radius=escape_radius)
    if rest > 1e-12 * h1:
        q, p, _ = _yoshida_steps(q, p, sign * rest, 1, force_fn, F=F)
    return np.concatenate([q, p], axis=1)


# --- independent oracle for the integral representation ----------------------


def _rk4_flow_steps(Y, h, n, vector_field, on_step=None):
    for k in range(1, n + 1):
        k1 = vector_field(Y)
        k2 = vector_field(Y + 0.5 * h * k1)
        k3 = vector_field(Y + 0.5 * h * k2)
        k4 = vector_field(Y + h * k3)
        Y = Y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if on_step is not None:
            on_step(k, Y)
    return Y


def lambda_gamma_quadrature_oracle(z, model, t, fine_h=1e-3, n_tau=100, fd_step=1e-3):
    """Integral forms of Lambda and Gamma evaluated by brute force.

    ``Lambda~ = int_0^t (Jac^tau J D^2h Jac^tau^T)(Phi^{t-tau} z) dtau`` and
    ``Gamma~_i = int_0^t sum_kl (J D^2h)_kl d_k d_l Phi_i^tau (Phi^{t-tau} z) dtau``
    with ``Jac_il = d Phi_i / d z_l``. The corrected flow is integrated with
    classical RK4 at step ``fine_h``, its first and second derivatives are taken
    by central differences of step ``fd_step``, and the tau integral uses the
    composite trapezoidal rule on ``n_tau`` intervals.

    Meant for test-scale problems; cost grows like ``n_tau * (2d)^2``.
    """
    z = as_phase_array(z, model.dim)[0]
    d = model.dim
    dd = 2 * d
    S = int(round(t / fine_h))
    if S < 1 or abs(S * fine_h - t) > 1e-9 * max(1.0, t):
        raise ContractViolation("t must be a positive multiple of fine_h")
    if S % n_tau:
        raise ContractViolation("t / fine_h must be divisible by n_tau")
    stride = S // n_tau
    J = symplectic_matrix(d)

    def field(Y):
        q, p = Y[:, :d], Y[:, d:]
        return np.concatenate([p, model.effective_force(q)], axis=1)

    traj = np.empty((S + 1, dd))
    traj[0] = z
    _rk4_flow_steps(z[None, :], fine_h, S, field, on_step=lambda k, Y: traj.__setitem__(k, Y[0]))
    # base point for node k (tau_k = k*dtau) is Phi^{t - tau_k}(z)
    bases = traj[S - stride * np.arange(n_tau + 1)]

    offsets = [np.zeros(dd)]
    eye = np.eye(dd) * fd_step
    for k in range(dd):
        offsets += [eye[k], -eye[k]]
    pairs = [(k, l) for k in range(dd) for l in range(k + 1, dd)]
    for k, l in pairs:
        offsets += [eye[k] + eye[l], eye[k] - eye[l], -eye[k] + eye[l], -eye[k] - eye[l]]
    offsets = np.array(offsets)
    n_off = len(offsets)
    stencil = (bases[:, None, :] + offsets[None, :, :]).reshape(-1, dd)

    images = np.empty((n_tau + 1, n_off, dd))
    images[0] = stencil.reshape(n_tau + 1, n_off, dd)[0]

    def grab(k, Y):
        if k % stride == 0:
            node = k // stride
            images[node] = Y.reshape(n_tau + 1, n_off, dd)[node]

    _rk4_flow_steps(stencil, fine_h, S, field, on_step=grab)

    center = images[:, 0]
    plus, minus = images[:, 1 : 2 * dd + 1 : 2], images[:, 2 : 2 * dd + 2 : 2]
    # jac[node, i, l] = d Phi_i / d z_l
    jac = np.transpose((plus - minus) / (2 * fd_step), (0, 2, 1))
    hess = np.empty((n_tau + 1, dd, dd, dd))
    for k in range(dd):
        hess[:, :, k, k] = (plus[:, k] - 2 * center + minus[:, k]) / fd_step**2
    base = 1 + 2 * dd
    for m, (k, l) in enumerate(pairs):
        pp, pm, mp, mm = (images[:, base + 4 * m + r] for r in range(4))
        val = (pp - pm - mp + mm) / (4 * fd_step**2)
        hess[:, :, k, l] = val
        hess[:, :, l, k] = val

    D2h = np.zeros((n_tau + 1, dd, dd))
    D2h[:, :d, :d] = model.potential.hessian(bases[:, :d])
    D2h[:, d:, d:] = np.eye(d)
    JD2h = J @ D2h
    lam_integrand = jac @ JD2h @ np.transpose(jac, (0, 2, 1))
    gam_integrand = np.einsum("nkl,nikl->ni", JD2h, hess)
    taus = np.arange(n_tau + 1) * stride * fine_h
    lam = np.trapezoid(lam_integrand, taus, axis=0)
    gam = np.trapezoid(gam_integrand, taus, axis=0)
    return lam, gam
