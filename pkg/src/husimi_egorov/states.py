"""Gaussian wave packets, their Wigner and Husimi functions, and initial expectations.

The wave packets are the isotropic semiclassical Gaussians

    g_{z0}(q) = (pi eps)^{-d/4} exp(-|q - q0|^2 / (2 eps) + i p0.(q - q0) / eps),

whose Husimi function is the normal density N(z0, eps Id) on phase space and
whose Wigner function is N(z0, eps/2 Id).
"""

from dataclasses import dataclass, field

import numpy as np

from ._validation import check_scalar
from .exceptions import CapabilityError, ContractViolation, ToleranceError
from .phase_space import PhasePoint, as_phase_array, symplectic_matrix

#: Cross terms whose envelope bound falls below this are dropped by the sampler.
CROSS_TERM_NEGLECT = 1e-12


@dataclass(frozen=True)
class GaussianWavePacket:
    center: PhasePoint
    epsilon: float
    weight: complex = 1.0

    def __post_init__(self):
        if not isinstance(self.center, PhasePoint):
            object.__setattr__(self, "center", PhasePoint.from_array(self.center))
        check_scalar(self.epsilon, "epsilon", positive=True)
        object.__setattr__(self, "weight", complex(self.weight))

    @property
    def dim(self):
        return self.center.dim

    def __call__(self, q):
        """Evaluate the (unweighted) packet at positions ``q`` of shape ``(..., d)``."""
        q = np.asarray(q, dtype=float)
        q0, p0, eps = self.center.q, self.center.p, self.epsilon
        dq = q - q0
        return (np.pi * eps) ** (-self.dim / 4) * np.exp(
            -np.sum(dq * dq, axis=-1) / (2 * eps) + 1j * (dq @ p0) / eps
        )


def gaussian_overlap(z1, z2, epsilon):
    """``<g_{z1}, g_{z2}>`` for unit-weight packets (complex)."""
    z1 = np.asarray(z1, dtype=float)
    z2 = np.asarray(z2, dtype=float)
    d = z1.size // 2
    q1, p1, q2, p2 = z1[:d], z1[d:], z2[:d], z2[d:]
    zm = z1 - z2
    phase = ((p2 - p1) @ (0.5 * (q1 + q2)) + p1 @ q1 - p2 @ q2) / epsilon
    return np.exp(-(zm @ zm) / (4 * epsilon)) * np.exp(1j * phase)


@dataclass(frozen=True)
class GaussianSuperposition:
    """Normalised ``psi0 = c (w1 g_{z1} + w2 g_{z2})`` with one or two packets."""

    packets: tuple
    normalization: float = field(init=False)

    def __post_init__(self):
        packets = tuple(self.packets)
        if not 1 <= len(packets) <= 2:
            raise ContractViolation(
                "superpositions of more than two packets are not supported"
            )
        eps = {p.epsilon for p in packets}
        dims = {p.dim for p in packets}
        if len(eps) != 1 or len(dims) != 1:
            raise ContractViolation("packets must share epsilon and dimension")
        object.__setattr__(self, "packets", packets)
        norm2 = sum(abs(p.weight) ** 2 for p in packets)
        if len(packets) == 2:
            a, b = packets
            ov = gaussian_overlap(a.center.as_array(), b.center.as_array(), a.epsilon)
            norm2 += 2 * np.real(np.conj(a.weight) * b.weight * ov)
        if not norm2 > 0:
            raise ContractViolation("superposition has zero norm")
        object.__setattr__(self, "normalization", float(1.0 / np.sqrt(norm2)))

    @classmethod
    def single(cls, center, epsilon):
        return cls((GaussianWavePacket(_as_point(center), epsilon),))

    @classmethod
    def pair(cls, z1, z2, epsilon):
        return cls(
            (
                GaussianWavePacket(_as_point(z1), epsilon),
                GaussianWavePacket(_as_point(z2), epsilon),
            )
        )

    @property
    def epsilon(self):
        return self.packets[0].epsilon

    @property
    def dim(self):
        return self.packets[0].dim

    @property
    def centers(self):
        return np.array([p.center.as_array() for p in self.packets])

    def __call__(self, q):
        return self.normalization * sum(p.weight * p(q) for p in self.packets)

    def cross_term_bound(self):
        """Envelope bound of the cross term; 0 for a single packet."""
        if len(self.packets) == 1:
            return 0.0
        z1, z2 = self.centers
        return cross_term_envelope(z1, z2, self.epsilon)


def _as_point(z):
    return z if isinstance(z, PhasePoint) else PhasePoint.from_array(z)


def husimi_of_gaussian(g, z):
    """``(2 pi eps)^{-d} exp(-|z - z0|^2 / (2 eps))`` at each row of ``z``."""
    Z = as_phase_array(z, g.dim)
    dz = Z - g.center.as_array()
    eps = g.epsilon
    return (2 * np.pi * eps) ** (-g.dim) * np.exp(-np.sum(dz * dz, axis=1) / (2 * eps))


def wigner_of_gaussian(g, z):
    """``(pi eps)^{-d} exp(-|z - z0|^2 / eps)``, the N(z0, eps/2 Id) density."""
    Z = as_phase_array(z, g.dim)
    dz = Z - g.center.as_array()
    eps = g.epsilon
    return (np.pi * eps) ** (-g.dim) * np.exp(-np.sum(dz * dz, axis=1) / eps)


def cross_term_envelope(z1, z2, epsilon):
    """``(2 pi eps)^{-d} exp(-|z1 - z2|^2 / (8 eps))``."""
    z1 = np.asarray(z1, dtype=float)
    z2 = np.asarray(z2, dtype=float)
    d = z1.size // 2
    zm = z1 - z2
    return (2 * np.pi * epsilon) ** (-d) * np.exp(-(zm @ zm) / (8 * epsilon))


def _cross_phase(z1, z2, epsilon, Z):
    d = z1.size // 2
    zm = z1 - z2
    c12 = z1[:d] @ z1[d:] - z2[:d] @ z2[d:]
    Jz = Z @ symplectic_matrix(d).T
    return (c12 + Jz @ zm) / (2 * epsilon)


def husimi_cross_term(z1, z2, epsilon, z):
    """Interference term C of ``H(g1 + g2) = H(g1) + H(g2) + 2 C``.

    ``C(z) = (2 pi eps)^{-d} exp(-|z_-|^2/(8 eps)) exp(-|z - z_+|^2/(2 eps))
    cos((c12 + Jz.z_-) / (2 eps))`` with ``z_+ = (z1+z2)/2``, ``z_- = z1 - z2``
    and ``c12 = q1.p1 - q2.p2``.
    """
    z1 = np.asarray(z1, dtype=float).ravel()
    z2 = np.asarray(z2, dtype=float).ravel()
    Z = as_phase_array(z, z1.size // 2)
    zp = 0.5 * (z1 + z2)
    dz = Z - zp
    env = cross_term_envelope(z1, z2, epsilon)
    return (
        env
        * np.exp(-np.sum(dz * dz, axis=1) / (2 * epsilon))
        * np.cos(_cross_phase(z1, z2, epsilon, Z))
    )


class PhaseSpaceDensity:
    """Callable probability density on phase space.

    ``kind`` is one of ``"husimi-gaussian"``, ``"husimi-superposition"`` or
    ``"wigner-gaussian"``.
    """

    def __init__(self, kind, state):
        if kind not in ("husimi-gaussian", "husimi-superposition", "wigner-gaussian"):
            raise ContractViolation(f"unknown density kind {kind!r}")
        self.kind = kind
        self.state = state
        self.dim = state.dim
        self.epsilon = state.epsilon
        self.centers = state.centers
        self.covariance_scale = self.epsilon / 2 if kind == "wigner-gaussian" else self.epsilon

    def __repr__(self):
        return f"PhaseSpaceDensity({self.kind!r}, centers={self.centers.tolist()})"

    def __call__(self, z):
        Z = as_phase_array(z, self.dim)
        state = self.state
        if self.kind == "wigner-gaussian":
            return wigner_of_gaussian(state.packets[0], Z)
        packets = state.packets
        out = sum(abs(p.weight) ** 2 * husimi_of_gaussian(p, Z) for p in packets)
        if len(packets) == 2:
            a, b = packets
            z1, z2 = a.center.as_array(), b.center.as_array()
            dz = Z - 0.5 * (z1 + z2)
            envelope = cross_term_envelope(z1, z2, self.epsilon) * np.exp(
                -np.sum(dz * dz, axis=1) / (2 * self.epsilon)
            )
            rot = np.conj(a.weight) * b.weight * np.exp(1j * _cross_phase(z1, z2, self.epsilon, Z))
            out = out + 2 * envelope * np.real(rot)
        return state.normalization**2 * out


def husimi_density(psi0):
    if isinstance(psi0, GaussianWavePacket):
        psi0 = GaussianSuperposition((psi0,))
    kind = "husimi-gaussian" if len(psi0.packets) == 1 else "husimi-superposition"
    return PhaseSpaceDensity(kind, psi0)


def wigner_density(psi0):
    if isinstance(psi0, GaussianWavePacket):
        psi0 = GaussianSuperposition((psi0,))
    if len(psi0.packets) != 1:
        raise CapabilityError("Wigner densities are only available for single Gaussians")
    return PhaseSpaceDensity("wigner-gaussian", psi0)


def _odd_test_state(v):
    return v * np.exp(-v * v)


def smoothing_positivity_probe(sigma_over_eps, epsilon=1.0, psi=None, tol=1e-13):
    """Value of ``(W(psi) * G_{sigma/2})(0, 0)`` in one dimension.

    The momentum convolution is done in closed form, leaving

        (pi sigma)^{-1/2} (2 pi eps)^{-1} int int psi(x - y/2) conj(psi(x + y/2))
            exp(-x^2/sigma - sigma y^2 / (4 eps^2)) dy dx,

    which is evaluated by the trapezoidal rule on a truncated square, doubling
    the resolution until two successive values agree to ``tol``. The default
    ``psi`` is the odd state ``v exp(-v^2)``.
    """
    check_scalar(sigma_over_eps, "sigma_over_eps", positive=True)
    check_scalar(epsilon, "epsilon", positive=True)
    psi = _odd_test_state if psi is None else psi
    sigma = sigma_over_eps * epsilon
    # the integrand decays at least like the slower of these Gaussian widths
    wx = np.sqrt(min(sigma, 1.0))
    wy = min(2 * epsilon / np.sqrt(sigma), 2.0)
    x_half, y_half = 12 * max(wx, 1.0), 12 * max(wy, 1.0)
    previous = None
    n = 64
    while n <= 4096:
        x = np.linspace(-x_half, x_half, n + 1)
        y = np.linspace(-y_half, y_half, n + 1)
        X, Y = np.meshgrid(x, y, indexing="ij")
        f = (
            psi(X - Y / 2)
            * np.conj(psi(X + Y / 2))
            * np.exp(-X * X / sigma - sigma * Y * Y / (4 * epsilon**2))
        )
        val = np.real(np.trapezoid(np.trapezoid(f, y, axis=1), x))
        val *= (np.pi * sigma) ** -0.5 / (2 * np.pi * epsilon)
        if previous is not None and abs(val - previous) <= tol:
            return float(val)
        previous = val
        n *= 2
    raise ToleranceError("positivity probe quadrature did not converge")


def _complex_gaussian_average(kind, mean, var, potential):
    """E[f(X)] for X ~ N(mean, var Id) continued analytically to complex ``mean``.

    ``kind`` describes f as a function of a single d-vector (positions, or
    momenta after the Fourier swap).
    """
    tag = kind[0]
    if tag == "coordinate":
        return mean[kind[1]]
    if tag == "square":
        return 0.5 * np.sum(mean * mean) + 0.5 * mean.size * var
    if tag == "potential":
        if potential is None:
            raise CapabilityError("potential observable needs the potential model")
        return potential.gaussian_average(mean, var)
    raise CapabilityError(f"no closed form for {kind}")


def _pair_expectation(zj, zk, eps, fkind, potential, momentum_side):
    d = zj.size // 2
    if momentum_side:
        # F(g_z) = exp(-i q.p / eps) g_{(p, -q)}
        phase = np.exp(1j * (zj[:d] @ zj[d:] - zk[:d] @ zk[d:]) / eps)
        zj = np.concatenate([zj[d:], -zj[:d]])
        zk = np.concatenate([zk[d:], -zk[:d]])
    else:
        phase = 1.0
    ov = gaussian_overlap(zj, zk, eps)
    mean = 0.5 * (zj[:d] + zk[:d]) + 0.5j * (zk[d:] - zj[d:])
    return phase * ov * _complex_gaussian_average(fkind, mean, eps / 2, potential)


def _split_kind(kind):
    """Map an observable kind to (position part, momentum part) function kinds."""
    tag = kind[0] if kind else None
    if tag == "position":
        return [(("coordinate", kind[1]), False)]
    if tag == "momentum":
        return [(("coordinate", kind[1]), True)]
    if tag == "kinetic":
        return [(("square",), True)]
    if tag == "potential":
        return [(("potential",), False)]
    if tag == "total":
        return [(("square",), True), (("potential",), False)]
    raise CapabilityError(f"no closed-form initial expectation for observable kind {kind!r}")


def initial_expectation_oracle(psi0, a, potential=None):
    """Exact ``<psi0, op^We(a) psi0>`` from Gaussian moments.

    Supports positions, momenta, kinetic, potential and total energy (and
    linear combinations of these). Potential terms need ``potential`` with a
    closed-form :meth:`~husimi_egorov.potentials.Potential.gaussian_average`.
    """
    if isinstance(psi0, GaussianWavePacket):
        psi0 = GaussianSuperposition((psi0,))
    kind = a.kind if hasattr(a, "kind") else tuple(a)
    if kind and kind[0] == "combination":
        _, kinds, coeffs = kind
        return sum(
            c * initial_expectation_oracle(psi0, k, potential) for k, c in zip(kinds, coeffs)
        )
    eps = psi0.epsilon
    total = 0.0 + 0.0j
    for fkind, momentum_side in _split_kind(kind):
        for pj in psi0.packets:
            for pk in psi0.packets:
                total += (
                    np.conj(pj.weight)
                    * pk.weight
                    * _pair_expectation(
                        pj.center.as_array(), pk.center.as_array(), eps, fkind, potential, momentum_side
                    )
                )
    return float(np.real(total) * psi0.normalization**2)
