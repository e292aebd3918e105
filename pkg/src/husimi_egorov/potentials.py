"""Potentials V(q) with derivatives through third order.

Every method broadcasts over leading axes: ``q`` has shape ``(..., d)`` and the
results have shapes ``(...)``, ``(..., d)``, ``(..., d, d)`` and ``(..., d, d, d)``.
Implementations must be pure so that they can be called from many workers.
"""

import numpy as np

from .exceptions import CapabilityError, ContractViolation

_FD_SCALE = np.cbrt(np.finfo(float).eps)


class Potential:
    """Base class for a smooth potential on R^d.

    Subclasses provide :meth:`value`, :meth:`gradient` and :meth:`hessian`.
    :meth:`third` falls back to central differences of the Hessian when a
    subclass has no analytic third derivative.
    """

    name = "potential"

    def __init__(self, dim):
        if int(dim) != dim or dim < 1:
            raise ContractViolation(f"dimension must be a positive integer, got {dim}")
        self.dim = int(dim)

    def __repr__(self):
        return f"{type(self).__name__}(dim={self.dim})"

    def _check(self, q):
        q = np.asarray(q, dtype=float)
        if q.shape[-1:] != (self.dim,):
            raise ContractViolation(
                f"{self.name}: expected trailing dimension {self.dim}, got shape {q.shape}"
            )
        return q

    def value(self, q):
        raise NotImplementedError

    def gradient(self, q):
        raise NotImplementedError

    def hessian(self, q):
        raise NotImplementedError

    def third(self, q):
        """Full third-derivative tensor ``T[..., i, j, k] = d_i d_j d_k V``."""
        q = self._check(q)
        step = _FD_SCALE * np.maximum(1.0, np.linalg.norm(q, axis=-1))
        out = np.empty(q.shape + (self.dim, self.dim))
        for i in range(self.dim):
            dq = np.zeros_like(q)
            dq[..., i] = step
            diff = self.hessian(q + dq) - self.hessian(q - dq)
            out[..., i, :, :] = diff / (2.0 * step)[..., None, None]
        return out

    def third_derivative(self, q, i):
        """Slice ``d_i D^2 V(q)`` of the third-derivative tensor."""
        if not 0 <= i < self.dim:
            raise ContractViolation(f"index {i} out of range for dimension {self.dim}")
        return self.third(q)[..., i, :, :]

    def laplacian(self, q):
        return np.trace(self.hessian(q), axis1=-2, axis2=-1)

    def grad_laplacian(self, q):
        return np.einsum("...ijj->...i", self.third(q))

    def gaussian_average(self, mean, var):
        """E[V(X)] for X ~ N(mean, var*Id).

        ``mean`` may be complex; the result is then the analytic continuation,
        which is what overlap integrals of shifted Gaussians need.
        """
        raise CapabilityError(f"{self.name} has no closed-form Gaussian average")


class FreeParticle(Potential):
    name = "free"

    def value(self, q):
        q = self._check(q)
        return np.zeros(q.shape[:-1])

    def gradient(self, q):
        return np.zeros_like(self._check(q))

    def hessian(self, q):
        q = self._check(q)
        return np.zeros(q.shape + (self.dim,))

    def third(self, q):
        q = self._check(q)
        return np.zeros(q.shape + (self.dim, self.dim))

    def gaussian_average(self, mean, var):
        return np.zeros(np.shape(mean)[:-1])


class Harmonic(Potential):
    """Isotropic oscillator ``V(q) = |q|^2 / 2``."""

    name = "harmonic"

    def value(self, q):
        q = self._check(q)
        return 0.5 * np.sum(q * q, axis=-1)

    def gradient(self, q):
        return self._check(q).copy()

    def hessian(self, q):
        q = self._check(q)
        return np.broadcast_to(np.eye(self.dim), q.shape + (self.dim,)).copy()

    def third(self, q):
        q = self._check(q)
        return np.zeros(q.shape + (self.dim, self.dim))

    def gaussian_average(self, mean, var):
        mean = np.asarray(mean)
        return 0.5 * np.sum(mean * mean, axis=-1) + 0.5 * self.dim * var


class Torsional(Potential):
    """``V(q) = sum_j (1 - cos q_j)``; for d=2 this is ``2 - cos q1 - cos q2``."""

    name = "torsional"

    def __init__(self, dim=2):
        super().__init__(dim)

    def value(self, q):
        q = self._check(q)
        return np.sum(1.0 - np.cos(q), axis=-1)

    def gradient(self, q):
        return np.sin(self._check(q))

    def hessian(self, q):
        q = self._check(q)
        out = np.zeros(q.shape + (self.dim,))
        idx = np.arange(self.dim)
        out[..., idx, idx] = np.cos(q)
        return out

    def third(self, q):
        q = self._check(q)
        out = np.zeros(q.shape + (self.dim, self.dim))
        idx = np.arange(self.dim)
        out[..., idx, idx, idx] = -np.sin(q)
        return out

    def laplacian(self, q):
        return np.sum(np.cos(self._check(q)), axis=-1)

    def grad_laplacian(self, q):
        return -np.sin(self._check(q))

    def gaussian_average(self, mean, var):
        mean = np.asarray(mean)
        return np.sum(1.0 - np.cos(mean) * np.exp(-0.5 * var), axis=-1)


class HenonHeiles(Potential):
    """Henon-Heiles chain

    ``V(q) = sum_j q_j^2/2 + sum_{j<d} [s (q_j q_{j+1}^2 - q_j^3/3)
    + s^2/16 (q_j^2 + q_{j+1}^2)^2]`` with coupling ``s = sigma``.
    """

    name = "henon-heiles"

    def __init__(self, dim=6, sigma=1.0 / np.sqrt(80.0)):
        super().__init__(dim)
        if dim < 2:
            raise ContractViolation("Henon-Heiles needs dim >= 2")
        self.sigma = float(sigma)

    def __repr__(self):
        return f"HenonHeiles(dim={self.dim}, sigma={self.sigma!r})"

    def value(self, q):
        q = self._check(q)
        s = self.sigma
        x, y = q[..., :-1], q[..., 1:]
        pair = s * (x * y**2 - x**3 / 3.0) + s**2 / 16.0 * (x**2 + y**2) ** 2
        return 0.5 * np.sum(q * q, axis=-1) + np.sum(pair, axis=-1)

    def gradient(self, q):
        q = self._check(q)
        s = self.sigma
        x, y = q[..., :-1], q[..., 1:]
        r2 = x**2 + y**2
        g = q.copy()
        g[..., :-1] += s * (y**2 - x**2) + 0.25 * s**2 * r2 * x
        g[..., 1:] += 2.0 * s * x * y + 0.25 * s**2 * r2 * y
        return g

    def hessian(self, q):
        q = self._check(q)
        s = self.sigma
        d = self.dim
        x, y = q[..., :-1], q[..., 1:]
        H = np.zeros(q.shape + (d,))
        i = np.arange(d - 1)
        idx = np.arange(d)
        H[..., idx, idx] = 1.0
        H[..., i, i] += -2.0 * s * x + 0.25 * s**2 * (3 * x**2 + y**2)
        H[..., i + 1, i + 1] += 2.0 * s * x + 0.25 * s**2 * (x**2 + 3 * y**2)
        off = 2.0 * s * y + 0.5 * s**2 * x * y
        H[..., i, i + 1] += off
        H[..., i + 1, i] += off
        return H

    def third(self, q):
        q = self._check(q)
        s = self.sigma
        d = self.dim
        x, y = q[..., :-1], q[..., 1:]
        T = np.zeros(q.shape + (d, d))
        i = np.arange(d - 1)
        j = i + 1
        T[..., i, i, i] += -2.0 * s + 1.5 * s**2 * x
        T[..., j, j, j] += 1.5 * s**2 * y
        xxy = 0.5 * s**2 * y
        xyy = 2.0 * s + 0.5 * s**2 * x
        for a, b, c in ((i, i, j), (i, j, i), (j, i, i)):
            T[..., a, b, c] += xxy
        for a, b, c in ((i, j, j), (j, i, j), (j, j, i)):
            T[..., a, b, c] += xyy
        return T

    def laplacian(self, q):
        q = self._check(q)
        x, y = q[..., :-1], q[..., 1:]
        return self.dim + self.sigma**2 * np.sum(x**2 + y**2, axis=-1)

    def grad_laplacian(self, q):
        q = self._check(q)
        g = np.zeros_like(q)
        g[..., :-1] += 2.0 * self.sigma**2 * q[..., :-1]
        g[..., 1:] += 2.0 * self.sigma**2 * q[..., 1:]
        return g

    def gaussian_average(self, mean, var):
        m = np.asarray(mean)
        s = self.sigma
        v = var
        m2 = m**2 + v
        m3 = m**3 + 3 * m * v
        m4 = m**4 + 6 * m**2 * v + 3 * v**2
        x1, y2 = m[..., :-1], m2[..., 1:]
        pair = (
            s * (x1 * y2 - m3[..., :-1] / 3.0)
            + s**2 / 16.0 * (m4[..., :-1] + 2 * m2[..., :-1] * m2[..., 1:] + m4[..., 1:])
        )
        return 0.5 * np.sum(m2, axis=-1) + np.sum(pair, axis=-1)


BUILTIN_POTENTIALS = {
    "free": FreeParticle,
    "harmonic": Harmonic,
    "torsional": Torsional,
    "henon-heiles": HenonHeiles,
}


def make_potential(name, dim=None, **kwargs):
    """Construct a built-in potential by name."""
    try:
        cls = BUILTIN_POTENTIALS[name]
    except KeyError:
        raise ContractViolation(
            f"unknown potential {name!r}; choose from {sorted(BUILTIN_POTENTIALS)}"
        ) from None
    if dim is not None:
        kwargs["dim"] = dim
    return cls(**kwargs)
