"""Quadrature nodes for phase-space densities.

Quasi-Monte Carlo nodes are unscrambled Sobol points mapped through the
inverse normal CDF; Markov chain nodes come from a Metropolis sampler whose
proposal mixes a local random walk with independent jumps between modes.
"""

from dataclasses import dataclass, field
from importlib import resources

import numpy as np
from scipy.special import ndtri

from ._validation import check_scalar
from .exceptions import CapabilityError, ContractViolation, StrategyError
from .phase_space import PhasePoint, as_phase_array
from .states import (
    CROSS_TERM_NEGLECT,
    GaussianSuperposition,
    GaussianWavePacket,
    husimi_density,
)

_BITS = 32
_TABLE_FILE = "new-joe-kuo-64.txt"
_TABLE_CACHE = {}


def load_direction_table(path=None):
    """Parse a direction-number table in the ``d s a m_1 ... m_s`` layout.

    Returns a dict mapping the dimension index (2, 3, ...) to ``(s, a, m)``.
    Dimension 1 is implicit (all ``m_k = 1``).
    """
    key = path or _TABLE_FILE
    if key in _TABLE_CACHE:
        return _TABLE_CACHE[key]
    if path is None:
        text = resources.files(__package__).joinpath("data", _TABLE_FILE).read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    table = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        parts = line.split()
        if not parts or not parts[0].isdigit():
            continue
        d, s, a = (int(x) for x in parts[:3])
        m = [int(x) for x in parts[3:]]
        if len(m) != s:
            raise ContractViolation(f"direction table line {lineno}: expected {s} values")
        table[d] = (s, a, m)
    _TABLE_CACHE[key] = table
    return table


def _direction_integers(s, a, m):
    """The ``_BITS`` direction integers ``V_k = m_k 2^(B-k)`` of one coordinate."""
    V = [0] * (_BITS + 1)
    if s == 0:
        for k in range(1, _BITS + 1):
            V[k] = 1 << (_BITS - k)
        return V[1:]
    for k in range(1, min(s, _BITS) + 1):
        V[k] = m[k - 1] << (_BITS - k)
    for k in range(s + 1, _BITS + 1):
        v = V[k - s] ^ (V[k - s] >> s)
        for j in range(1, s):
            v ^= ((a >> (s - 1 - j)) & 1) * V[k - j]
        V[k] = v
    return V[1:]


class SobolGenerator:
    """Unscrambled Sobol sequence in Gray-code order.

    Point ``i`` is the XOR of the direction numbers selected by the bits of the
    Gray code ``i ^ (i >> 1)``, so any index can be produced directly. The
    generator keeps a cursor (starting at 1, skipping the all-zero point 0)
    that :meth:`draw` advances; :meth:`points` is stateless.

    ``dim_offset`` selects coordinates ``dim_offset .. dim_offset + dimension - 1``
    of the underlying sequence, which gives statistically distinct streams.
    """

    def __init__(self, dimension, dim_offset=0, table=None, start=1):
        self.dimension = check_scalar(dimension, "dimension", positive=True, integer=True)
        self.dim_offset = check_scalar(dim_offset, "dim_offset", nonnegative=True, integer=True)
        self.table_name = table or _TABLE_FILE
        directions = load_direction_table(table)
        top = self.dim_offset + self.dimension
        if top > len(directions) + 1:
            raise CapabilityError(
                f"direction table supports {len(directions) + 1} dimensions, {top} requested"
            )
        rows = []
        for j in range(self.dim_offset, top):
            s, a, m = (0, 0, []) if j == 0 else directions[j + 1]
            rows.append(_direction_integers(s, a, m))
        # V[k, j]: k-th direction integer of coordinate j
        self._V = np.array(rows, dtype=np.uint64).T
        self.index = check_scalar(start, "start", nonnegative=True, integer=True)

    def __repr__(self):
        return (
            f"SobolGenerator(dimension={self.dimension}, dim_offset={self.dim_offset}, "
            f"index={self.index})"
        )

    def points(self, start, n):
        """Points ``start, ..., start + n - 1`` as an ``(n, dimension)`` array."""
        start = check_scalar(start, "start", nonnegative=True, integer=True)
        n = check_scalar(n, "n", nonnegative=True, integer=True)
        if start + n > 2**_BITS:
            raise CapabilityError(f"Sobol index beyond 2^{_BITS}")
        idx = np.arange(start, start + n, dtype=np.uint64)
        gray = idx ^ (idx >> np.uint64(1))
        X = np.zeros((n, self.dimension), dtype=np.uint64)
        for k in range(_BITS):
            bit = ((gray >> np.uint64(k)) & np.uint64(1)).astype(bool)
            if not bit.any():
                if (gray >> np.uint64(k)).max(initial=0) == 0:
                    break
                continue
            X[bit] ^= self._V[k]
        return X.astype(float) / float(2**_BITS)

    def point(self, i):
        return self.points(i, 1)[0]

    def draw(self, n):
        """Return the next ``n`` points and advance the cursor."""
        out = self.points(self.index, n)
        self.index += n
        return out


def sobol_point(gen, i):
    return gen.point(i)


def inverse_normal_cdf(u):
    """Standard normal quantile; raises for arguments outside (0, 1)."""
    u = np.asarray(u, dtype=float)
    if not np.all((u > 0) & (u < 1)):
        raise ContractViolation("inverse normal CDF needs arguments in the open interval (0, 1)")
    out = ndtri(u)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class SampleEnsemble:
    """Equal-weight quadrature nodes with their provenance."""

    nodes: np.ndarray
    provenance: str
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.provenance not in ("qmc", "mcmc"):
            raise ContractViolation(f"unknown provenance {self.provenance!r}")
        nodes = np.array(self.nodes, dtype=float)
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)

    def __len__(self):
        return len(self.nodes)

    @property
    def weights(self):
        return np.full(len(self.nodes), 1.0 / len(self.nodes))

    @property
    def dim(self):
        return self.nodes.shape[1] // 2

    def mean(self, values):
        """Equal-weight quadrature of per-node ``values``."""
        return float(np.mean(values))


def _center_array(center):
    if isinstance(center, PhasePoint):
        return center.as_array()
    return as_phase_array(center)[0]


def sample_gaussian_qmc(center, covariance_scale, N, gen=None, dim_offset=0):
    """``N`` nodes ``center + sqrt(scale) * Phi^{-1}(sobol_i)`` of ``N(center, scale Id)``.

    Without ``gen`` a fresh generator is used, so the nodes are Sobol points
    ``1..N``; with ``gen`` its cursor supplies and advances the indices.
    """
    c = _center_array(center)
    N = check_scalar(N, "N", positive=True, integer=True)
    scale = check_scalar(covariance_scale, "covariance_scale", nonnegative=True)
    if gen is None:
        gen = SobolGenerator(c.size, dim_offset=dim_offset)
    elif gen.dimension != c.size:
        raise ContractViolation("generator dimension does not match the phase space")
    start = gen.index
    U = gen.draw(N)
    nodes = c + np.sqrt(scale) * ndtri(U)
    return SampleEnsemble(
        nodes, "qmc", {"start_index": start, "dim_offset": gen.dim_offset, "scale": scale}
    )


def metropolis_acceptance(target_current, target_proposed, q_forward=1.0, q_backward=1.0):
    """Metropolis-Hastings acceptance probability ``min(1, pi(y) q(x|y) / (pi(x) q(y|x)))``."""
    num = np.asarray(target_proposed, dtype=float) * q_backward
    den = np.asarray(target_current, dtype=float) * q_forward
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        ratio = np.where(den > 0, num / np.where(den > 0, den, 1.0), 1.0)
    return np.minimum(1.0, ratio)


class MetropolisChain:
    """Metropolis sampler for a phase-space density.

    With probability ``1 - jump_probability`` a step is a Gaussian random walk
    of width ``step``; otherwise the proposal is an independent draw from the
    equal mixture of ``N(c, jump_variance Id)`` over the jump centres. Both
    kernels are reversible with respect to ``target``, and so is their mixture.

    Several chains can be advanced together (``n_chains``); they are
    independent, and the output is concatenated chain by chain.
    """

    def __init__(
        self,
        target,
        start,
        seed=0,
        step=None,
        jump_centers=(),
        jump_probability=0.1,
        jump_variance=None,
        burn_in=1000,
        n_chains=1,
    ):
        self.target = target
        self.dim = target.dim
        x0 = as_phase_array(start, self.dim)
        eps = getattr(target, "epsilon", 1.0)
        self.step = float(np.sqrt(eps) if step is None else step)
        self.jump_variance = float(eps if jump_variance is None else jump_variance)
        self.jump_centers = np.array(jump_centers, dtype=float).reshape(-1, 2 * self.dim)
        self.jump_probability = float(jump_probability) if len(self.jump_centers) else 0.0
        if not 0 <= self.jump_probability <= 1:
            raise ContractViolation("jump_probability must lie in [0, 1]")
        self.burn_in = check_scalar(burn_in, "burn_in", nonnegative=True, integer=True)
        self.n_chains = check_scalar(n_chains, "n_chains", positive=True, integer=True)
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.state = np.repeat(x0[:1], self.n_chains, axis=0)
        self._density = self.target(self.state)
        if not np.all(self._density > 0):
            raise ContractViolation("chain must start where the target density is positive")
        self.accepted = 0
        self.proposed = 0

    def _jump_density(self, Z):
        v = self.jump_variance
        diff = Z[:, None, :] - self.jump_centers[None, :, :]
        r2 = np.sum(diff * diff, axis=2)
        dens = np.exp(-r2 / (2 * v)) * (2 * np.pi * v) ** (-self.dim)
        return dens.mean(axis=1)

    def step_once(self):
        rng = self.rng
        K, D = self.state.shape
        jump = rng.random(K) < self.jump_probability
        noise = rng.standard_normal((K, D))
        which = rng.integers(len(self.jump_centers), size=K) if len(self.jump_centers) else None
        u = rng.random(K)
        prop = self.state + self.step * noise
        qf = np.ones(K)
        qb = np.ones(K)
        if jump.any():
            prop[jump] = self.jump_centers[which[jump]] + np.sqrt(self.jump_variance) * noise[jump]
            qf[jump] = self._jump_density(prop[jump])
            qb[jump] = self._jump_density(self.state[jump])
        dens = self.target(prop)
        alpha = metropolis_acceptance(self._density, dens, qf, qb)
        accept = u < alpha
        self.state = np.where(accept[:, None], prop, self.state)
        self._density = np.where(accept, dens, self._density)
        self.accepted += int(accept.sum())
        self.proposed += K
        return self.state

    def run(self, n):
        """Discard ``burn_in`` steps, then return ``n`` states (chain-major order)."""
        n = check_scalar(n, "n", positive=True, integer=True)
        for _ in range(self.burn_in):
            self.step_once()
        per_chain = -(-n // self.n_chains)
        out = np.empty((per_chain, self.n_chains, 2 * self.dim))
        for k in range(per_chain):
            out[k] = self.step_once()
        return np.transpose(out, (1, 0, 2)).reshape(-1, 2 * self.dim)[:n]

    @property
    def acceptance_rate(self):
        return self.accepted / self.proposed if self.proposed else float("nan")


def _as_superposition(psi0):
    if isinstance(psi0, GaussianWavePacket):
        return GaussianSuperposition((psi0,))
    return psi0


def sample_superposition(
    psi0, N, strategy="qmc-split", seed=0, dim_offset=0, burn_in=1000, n_chains=1, **chain_kw
):
    """Nodes distributed according to the Husimi function of ``psi0``.

    ``qmc-split`` samples each packet's Gaussian with a share of the ``N``
    points proportional to its mass; it is only admissible when the cross
    term is negligible. ``mcmc`` runs :class:`MetropolisChain` with jumps
    between ``z1``, ``z2`` and their midpoint, seeded by ``seed``.
    """
    psi0 = _as_superposition(psi0)
    N = check_scalar(N, "N", positive=True, integer=True)
    eps = psi0.epsilon
    if strategy == "qmc-split":
        bound = psi0.cross_term_bound()
        if bound >= CROSS_TERM_NEGLECT:
            raise StrategyError(
                f"cross term envelope {bound:.3g} is not negligible; use strategy='mcmc'"
            )
        if len(psi0.packets) == 1:
            return sample_gaussian_qmc(psi0.packets[0].center, eps, N, dim_offset=dim_offset)
        masses = np.array([abs(p.weight) ** 2 for p in psi0.packets])
        n_first = int(round(N * masses[0] / masses.sum()))
        n_first = min(max(n_first, 0), N)
        parts = []
        for packet, n in zip(psi0.packets, (n_first, N - n_first)):
            if n:
                parts.append(sample_gaussian_qmc(packet.center, eps, n, dim_offset=dim_offset).nodes)
        return SampleEnsemble(
            np.concatenate(parts),
            "qmc",
            {"start_index": 1, "dim_offset": dim_offset, "split": (n_first, N - n_first)},
        )
    if strategy == "mcmc":
        centers = psi0.centers
        jumps = list(centers)
        if len(centers) == 2:
            jumps.append(centers.mean(axis=0))
        chain = MetropolisChain(
            husimi_density(psi0),
            centers[0],
            seed=seed,
            jump_centers=jumps,
            burn_in=burn_in,
            n_chains=n_chains,
            **chain_kw,
        )
        nodes = chain.run(N)
        return SampleEnsemble(
            nodes,
            "mcmc",
            {
                "seed": seed,
                "burn_in": burn_in,
                "n_chains": n_chains,
                "acceptance_rate": chain.acceptance_rate,
            },
        )
    raise StrategyError(f"unknown sampling strategy {strategy!r}")
