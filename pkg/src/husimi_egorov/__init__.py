"""Egorov-type semiclassical propagation of Husimi-sampled phase-space ensembles.

Typical use::

    from husimi_egorov import GaussianSuperposition, HusimiEgorovEstimator

    psi0 = GaussianSuperposition.single([1.0, 0.0, 0.0, 0.0], epsilon=0.05)
    est = HusimiEgorovEstimator("torsional", 0.05, n1=30_000, n2=3_000, t_final=5.0)
    series = est.fit(psi0).predict(["q1", "total"])
"""

from .estimator import (
    METHODS,
    ExpectationSeries,
    HusimiEgorovEstimator,
    compare_methods,
    estimate,
    evaluate_F,
)
from .exceptions import (
    CapabilityError,
    ConfigError,
    ContractViolation,
    StrategyError,
    ToleranceError,
    TrajectoryInstabilityError,
)
from .flow import (
    CorrectionState,
    IntegratorConfig,
    SplitVector,
    lambda_gamma_quadrature_oracle,
    propagate_correction,
    strang_step,
    yoshida6_flow,
)
from .phase_space import (
    HamiltonianModel,
    ObservableSymbol,
    PhasePoint,
    builtin_observables,
    correct_symbol,
)
from .potentials import FreeParticle, Harmonic, HenonHeiles, Potential, Torsional, make_potential
from .reference import GridState, SplitStepReference
from .sampling import SampleEnsemble, SobolGenerator, sample_gaussian_qmc, sample_superposition
from .states import (
    GaussianSuperposition,
    GaussianWavePacket,
    husimi_density,
    initial_expectation_oracle,
    smoothing_positivity_probe,
    wigner_density,
)

__version__ = "0.1.0"
