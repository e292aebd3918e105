import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from husimi_egorov.exceptions import ContractViolation, TrajectoryInstabilityError
from husimi_egorov.flow import (
    YOSHIDA6_WEIGHTS,
    CorrectionState,
    IntegratorConfig,
    SplitVector,
    build_C,
    build_M,
    kron,
    lambda_gamma_quadrature_oracle,
    propagate_correction,
    strang_step,
    unvec_rowwise,
    vec_rowwise,
    yoshida6_flow,
)
from husimi_egorov.phase_space import HamiltonianModel, eval_h_eps, symplectic_matrix
from husimi_egorov.potentials import FreeParticle, Harmonic, HenonHeiles, Torsional

finite = st.floats(-2, 2, allow_nan=False)


def torsional(eps, d=2):
    return HamiltonianModel(Torsional(dim=d), eps)


def run(model, z, h, t, update="taylor2"):
    state = CorrectionState.initial(z, model.dim)
    for _ in range(int(round(t / h))):
        state = strang_step(state, model, h, update=update)
    return state


def flat(state):
    return np.concatenate([state.phi.ravel(), state.lam.ravel(), state.gamma.ravel()])


def test_kron_vec_identity_random():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(100):
        n = rng.integers(1, 7)
        A, X, B = rng.normal(size=(3, n, n))
        lhs = vec_rowwise(A @ X @ B.T)
        rhs = kron(A, B) @ vec_rowwise(X)
        worst = max(worst, np.max(np.abs(lhs - rhs)) / max(1.0, np.max(np.abs(lhs))))
    assert worst < 1e-13


def test_kron_matches_numpy_and_batches():
    rng = np.random.default_rng(1)
    A, B = rng.normal(size=(2, 5, 3, 3))
    K = kron(A, B)
    assert K.shape == (5, 9, 9)
    for k in range(5):
        np.testing.assert_array_equal(K[k], np.kron(A[k], B[k]))


@given(arrays(float, (4, 4), elements=finite))
def test_vec_roundtrip(A):
    np.testing.assert_array_equal(unvec_rowwise(vec_rowwise(A), 4), A)
    np.testing.assert_array_equal(vec_rowwise(A), A.ravel())


def test_vec_rejects_non_square():
    with pytest.raises(ContractViolation):
        vec_rowwise(np.zeros((2, 3)))


def test_build_M_is_J_times_hessian():
    model = HamiltonianModel(HenonHeiles(dim=3), 0.1)
    Z = np.random.default_rng(2).normal(size=(4, 6)) * 0.3
    M = build_M(model, Z)
    J = symplectic_matrix(3)
    for k in range(4):
        D2h = np.zeros((6, 6))
        D2h[:3, :3] = model.potential.hessian(Z[k : k + 1, :3])[0]
        D2h[3:, 3:] = np.eye(3)
        np.testing.assert_allclose(M[k], J @ D2h)


def test_build_C_is_derivative_of_M():
    model = HamiltonianModel(Torsional(dim=2), 0.1)
    z = np.array([[0.4, -0.7, 0.2, 0.1]])
    C = build_C(model, z)[0]
    step = 1e-5
    for k in range(4):
        e = np.zeros(4)
        e[k] = step
        dM = (build_M(model, z + e)[0] - build_M(model, z - e)[0]) / (2 * step)
        np.testing.assert_allclose(C[:, :, k], dM, atol=1e-8)


@given(st.integers(1, 3), st.integers(1, 4), st.data())
def test_split_vector_roundtrip(d, n, data):
    dd = 2 * d
    phi = data.draw(arrays(float, (n, dd), elements=finite))
    lam = data.draw(arrays(float, (n, dd, dd), elements=finite))
    gamma = data.draw(arrays(float, (n, dd), elements=finite))
    sv = SplitVector.from_state(CorrectionState(phi, lam, gamma))
    assert sv.upsilon1.shape == (n, d + 4 * d * d + 2 * d) and sv.upsilon2.shape == (n, d)
    back = SplitVector.split(sv.join(), d).to_state()
    np.testing.assert_array_equal(back.phi, phi)
    np.testing.assert_array_equal(back.lam, lam)
    np.testing.assert_array_equal(back.gamma, gamma)


def test_split_vector_length_check():
    with pytest.raises(ContractViolation):
        SplitVector.split(np.zeros((1, 7)), 1)


def test_strang_step_accepts_both_state_types():
    model = torsional(0.1)
    st0 = CorrectionState.initial([0.3, 0.2, 0.1, -0.4])
    a = strang_step(st0, model, 0.01)
    b = strang_step(SplitVector.from_state(st0), model, 0.01)
    assert isinstance(b, SplitVector)
    np.testing.assert_allclose(b.to_state().phi, a.phi)
    np.testing.assert_allclose(b.to_state().lam, a.lam)


def test_strang_validates_options():
    st0 = CorrectionState.initial([0.3, 0.2, 0.1, -0.4])
    with pytest.raises(ContractViolation):
        strang_step(st0, torsional(0.1), 0.01, force="x")
    with pytest.raises(ContractViolation):
        strang_step(st0, torsional(0.1), 0.01, update="rk4")


def test_free_particle_closed_form():
    # Lambda(t) = [[t^2/2 I, t I], [0, 0]], Gamma = 0
    model = HamiltonianModel(FreeParticle(2), 0.1)
    state = run(model, [0.1, 0.2, 0.3, -0.4], 0.1, 1.0)
    expected = np.zeros((4, 4))
    expected[:2, :2] = 0.5 * np.eye(2)
    expected[:2, 2:] = np.eye(2)
    np.testing.assert_allclose(state.lam[0], expected, atol=1e-12)
    np.testing.assert_allclose(state.gamma[0], 0, atol=1e-14)
    np.testing.assert_allclose(state.phi[0], [0.4, -0.2, 0.3, -0.4], atol=1e-14)


def test_harmonic_lambda_grows_linearly():
    model = HamiltonianModel(Harmonic(2), 0.1)
    J = symplectic_matrix(2)
    state = propagate_correction([[0.7, -0.2, 0.1, 0.5]], model, IntegratorConfig(0.01, 0.01, 2.5))
    np.testing.assert_allclose(state.lam[0], 2.5 * J, atol=1e-10)
    np.testing.assert_allclose(state.gamma[0], 0, atol=1e-14)


@pytest.mark.parametrize("update,expected", [("taylor2", 4.0), ("euler", 2.0)])
def test_strang_order(update, expected):
    model = torsional(0.1)
    z = [0.6, -0.3, 0.5, 0.2]
    ref = flat(run(model, z, 1e-3 / 4, 1.0, update))
    errs = [np.max(np.abs(flat(run(model, z, h, 1.0, update)) - ref)) for h in (0.04, 0.02)]
    assert errs[0] / errs[1] == pytest.approx(expected, rel=0.15)


def test_strang_position_part_is_reversible():
    model = torsional(0.05)
    st0 = CorrectionState.initial(np.random.default_rng(3).normal(size=(5, 4)) * 0.5)
    st1 = strang_step(strang_step(st0, model, 0.05), model, -0.05)
    np.testing.assert_allclose(st1.phi, st0.phi, atol=1e-13)


def test_propagate_records_and_escape():
    model = torsional(0.1)
    seen = []
    cfg = IntegratorConfig(0.01, 0.01, 0.5)
    propagate_correction([[0.1, 0.2, 0.0, 0.0]], model, cfg, record_every=10, callback=seen.append)
    assert [round(s.t, 10) for s in seen] == [0.0, 0.1, 0.2, 0.3, 0.4, 0.5]
    free = HamiltonianModel(FreeParticle(1), 0.1)
    with pytest.raises(TrajectoryInstabilityError) as info:
        propagate_correction([[0.0, 0.1], [0.0, 50.0]], free, IntegratorConfig(0.1, 0.1, 1.0), escape_radius=10)
    assert list(info.value.indices) == [1]


def test_yoshida_weights_sum_to_one():
    assert YOSHIDA6_WEIGHTS.sum() == pytest.approx(1.0, abs=1e-14)
    np.testing.assert_allclose(YOSHIDA6_WEIGHTS, YOSHIDA6_WEIGHTS[::-1])


def test_yoshida_harmonic_exact_rotation():
    model = HamiltonianModel(Harmonic(1), 0.0)
    out = yoshida6_flow([[1.0, 0.5]], model, 0.05, 3.0)
    np.testing.assert_allclose(out[0], [np.cos(3) + 0.5 * np.sin(3), -np.sin(3) + 0.5 * np.cos(3)], atol=1e-9)


def test_yoshida_order_and_partial_step():
    model = torsional(0.1)
    z = np.array([[0.6, -0.3, 0.5, 0.2]])
    ref = yoshida6_flow(z, model, 1e-3, 2.0)
    e1 = np.max(np.abs(yoshida6_flow(z, model, 0.2, 2.0) - ref))
    e2 = np.max(np.abs(yoshida6_flow(z, model, 0.1, 2.0) - ref))
    assert 40 < e1 / e2 < 90
    # 2.05 = 20 steps of 0.1 plus a step of 0.05
    a = yoshida6_flow(z, model, 0.1, 2.05)
    b = yoshida6_flow(z, model, 0.05, 2.05)
    assert np.max(np.abs(a - b)) < 1e-6


def test_yoshida_backward_inverts_forward():
    model = torsional(0.1)
    z = np.array([[0.6, -0.3, 0.5, 0.2]])
    back = yoshida6_flow(yoshida6_flow(z, model, 0.01, 1.3), model, 0.01, -1.3)
    np.testing.assert_allclose(back, z, atol=1e-12)


@settings(max_examples=10, deadline=None)
@given(arrays(float, (1, 4), elements=st.floats(-0.8, 0.8)))
def test_yoshida_conserves_h_eps_and_is_symplectic(z):
    model = torsional(0.1)
    out = yoshida6_flow(z, model, 0.02, 1.0)
    assert abs(eval_h_eps(model, out)[0] - eval_h_eps(model, z)[0]) < 1e-8
    step = 1e-6
    jac = np.empty((4, 4))
    for k in range(4):
        e = np.zeros((1, 4))
        e[0, k] = step
        jac[:, k] = (yoshida6_flow(z + e, model, 0.02, 1.0) - yoshida6_flow(z - e, model, 0.02, 1.0))[0] / (2 * step)
    J = symplectic_matrix(2)
    np.testing.assert_allclose(jac.T @ J @ jac, J, atol=1e-6)


def test_oracle_exact_cases():
    harm = HamiltonianModel(Harmonic(1), 0.1)
    lam, gamma = lambda_gamma_quadrature_oracle([0.5, 0.2], harm, 1.0, fine_h=1e-2, n_tau=20)
    np.testing.assert_allclose(lam, symplectic_matrix(1), atol=1e-6)
    np.testing.assert_allclose(gamma, 0, atol=1e-6)
    free = HamiltonianModel(FreeParticle(1), 0.1)
    lam, gamma = lambda_gamma_quadrature_oracle([0.5, 0.2], free, 2.0, fine_h=1e-2, n_tau=20)
    np.testing.assert_allclose(lam, [[2.0, 2.0], [0.0, 0.0]], atol=1e-6)


def test_oracle_argument_checks():
    model = torsional(0.1, 1)
    with pytest.raises(ContractViolation):
        lambda_gamma_quadrature_oracle([0.1, 0.1], model, 1.0005, fine_h=1e-3)
    with pytest.raises(ContractViolation):
        lambda_gamma_quadrature_oracle([0.1, 0.1], model, 1.0, fine_h=1e-2, n_tau=30)


def test_ode_and_oracle_agree_at_small_epsilon():
    """The two representations differ only at O(eps) for an anharmonic potential."""
    model = torsional(0.01, 1)
    z = [0.8, 0.3]
    ode = propagate_correction([z], model, IntegratorConfig(1e-3, 1e-3, 1.0))
    lam, gamma = lambda_gamma_quadrature_oracle(z, model, 1.0, fine_h=1e-3, n_tau=100)
    assert np.max(np.abs(ode.lam[0] - lam)) < 2e-3
    assert np.max(np.abs(ode.gamma[0] - gamma)) < 2e-3
