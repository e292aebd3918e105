import numpy as np
import pytest

from husimi_egorov.exceptions import CapabilityError, ContractViolation
from husimi_egorov.phase_space import HamiltonianModel, builtin_observables
from husimi_egorov.potentials import FreeParticle, Harmonic, Torsional
from husimi_egorov.reference import (
    GridState,
    SplitStepReference,
    aliasing_mass,
    boundary_mass,
    grid_expectations,
    load_checkpoint,
    save_checkpoint,
    split_step,
)
from husimi_egorov.states import GaussianSuperposition, initial_expectation_oracle


def test_grid_layout():
    g = GridState.from_state(GaussianSuperposition.single([0.0, 0.0], 0.1), 2.0, 8)
    np.testing.assert_allclose(g.axes()[0], np.arange(-2.0, 2.0, 0.5))
    np.testing.assert_allclose(g.wavenumbers()[:4, 0], np.pi * np.arange(4) / 2.0)
    assert g.wavenumbers()[4, 0] == pytest.approx(-np.pi * 4 / 2.0)
    assert g.cell_volume == 0.5


def test_grid_restrictions():
    with pytest.raises(ContractViolation):
        GridState(1.0, np.ones(12), 0.1)
    with pytest.raises(CapabilityError):
        GridState(1.0, np.ones((4, 4, 4)), 0.1)
    with pytest.raises(ContractViolation):
        GridState(1.0, np.ones(8), 0.0)


@pytest.mark.parametrize("pot", [Torsional(dim=2), Harmonic(2)], ids=repr)
def test_initial_grid_expectations_match_closed_forms(pot):
    psi0 = GaussianSuperposition.single([0.4, -0.2, 0.3, 0.1], 0.1)
    g = GridState.from_state(psi0, 3.0, 128)
    assert g.norm() == pytest.approx(1.0, abs=1e-12)
    ex = grid_expectations(g, pot)
    for a in builtin_observables(pot):
        assert ex[a.name] == pytest.approx(initial_expectation_oracle(psi0, a, pot), abs=1e-10)


def test_free_particle_is_exact():
    eps = 0.05
    z0 = [0.2, 0.8]
    psi0 = GaussianSuperposition.single(z0, eps)
    model = HamiltonianModel(FreeParticle(1), eps)
    g = split_step(GridState.from_state(psi0, 4.0, 1024), model, 0.25, n_steps=4)
    ex = grid_expectations(g, model.potential)
    assert g.t == pytest.approx(1.0)
    assert ex["q1"] == pytest.approx(1.0, abs=1e-10)
    assert ex["p1"] == pytest.approx(0.8, abs=1e-10)
    assert ex["kinetic"] == pytest.approx(0.32 + eps / 4, abs=1e-10)


def test_harmonic_means_and_norm():
    eps = 0.1
    z0 = np.array([0.7, -0.4, 0.1, 0.5])
    ref = SplitStepReference("harmonic", eps, L=4.0, n=128, h=1e-3, t_final=1.0, record_every=0.25, dim=2)
    s = ref.fit(GaussianSuperposition.single(z0, eps)).predict()
    t = s.times
    np.testing.assert_allclose(s["q1"], z0[0] * np.cos(t) + z0[2] * np.sin(t), atol=1e-6)
    np.testing.assert_allclose(s["p2"], -z0[1] * np.sin(t) + z0[3] * np.cos(t), atol=1e-6)
    np.testing.assert_allclose(s["total"], 0.5 * np.sum(z0**2) + eps * 2 / 2, atol=1e-9)
    assert ref.diagnostics_["norm_drift"] < 1e-12
    assert not ref.diagnostics_["under_resolved"]
    assert ref.final_.t == pytest.approx(1.0)


def test_second_order_in_time():
    eps = 0.1
    psi0 = GaussianSuperposition.single([0.8, 0.0], eps)

    def q_at_1(h):
        ref = SplitStepReference("torsional", eps, L=3.0, n=256, h=h, t_final=1.0, record_every=None, dim=1)
        return ref.fit(psi0).predict(["q1"])["q1"][-1]

    exact = q_at_1(1e-3)
    e1, e2 = abs(q_at_1(0.05) - exact), abs(q_at_1(0.025) - exact)
    assert e1 / e2 == pytest.approx(4.0, rel=0.1)


def test_recording_matches_manual_stepping():
    eps = 0.1
    psi0 = GaussianSuperposition.single([0.5, -0.3, 0.2, 0.0], eps)
    model = HamiltonianModel(Torsional(dim=2), eps)
    ref = SplitStepReference("torsional", eps, L=3.0, n=64, h=0.01, t_final=0.3, record_every=0.1, dim=2)
    s = ref.fit(psi0).predict(["q2", "kinetic"])
    assert s.observables == ["q2", "kinetic"]
    g = GridState.from_state(psi0, 3.0, 64)
    for k in range(1, 4):
        g = split_step(g, model, 0.01, n_steps=10)
        ex = grid_expectations(g, model.potential)
        assert s["q2"][k] == pytest.approx(ex["q2"], abs=1e-12)
        assert s["kinetic"][k] == pytest.approx(ex["kinetic"], abs=1e-12)


def test_aliasing_guard():
    eps = 0.1
    psi0 = GaussianSuperposition.single([0.0, 2.0], eps)
    ref = SplitStepReference("harmonic", eps, L=3.0, n=16, h=0.01, t_final=0.1, dim=1)
    with pytest.warns(RuntimeWarning, match="under-resolved"):
        ref.fit(psi0).predict()
    assert ref.diagnostics_["under_resolved"]
    with pytest.raises(ContractViolation):
        ref.set_params(strict=True).fit(psi0).predict()


def test_diagnostic_masses():
    g = GridState.from_state(GaussianSuperposition.single([0.0, 0.0], 0.05), 3.0, 256)
    assert aliasing_mass(g) < 1e-20
    assert boundary_mass(g) < 1e-20
    g = GridState.from_state(GaussianSuperposition.single([2.9, 0.0], 0.05), 3.0, 256)
    assert boundary_mass(g) > 0.3


def test_observable_selection():
    ref = SplitStepReference("harmonic", 0.1, L=3.0, n=32, h=0.01, t_final=0.02, dim=1)
    ref.fit(GaussianSuperposition.single([0.0, 0.0], 0.1))
    with pytest.raises(CapabilityError):
        ref.predict(["angular"])
    with pytest.raises(ContractViolation):
        ref.predict([])
    with pytest.raises(ContractViolation):
        SplitStepReference("harmonic", 0.2, L=3.0, n=32, dim=1).fit(GaussianSuperposition.single([0.0, 0.0], 0.1))


def test_checkpoint_roundtrip(tmp_path):
    psi0 = GaussianSuperposition.pair([0.3, 0.5, 0.0, 0.1], [-0.2, -0.4, 0.1, 0.0], 0.1)
    g = GridState.from_state(psi0, (3.0, 2.0), (32, 16))
    g.t = 1.25
    path = tmp_path / "state.grid"
    save_checkpoint(g, path)
    back = load_checkpoint(path)
    assert back.shape == (32, 16) and back.L == (3.0, 2.0)
    assert back.epsilon == 0.1 and back.t == 1.25
    np.testing.assert_allclose(back.psi, g.psi, rtol=0, atol=1e-6 * np.abs(g.psi).max())
    assert path.read_bytes().startswith(b"husimi-egorov-grid v1 shape=32,16 ")
    assert len(path.read_bytes().split(b"\n", 1)[1]) == 32 * 16 * 8


def test_checkpoint_rejects_bad_files(tmp_path):
    bad = tmp_path / "bad.grid"
    bad.write_bytes(b"not a grid\n\x00\x00")
    with pytest.raises(ContractViolation):
        load_checkpoint(bad)
    bad.write_bytes(b"husimi-egorov-grid v1 shape=4 L=1.0 epsilon=0.1 t=0.0\n" + b"\x00" * 8)
    with pytest.raises(ContractViolation):
        load_checkpoint(bad)
