import numpy as np
import pytest

from potscape.data import Configuration
from potscape.geometry import SingularGeometryError, random_rotation
from potscape.potentials import LennardJones, Morse, build_cluster, make_potential, reference_eval
from tests.conftest import random_cluster


def dimer(r):
    return np.array([[0.0, 0.0, 0.0], [r, 0.0, 0.0]])


class TestLennardJones:
    def test_zero_crossing_at_sigma(self):
        lj = LennardJones(epsilon=0.0104, sigma=3.4, cutoff=9.0)
        e, _ = lj.energy_forces(dimer(lj.sigma))
        assert e == pytest.approx(0.0, abs=1e-15)

    def test_minimum_depth_and_zero_force(self):
        lj = LennardJones(epsilon=0.0104, sigma=3.4, cutoff=9.0)
        e, f = lj.energy_forces(dimer(lj.r_min))
        assert e == pytest.approx(-lj.epsilon, rel=1e-12)
        assert np.abs(f).max() < 1e-14

    def test_coincident_atoms(self):
        lj = LennardJones()
        with pytest.raises(SingularGeometryError):
            lj.energy_forces(np.zeros((2, 3)))


class TestMorse:
    def test_zero_force_at_r0(self):
        mo = Morse()
        e, f = mo.energy_forces(dimer(mo.r0))
        assert e == pytest.approx(-mo.well_depth, rel=1e-12)
        assert np.abs(f).max() == 0.0

    def test_well_shape(self):
        mo = Morse()
        e_in, _ = mo.energy_forces(dimer(mo.r0 * 0.8))
        e_min, _ = mo.energy_forces(dimer(mo.r0))
        e_out, _ = mo.energy_forces(dimer(mo.r0 * 1.4))
        assert e_in > e_min and e_out > e_min


class TestCutoffSwitching:
    @pytest.mark.parametrize("pot", [LennardJones(cutoff=6.0), Morse(cutoff=6.0)])
    def test_energy_and_force_vanish_at_cutoff(self, pot):
        e, f = pot.energy_forces(dimer(pot.cutoff))
        assert e == 0.0 and np.abs(f).max() == 0.0
        e, f = pot.energy_forces(dimer(pot.cutoff - 1e-7))
        assert abs(e) < 1e-12
        assert np.abs(f).max() < 1e-5  # derivative also switched to ~0

    @pytest.mark.parametrize("pot", [LennardJones(cutoff=6.0), Morse(cutoff=6.0)])
    def test_untouched_before_switch_start(self, pot):
        r = 0.5 * pot.switch_start
        v_raw, _ = pot._raw(np.array([r]))
        e, _ = pot.energy_forces(dimer(r))
        assert e == pytest.approx(v_raw[0], rel=0, abs=0)

    @pytest.mark.parametrize("pot", [LennardJones(cutoff=6.0), Morse(cutoff=6.0)])
    def test_switch_region_continuity(self, pot):
        # numeric derivative of the switched pair energy stays close to the
        # analytic one across the switching window
        rs = np.linspace(pot.switch_start - 0.2, pot.cutoff + 0.1, 80)
        v, dv = pot.pair_energy_deriv(rs)
        h = 1e-6
        vp = pot.pair_energy(rs + h)
        vm = pot.pair_energy(rs - h)
        np.testing.assert_allclose((vp - vm) / (2 * h), dv, atol=1e-6)


class TestForces:
    @pytest.mark.parametrize("pot", [LennardJones(epsilon=0.2, sigma=2.2, cutoff=6.0),
                                     Morse(cutoff=6.0)])
    def test_forces_match_finite_differences(self, pot):
        h = 1e-5
        for seed in range(6):
            pos = random_cluster(5, seed, box=3.0, min_dist=1.8)
            _, f = pot.energy_forces(pos)
            fd = np.zeros_like(f)
            for a in range(5):
                for k in range(3):
                    pp, pm = pos.copy(), pos.copy()
                    pp[a, k] += h
                    pm[a, k] -= h
                    fd[a, k] = -(pot.energy_forces(pp)[0] - pot.energy_forces(pm)[0]) / (2 * h)
            assert np.max(np.abs(f - fd)) / np.max(np.abs(f)) < 1e-5

    def test_translation_rotation_invariance(self):
        mo = Morse()
        pos = random_cluster(6, 3, box=2.8, min_dist=1.8)
        e0, f0 = mo.energy_forces(pos)
        e1, f1 = mo.energy_forces(pos + np.array([3.7, -1.2, 0.4]))
        assert e1 == pytest.approx(e0, abs=1e-12)
        np.testing.assert_allclose(f1, f0, atol=1e-12)
        rot = random_rotation(np.random.default_rng(5))
        e2, f2 = mo.energy_forces(pos @ rot.T)
        assert e2 == pytest.approx(e0, abs=1e-8)
        np.testing.assert_allclose(f2, f0 @ rot.T, atol=1e-8)

    def test_net_force_zero(self):
        lj = LennardJones(epsilon=0.2, sigma=2.2, cutoff=7.0)
        _, f = lj.energy_forces(random_cluster(7, 9, box=3.0, min_dist=1.7))
        assert np.abs(f.sum(axis=0)).max() < 1e-8

    def test_single_atom_zero_interaction(self):
        e, f = Morse().energy_forces(np.zeros((1, 3)))
        assert e == 0.0 and f.shape == (1, 3)

    def test_reference_eval_wrapper(self):
        mo = Morse()
        pos = random_cluster(4, 2)
        c = Configuration(pos, ["Cu"] * 4)
        e1, f1 = reference_eval(mo, c)
        e2, f2 = mo.energy_forces(pos)
        assert e1 == e2
        np.testing.assert_array_equal(f1, f2)


class TestPeriodic:
    def test_minimum_image_matches_shifted_copy(self):
        lj = LennardJones(epsilon=0.2, sigma=2.2, cutoff=5.0)
        cell = np.diag([20.0, 20.0, 20.0])
        pos = np.array([[1.0, 1.0, 1.0], [19.5, 1.0, 1.0]])  # close across boundary
        e_pbc, _ = lj.energy_forces(pos, cell=cell, pbc=[True] * 3)
        e_direct, _ = lj.energy_forces(np.array([[1.0, 1.0, 1.0], [-0.5, 1.0, 1.0]]))
        assert e_pbc == pytest.approx(e_direct, rel=1e-12)


class TestBuildCluster:
    def test_near_equilibrium_and_deterministic(self):
        mo = Morse()
        pos1 = build_cluster(mo, 6, seed=1)
        pos2 = build_cluster(mo, 6, seed=1)
        np.testing.assert_array_equal(pos1, pos2)
        _, f = mo.energy_forces(pos1)
        assert np.max(np.abs(f)) < 0.05
        d = np.linalg.norm(pos1[None] - pos1[:, None], axis=-1)
        np.fill_diagonal(d, np.inf)
        assert abs(d.min() - mo.r0) / mo.r0 < 0.15


def test_make_potential_factory():
    assert isinstance(make_potential("lj", epsilon=0.1, sigma=3.0, cutoff=8.0), LennardJones)
    assert isinstance(make_potential("morse"), Morse)
    with pytest.raises(ValueError):
        make_potential("buckingham")
