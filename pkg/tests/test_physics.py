"""Tests for the superoperators and the channel decomposition."""

import math

import numpy as np
import pytest

from qubit_trajectories.models import PhysicsParams, QubitState
from qubit_trajectories.physics import (
    SIGMA_MINUS,
    SIGMA_X,
    SIGMA_Y,
    SIGMA_Z,
    backaction,
    bloch_of,
    build_channels,
    density_of,
    dissipator,
    drive_term,
    lindblad_rhs,
    measurement_mean,
    purity,
    record_scales,
)


def _random_states(rng: np.random.Generator, count: int) -> np.ndarray:
    vectors = rng.normal(size=(count, 3))
    vectors /= np.linalg.norm(vectors, axis=1, keepdims=True)
    vectors *= rng.random((count, 1)) ** (1 / 3)
    return np.stack([density_of(*v).to_matrix() for v in vectors])


def _random_operators(rng: np.random.Generator, count: int) -> np.ndarray:
    return rng.normal(size=(count, 2, 2)) + 1j * rng.normal(size=(count, 2, 2))


class TestConventions:
    """Tests for Pauli and Bloch conventions."""

    def test_ground_state_bloch(self):
        assert bloch_of(QubitState.ground()) == pytest.approx((0.0, 0.0, -1.0))

    def test_pauli_algebra(self):
        np.testing.assert_allclose(SIGMA_X @ SIGMA_Y, 1j * SIGMA_Z)

    def test_lowering_operator_maps_excited_to_ground(self):
        excited = np.array([0.0, 1.0])
        np.testing.assert_allclose(SIGMA_MINUS @ excited, [1.0, 0.0])

    def test_bloch_round_trip(self):
        assert bloch_of(density_of(0.1, -0.7, 0.2)) == pytest.approx((0.1, -0.7, 0.2))

    def test_purity(self):
        assert purity(QubitState.from_bloch(0.0, 0.0, 0.0)) == pytest.approx(0.5)
        assert purity(QubitState.excited()) == pytest.approx(1.0)


class TestSuperoperatorIdentities:
    """Dissipator and backaction are traceless and Hermitian for any input."""

    def test_dissipator_traceless_and_hermitian(self, rng):
        states = _random_states(rng, 10_000)
        operators = _random_operators(rng, 10_000)
        for op, rho in zip(operators, states):
            out = dissipator(op, rho)
            assert abs(np.trace(out)) < 1e-12
            assert np.max(np.abs(out - out.conj().T)) < 1e-12

    def test_backaction_traceless_and_hermitian(self, rng):
        states = _random_states(rng, 10_000)
        operators = _random_operators(rng, 10_000)
        for op, rho in zip(operators, states):
            out = backaction(op, rho)
            assert abs(np.trace(out)) < 1e-12
            assert np.max(np.abs(out - out.conj().T)) < 1e-12

    def test_fluorescence_backaction_vanishes_at_ground(self):
        channels = build_channels(PhysicsParams(), "uvw")
        ground = QubitState.ground()
        for label in ("u", "v"):
            out = backaction(channels.by_label(label).jump_operator, ground)
            assert np.array_equal(out, np.zeros((2, 2)))

    def test_lindblad_rhs_traceless(self, rng):
        channels = build_channels(PhysicsParams(), "uvw")
        for rho in _random_states(rng, 100):
            assert abs(np.trace(lindblad_rhs(math.pi, channels, rho))) < 1e-12


class TestDrive:
    """Tests for the Rabi drive sign convention."""

    def test_ground_state_moves_toward_positive_x(self):
        dx, dy, dz = bloch_of(drive_term(1.0, QubitState.ground()))
        assert dx == pytest.approx(1.0)
        assert dy == pytest.approx(0.0)
        assert dz == pytest.approx(0.0)

    def test_plus_x_moves_toward_excited(self):
        dx, _, dz = bloch_of(drive_term(2.0, QubitState.from_bloch(1.0, 0.0, 0.0)))
        assert dz == pytest.approx(2.0)
        assert dx == pytest.approx(0.0)


class TestChannels:
    """Tests for build_channels and record scales."""

    def test_channel_order(self):
        channels = build_channels(PhysicsParams())
        assert channels.labels == ("u", "v", "w", "u_loss", "v_loss", "w_loss", "phi")

    def test_full_subset_monitors_uvw(self):
        channels = build_channels(PhysicsParams(), "uvw")
        assert [c.label for c in channels.monitored()] == ["u", "v", "w"]
        assert channels.record_columns == {"u": 0, "v": 1, "w": 2}

    def test_w_subset_keeps_fluorescence_dissipators(self):
        channels = build_channels(PhysicsParams(), "w")
        assert [c.label for c in channels.monitored()] == ["w"]
        assert channels.record_columns == {"w": 2}
        assert channels.by_label("u").rate > 0

    def test_none_subset_monitors_nothing(self):
        channels = build_channels(PhysicsParams(), "none")
        assert channels.monitored() == ()
        assert channels.record_columns == {}

    def test_rates_add_up(self):
        params = PhysicsParams(gamma1=0.1, gamma_d=0.4, gamma_phi=0.05)
        channels = build_channels(params)
        assert channels.rate("u", "v", "u_loss", "v_loss") == pytest.approx(0.1)
        assert channels.rate("w", "w_loss") == pytest.approx(0.4)
        assert channels.rate("phi") == pytest.approx(0.05)

    def test_unknown_label(self):
        with pytest.raises(KeyError):
            build_channels(PhysicsParams()).by_label("q")

    def test_record_scales(self):
        params = PhysicsParams()
        u, v, w = record_scales(params)
        assert u == pytest.approx(math.sqrt(0.14 * params.gamma1 / 2))
        assert v == pytest.approx(u)
        assert w == pytest.approx(math.sqrt(2 * 0.34 * 0.2))

    def test_w_sign_flips_scale(self):
        assert record_scales(PhysicsParams(w_sign=-1.0))[2] < 0

    def test_record_means_are_scaled_coordinates(self):
        params = PhysicsParams()
        channels = build_channels(params)
        state = QubitState.from_bloch(0.3, -0.5, 0.4)
        for label, coordinate in zip(("u", "v", "w"), state.bloch):
            channel = channels.by_label(label)
            mean = measurement_mean(channel.jump_operator, state)
            assert mean == pytest.approx(channel.record_scale * coordinate)

    def test_unmonitored_efficiency_zero(self):
        channels = build_channels(PhysicsParams(eta_f=0.0))
        assert channels.by_label("u").rate == 0.0
        half_decay = PhysicsParams().gamma1 / 2
        assert channels.by_label("u_loss").rate == pytest.approx(half_decay)

    def test_bad_subset(self):
        with pytest.raises(ValueError, match="subset"):
            build_channels(PhysicsParams(), "xyz")
