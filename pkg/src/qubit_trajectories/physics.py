"""
Qubit physics conventions and superoperators.

Pauli matrices, Bloch conversions, and the drive, dissipator and measurement
backaction terms of the stochastic master equation

    d rho = i[Omega/2 sigma_y, rho] dt + sum_k D[L_k](rho) dt
            + sum_k sqrt(eta_k) M[L_k](rho) dW_k

together with the decomposition of the qubit's decoherence into channels.
All functions are pure and accept either a :class:`QubitState` or a raw 2x2
matrix.
"""

from __future__ import annotations

import math
from typing import Union

import numpy as np

from qubit_trajectories.models import (
    Channel,
    ChannelSet,
    PhysicsParams,
    QubitState,
    validate_subset,
)

StateLike = Union[QubitState, np.ndarray]

IDENTITY = np.eye(2, dtype=complex)
SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
# i(sigma_- - sigma_+) in the (g, e) basis, so that y = 2 Im(rho_ge) and
# sigma_x sigma_y = i sigma_z.
SIGMA_Y = np.array([[0, 1j], [-1j, 0]], dtype=complex)
SIGMA_Z = np.array([[-1, 0], [0, 1]], dtype=complex)
SIGMA_MINUS = np.array([[0, 1], [0, 0]], dtype=complex)
PAULIS = (SIGMA_X, SIGMA_Y, SIGMA_Z)

for _matrix in (IDENTITY, SIGMA_X, SIGMA_Y, SIGMA_Z, SIGMA_MINUS):
    _matrix.setflags(write=False)

# Record columns of the monitored channels, in export order.
RECORD_COLUMNS: dict[str, int] = {"u": 0, "v": 1, "w": 2}
CHANNEL_ORDER: tuple[str, ...] = ("u", "v", "w", "u_loss", "v_loss", "w_loss", "phi")


def _as_matrix(state: StateLike) -> np.ndarray:
    if isinstance(state, QubitState):
        return state.to_matrix()
    return np.asarray(state, dtype=complex)


def bloch_of(state: StateLike) -> tuple[float, float, float]:
    """Return the Bloch coordinates Tr(sigma_k rho) for k = x, y, z."""
    rho = _as_matrix(state)
    x, y, z = (float(np.real(np.trace(pauli @ rho))) for pauli in PAULIS)
    return x, y, z


def density_of(x: float, y: float, z: float) -> QubitState:
    """Inverse of :func:`bloch_of`."""
    return QubitState.from_bloch(x, y, z)


def dagger(operator: np.ndarray) -> np.ndarray:
    return np.asarray(operator).conj().T


def dissipator(jump_operator: np.ndarray, state: StateLike) -> np.ndarray:
    """Lindblad dissipator L rho L^dagger - 1/2 {L^dagger L, rho}."""
    op = np.asarray(jump_operator, dtype=complex)
    rho = _as_matrix(state)
    op_dag = dagger(op)
    decay = op_dag @ op
    return op @ rho @ op_dag - 0.5 * (rho @ decay) - 0.5 * (decay @ rho)


def measurement_mean(jump_operator: np.ndarray, state: StateLike) -> float:
    """Record mean Tr(L rho + rho L^dagger) of a diffusively monitored channel."""
    op = np.asarray(jump_operator, dtype=complex)
    rho = _as_matrix(state)
    return float(np.real(np.trace(op @ rho + rho @ dagger(op))))


def backaction(jump_operator: np.ndarray, state: StateLike) -> np.ndarray:
    """Measurement backaction L rho + rho L^dagger - Tr(L rho + rho L^dagger) rho."""
    op = np.asarray(jump_operator, dtype=complex)
    rho = _as_matrix(state)
    kick = op @ rho + rho @ dagger(op)
    return kick - np.trace(kick) * rho


def drive_term(omega: float, state: StateLike) -> np.ndarray:
    """Rabi drive i (Omega/2) [sigma_y, rho].

    Gives dx/dt = -Omega z and dz/dt = +Omega x, so the ground state first
    moves toward positive x.
    """
    rho = _as_matrix(state)
    return 1j * (omega / 2.0) * (SIGMA_Y @ rho - rho @ SIGMA_Y)


def purity(state: StateLike) -> float:
    """Tr(rho^2) = (1 + x^2 + y^2 + z^2) / 2."""
    x, y, z = bloch_of(state)
    return (1.0 + x * x + y * y + z * z) / 2.0


def lindblad_rhs(omega: float, channels: ChannelSet, state: StateLike) -> np.ndarray:
    """Deterministic vector field: drive plus the dissipator of every channel."""
    rho = _as_matrix(state)
    total = drive_term(omega, rho)
    for channel in channels.channels:
        total = total + dissipator(channel.jump_operator, rho)
    return total


def build_channels(params: PhysicsParams, subset: str = "uvw") -> ChannelSet:
    """Split the qubit's decoherence into monitored and loss channels.

    Each detected process is split by a beam splitter into a monitored branch
    (sqrt(eta) L) and a loss branch (sqrt(1 - eta) L). Detectors left out of
    ``subset`` keep their channels but lose the monitored flag, so the filter
    sees their dissipators only. Pure dephasing is never monitored.

    Args:
        params: Physical parameters.
        subset: Detector selection, one of ``uvw``, ``uv``, ``w``, ``none``.

    Returns:
        Channels in the order u, v, w, u_loss, v_loss, w_loss, phi.
    """
    validate_subset(subset)
    for name in ("eta_f", "eta_d"):
        value = getattr(params, name)
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"{name} must be between 0 and 1, got {value!r}")

    fluorescence = math.sqrt(params.gamma1 / 2.0) * SIGMA_MINUS
    dispersive = params.w_sign * math.sqrt(params.gamma_d / 2.0) * SIGMA_Z
    dephasing = math.sqrt(params.gamma_phi / 2.0) * SIGMA_Z

    read_f = subset in ("uvw", "uv")
    read_d = subset in ("uvw", "w")
    root_f, loss_f = math.sqrt(params.eta_f), math.sqrt(1.0 - params.eta_f)
    root_d, loss_d = math.sqrt(params.eta_d), math.sqrt(1.0 - params.eta_d)

    scale_f = math.sqrt(params.eta_f * params.gamma1 / 2.0)
    scale_d = params.w_sign * math.sqrt(2.0 * params.eta_d * params.gamma_d)
    loss_scale_f = math.sqrt((1.0 - params.eta_f) * params.gamma1 / 2.0)
    loss_scale_d = params.w_sign * math.sqrt(
        2.0 * (1.0 - params.eta_d) * params.gamma_d
    )

    channels = (
        Channel("u", root_f * fluorescence, monitored=read_f, record_scale=scale_f),
        Channel(
            "v", 1j * root_f * fluorescence, monitored=read_f, record_scale=scale_f
        ),
        Channel("w", root_d * dispersive, monitored=read_d, record_scale=scale_d),
        Channel("u_loss", loss_f * fluorescence, record_scale=loss_scale_f),
        Channel("v_loss", 1j * loss_f * fluorescence, record_scale=loss_scale_f),
        Channel("w_loss", loss_d * dispersive, record_scale=loss_scale_d),
        Channel("phi", dephasing, record_scale=math.sqrt(2.0 * params.gamma_phi)),
    )
    record_columns = {
        channel.label: RECORD_COLUMNS[channel.label]
        for channel in channels
        if channel.monitored
    }
    return ChannelSet(channels=channels, record_columns=record_columns, subset=subset)


def record_scales(params: PhysicsParams) -> tuple[float, float, float]:
    """Coefficients of x, y and z in the u, v and w record means."""
    channels = build_channels(params, "uvw")
    u, v, w = (channels.by_label(label).record_scale for label in RECORD_COLUMNS)
    return u, v, w
