"""Single-vector jump unraveling of a proper density operator.

Between jumps the normalized no-jump equation

    d psi/dt = (sum_k <s_k^+ s_k> - sum_k s_k^+ s_k - iH) psi

is integrated (and the vector renormalized after every step), while the
survival variable obeys ``dq/dt = -q * 2 sum_k <s_k^+ s_k>``.  When ``q``
drops below the pending threshold ``r`` the state jumps to
``s_k psi / |s_k psi|`` with channel probabilities ``<s_k^+ s_k> / sum``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _pdp
from .errors import DegenerateError, StructuralError
from .hilbert import as_state
from .model import LindbladModel, default_dt


def _expect_rows(ops, V: np.ndarray) -> np.ndarray:
    """(n, nch) array of <v|N_k|v> for the rows of V."""
    out = np.empty((V.shape[0], len(ops)))
    for k, (diag, op) in enumerate(ops):
        if diag is not None:
            out[:, k] = (np.abs(V) ** 2) @ diag
        else:
            out[:, k] = np.einsum("ij,ij->i", V.conj(), op.apply_rows(V)).real
    return out


def jump_product_ops(model: LindbladModel):
    """Per-channel (diagonal or None, operator) pairs for fast expectation values."""
    ops = []
    for n in model.jump_products:
        ops.append((n.diagonal().real if n.is_diagonal() else None, n))
    return ops


class SymmetricKernel:
    """Drift and jump map of the normalized single-vector process."""

    def __init__(self, model: LindbladModel):
        self.model = model
        self.heff = model.effective_hamiltonian
        self.nops = jump_product_ops(model)
        self.channels = model.channels

    def derivative(self, y):
        v = y[:, 0, :]
        nrm = np.einsum("ij,ij->i", v.conj(), v).real
        ex = _expect_rows(self.nops, v).sum(axis=1) / nrm
        dv = ex[:, None] * v - self.heff.apply_rows(v)
        return dv[:, None, :], 2.0 * ex

    def weights(self, y):
        return _expect_rows(self.nops, y[:, 0, :])

    def jump(self, y, k):
        out = np.empty_like(y)
        for ch in np.unique(k):
            rows = k == ch
            w = self.channels[ch].apply_rows(y[rows, 0, :])
            out[rows, 0, :] = w / np.linalg.norm(w, axis=1, keepdims=True)
        return out

    def project(self, y):
        return y / np.linalg.norm(y, axis=2, keepdims=True)

    def dead(self, y):
        return ~(np.linalg.norm(y[:, 0, :], axis=1) > 0)


@dataclass
class SymTrajectory:
    """One normalized trajectory with its survival variable and RNG stream."""

    psi: np.ndarray
    q: float
    r: float
    t: float
    rng: np.random.Generator
    jumps: int = 0

    @classmethod
    def start(cls, psi0, seed: int = 0, index: int = 0, t: float = 0.0) -> "SymTrajectory":
        psi = as_state(psi0)
        n = np.linalg.norm(psi)
        if not n > 0:
            raise StructuralError("initial state must be non-zero")
        rng = _pdp.trajectory_rng(seed, index)
        return cls(psi / n, 1.0, rng.random(), t, rng)


def _to_batch(traj: SymTrajectory) -> _pdp.Batch:
    logr = np.log(traj.r) if traj.r > 0 else -np.inf
    return _pdp.Batch(
        y=traj.psi.reshape(1, 1, -1).astype(complex),
        logq=np.array([np.log(traj.q)]),
        logr=np.array([logr]),
        rngs=[traj.rng],
        t=traj.t,
        jumps=np.array([traj.jumps]),
    )


def _from_batch(batch: _pdp.Batch, rng) -> SymTrajectory:
    logr = batch.logr[0]
    return SymTrajectory(
        psi=batch.y[0, 0].copy(),
        q=float(np.exp(batch.logq[0])),
        r=float(np.exp(logr)) if np.isfinite(logr) else 0.0,
        t=batch.t,
        rng=rng,
        jumps=int(batch.jumps[0]),
    )


def mcwf_step(m: LindbladModel, traj: SymTrajectory, dt: float) -> SymTrajectory:
    """Advance one trajectory by ``dt`` (jumping at most where ``q`` crosses ``r``)."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    if traj.psi.shape[0] != m.dim:
        raise StructuralError("state and model dimensions differ")
    kernel = SymmetricKernel(m)
    batch = _to_batch(traj)
    _pdp.advance(kernel, batch, traj.t + dt, dt)
    if not batch.active[0]:
        raise DegenerateError("trajectory collapsed to the zero vector")
    return _from_batch(batch, traj.rng)


def density_estimate(ensemble) -> np.ndarray:
    """(1/K) sum_j |psi_j><psi_j| for trajectories or raw state vectors."""
    vecs = [t.psi if isinstance(t, SymTrajectory) else np.asarray(t) for t in ensemble]
    if not vecs:
        raise ValueError("empty ensemble")
    V = np.array(vecs, dtype=complex)
    if V.ndim != 2:
        raise StructuralError("trajectories must share one dimension")
    return V.T @ V.conj() / V.shape[0]


def run_ensemble(m: LindbladModel, psi0, trajectories: int, t_final: float, *,
                 dt: float | None = None, seed: int = 0, start_index: int = 0,
                 stream: int = 0, sample_times=None, observable=None):
    """Evolve ``trajectories`` copies of ``psi0`` to ``t_final``.

    ``psi0`` is one vector or an ``(n, d)`` array with one row per trajectory.
    Returns the final states and, if ``sample_times`` and ``observable`` are
    given, the per-time expectation values ``(n_times, K)``.
    """
    dt = default_dt(m) if dt is None else dt
    psi0 = np.asarray(psi0, dtype=complex)
    rows = np.broadcast_to(psi0, (trajectories, m.dim)) if psi0.ndim == 1 else psi0
    if rows.shape != (trajectories, m.dim):
        raise StructuralError("initial states do not match trajectories x dim")
    y = rows / np.linalg.norm(rows, axis=1, keepdims=True)
    rngs = [_pdp.trajectory_rng(seed, start_index + i, stream) for i in range(trajectories)]
    batch = _pdp.Batch(
        y=y.reshape(trajectories, 1, m.dim).copy(),
        logq=np.zeros(trajectories),
        logr=np.array([_pdp.draw_log_threshold(g) for g in rngs]),
        rngs=rngs,
    )
    kernel = SymmetricKernel(m)
    values = []
    for ts in ([] if sample_times is None else sample_times):
        _pdp.advance(kernel, batch, ts, dt)
        if observable is not None:
            v = batch.y[:, 0, :]
            values.append(np.einsum("ij,ij->i", v.conj(), observable.apply_rows(v)))
    if batch.t < t_final:
        _pdp.advance(kernel, batch, t_final, dt)
    states = batch.y[:, 0, :].copy()
    return (states, np.array(values)) if sample_times is not None else states
