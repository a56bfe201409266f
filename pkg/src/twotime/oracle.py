"""Exact propagation of (possibly skew) operators for small systems.

Used as ground truth for every statistical test.  The matrix ODE dX/dt = LX
is integrated with the same fixed-step RK4 scheme as the trajectory engines,
at one quarter of their default step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConvergenceError, ResourceError, StructuralError
from .estimator import CorrelationSeries
from .hilbert import Operator
from .model import LindbladModel, default_dt, liouvillian_apply

EXACT_MAX_DIM = 64


@dataclass
class ExactSeries:
    times: np.ndarray
    matrices: np.ndarray


def _check_dim(m: LindbladModel):
    if m.dim > EXACT_MAX_DIM:
        raise ResourceError(f"exact propagation limited to dim <= {EXACT_MAX_DIM}, got {m.dim}")


def _rk4_matrix(m, X, h):
    k1 = liouvillian_apply(m, X)
    k2 = liouvillian_apply(m, X + 0.5 * h * k1)
    k3 = liouvillian_apply(m, X + 0.5 * h * k2)
    k4 = liouvillian_apply(m, X + h * k3)
    return X + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def propagate_exact(m: LindbladModel, X0, times, dt: float | None = None) -> ExactSeries:
    """Snapshots of exp(Lt) X0 at the (non-decreasing, non-negative) ``times``."""
    _check_dim(m)
    X = np.array(X0, dtype=complex)
    if X.shape != (m.dim, m.dim):
        raise StructuralError(f"X0 must be {m.dim}x{m.dim}")
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if times.size and (times[0] < 0 or np.any(np.diff(times) < 0)):
        raise StructuralError("times must be non-negative and sorted")
    h_max = default_dt(m) / 4 if dt is None else dt
    out = np.empty((times.size, m.dim, m.dim), dtype=complex)
    t = 0.0
    for i, target in enumerate(times):
        span = target - t
        if span > 0:
            n = max(1, int(np.ceil(span / h_max - 1e-9)))
            h = span / n
            for _ in range(n):
                X = _rk4_matrix(m, X, h)
            t = target
        out[i] = X
    return ExactSeries(times, out)


def exact_correlator(m: LindbladModel, A: Operator, B: Operator, rho0, times,
                     dt: float | None = None) -> CorrelationSeries:
    """tr(A exp(Lt) B rho0) with zero error bars; K = 0 marks it as exact."""
    rho0 = np.asarray(rho0, dtype=complex)
    chi0 = B.left(rho0)
    series = propagate_exact(m, chi0, times, dt)
    Ad = A.dense()
    vals = np.einsum("ij,tji->t", Ad, series.matrices)
    g0 = complex(np.trace(Ad @ chi0))
    z = np.zeros(vals.size)
    return CorrelationSeries(series.times, vals, z, z.copy(), 0, g0)


def liouvillian_matrix(m: LindbladModel) -> sp.csr_matrix:
    """Superoperator on row-major vec(X): vec(P X Q) = (P kron Q^T) vec(X)."""
    d = m.dim
    eye = sp.identity(d, dtype=complex, format="csr")
    H = sp.csr_matrix(m.hamiltonian.matrix)
    L = -1j * (sp.kron(H, eye) - sp.kron(eye, H.T))
    for c, n in zip(m.channels, m.jump_products):
        C = sp.csr_matrix(c.matrix)
        N = sp.csr_matrix(n.matrix)
        L = L + 2 * sp.kron(C, C.conj()) - sp.kron(N, eye) - sp.kron(eye, N.T)
    return sp.csr_matrix(L)


def _exact_steady_state(m: LindbladModel) -> np.ndarray:
    d = m.dim
    L = liouvillian_matrix(m).tolil()
    rhs = np.zeros(d * d, dtype=complex)
    # replace the first equation by the trace condition
    L[0, :] = 0
    L[0, [i * d + i for i in range(d)]] = 1.0
    rhs[0] = 1.0
    vec = spla.spsolve(sp.csc_matrix(L), rhs)
    rho = vec.reshape(d, d)
    rho = 0.5 * (rho + rho.conj().T)
    rho /= np.trace(rho).real
    resid = np.max(np.abs(liouvillian_apply(m, rho)))
    if not resid <= 1e-8:
        raise ConvergenceError(f"steady-state residual {resid:.3g} exceeds 1e-8")
    if np.linalg.eigvalsh(rho).min() < -1e-10:
        raise ConvergenceError("steady state is not positive semidefinite")
    return rho


def steady_state(m: LindbladModel, *, trajectories: int = 200, seed: int = 0,
                 observable: Operator | None = None, **kwargs) -> np.ndarray:
    """Stationary density matrix.

    Exact null-space solve for ``dim <= 64``; larger systems use the
    long-time MCWF ensemble of :func:`mcwf_steady_ensemble`.
    """
    if m.dim <= EXACT_MAX_DIM:
        return _exact_steady_state(m)
    states, _ = mcwf_steady_ensemble(m, trajectories, seed=seed, observable=observable, **kwargs)
    return states.T @ states.conj() / states.shape[0]


def mcwf_steady_ensemble(m: LindbladModel, trajectories: int, *, seed: int = 0,
                         observable: Operator | None = None, psi0=None, chunk_time: float = 5.0,
                         tol: float = 1e-4, horizon: float = 200.0, dt: float | None = None,
                         start_index: int = 0, stream: int = 1):
    """Relax an MCWF ensemble until the ensemble mean of ``observable`` stops drifting.

    Starts from ``psi0`` (default: basis state 0, the vacuum for Fock models).
    The drift test accepts when the change of the mean over one ``chunk_time``
    is below ``tol`` per unit time or within three standard errors of the
    difference.  Chunk ``c`` draws from RNG stream ``stream + c``, so
    ``stream + horizon / chunk_time`` must stay below 256.  Returns (states,
    history of (t, mean)).
    """
    from .symmetric import run_ensemble

    if observable is None:
        observable = m.jump_products[0] if m.channels else m.hamiltonian
    if stream + int(np.ceil(horizon / chunk_time)) > 256:
        raise ValueError("too many relaxation chunks for the available RNG streams")
    if psi0 is None:
        psi0 = np.zeros(m.dim, dtype=complex)
        psi0[0] = 1.0
    psi0 = np.asarray(psi0, dtype=complex)
    states = np.broadcast_to(psi0, (trajectories, m.dim)).copy() if psi0.ndim == 1 else psi0
    t = 0.0
    history = []
    prev = None
    chunk = 0
    while t < horizon:
        states = run_ensemble(m, states, trajectories, chunk_time, dt=dt, seed=seed,
                              start_index=start_index, stream=stream + chunk)
        t += chunk_time
        chunk += 1
        vals = np.einsum("ij,ij->i", states.conj(), observable.apply_rows(states)).real
        mean, se = vals.mean(), vals.std(ddof=1) / np.sqrt(max(1, vals.size)) if vals.size > 1 else 0.0
        history.append((t, mean))
        if prev is not None:
            drift = abs(mean - prev[0]) / chunk_time
            noise = 3.0 * np.hypot(se, prev[1]) / chunk_time
            if drift < max(tol, noise):
                return states, history
        prev = (mean, se)
    raise ConvergenceError(f"ensemble did not settle within t = {horizon}")
