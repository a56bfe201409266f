"""Batched ensemble runs of the paired-trajectory engines.

Trajectories are processed in fixed-size chunks keyed by their global index,
so every trajectory owns the same random stream whatever the chunking or the
number of worker processes.  Chunk results are merged in chunk order, which
makes the output bit-identical for any ``workers`` value.
"""

from __future__ import annotations

import time as _time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _pdp
from .errors import DegenerateInitialization, StructuralError
from .estimator import CorrelationSeries, SampleStats
from .hilbert import Operator, as_state
from .model import LindbladModel, default_dt
from .skew import EngineKind

CHUNK_SIZE = 4096


# initial states ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PureState:
    vector: np.ndarray

    def pick(self, rng, index):
        return self.vector

    def expectation(self, op: Operator) -> complex:
        return complex(np.vdot(self.vector, op.apply(self.vector)))


@dataclass(frozen=True, eq=False)
class Mixture:
    """rho0 = sum_i p_i |v_i><v_i|; each trajectory draws one component."""

    probs: np.ndarray
    vectors: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 1 or p.size != len(self.vectors) or np.any(p < 0) or not p.sum() > 0:
            raise StructuralError("mixture needs non-negative weights, one per vector")
        object.__setattr__(self, "probs", p / p.sum())
        object.__setattr__(self, "vectors", np.asarray(self.vectors, dtype=complex))

    @classmethod
    def from_density(cls, rho, cutoff: float = 1e-14) -> "Mixture":
        vals, vecs = np.linalg.eigh(0.5 * (rho + np.conj(rho).T))
        keep = vals > cutoff * max(vals.max(), 1e-300)
        return cls(vals[keep], vecs[:, keep].T.copy())

    def pick(self, rng, index):
        if self.probs.size == 1:
            return self.vectors[0]
        return self.vectors[int(_pdp.select_index(self.probs[None], [rng.random()])[0])]

    def expectation(self, op: Operator) -> complex:
        return complex(sum(p * np.vdot(v, op.apply(v)) for p, v in zip(self.probs, self.vectors)))


@dataclass(frozen=True, eq=False)
class SampledStates:
    """One explicit starting vector per trajectory index (e.g. a relaxed MCWF ensemble)."""

    rows: np.ndarray

    def pick(self, rng, index):
        return self.rows[index]

    def expectation(self, op: Operator) -> complex:
        V = np.asarray(self.rows, dtype=complex)
        return complex(np.mean(np.einsum("ij,ij->i", V.conj(), op.apply_rows(V))))


def as_initial(initial):
    if isinstance(initial, (PureState, Mixture, SampledStates)):
        return initial
    arr = np.asarray(initial, dtype=complex)
    if arr.ndim == 1:
        return PureState(as_state(arr))
    if arr.ndim == 2 and arr.shape[0] == arr.shape[1]:
        return Mixture.from_density(arr)
    raise StructuralError("initial state must be a vector, a density matrix or a known wrapper")


# results --------------------------------------------------------------------------


@dataclass
class _ChunkResult:
    stats: SampleStats
    bound_sum: np.ndarray
    survivors: np.ndarray
    jumps: int
    dead: int
    aborted: int
    chi_sum: np.ndarray | None
    diag: dict


@dataclass
class EnsembleResult:
    series: CorrelationSeries
    error_bound: np.ndarray
    survival: np.ndarray
    second_moment: np.ndarray
    mean_jumps: float
    dead: int
    aborted: int
    chi: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)
    wall_time: float = 0.0

    @property
    def K(self) -> int:
        return self.series.K


# chunk worker -------------------------------------------------------------------------


def _run_chunk(model, engine, A, B, initial, times, dt, seed, stream, start, count, record_chi):
    d = model.dim
    kernel = engine.kernel(model)
    rngs = [_pdp.trajectory_rng(seed, start + j, stream) for j in range(count)]
    y = np.zeros((count, 2, d), dtype=complex)
    w = np.zeros(count, dtype=complex)
    logr = np.empty(count)
    alive = np.ones(count, dtype=bool)
    for j, rng in enumerate(rngs):
        psi0 = as_state(initial.pick(rng, start + j))
        phi0 = B.apply(psi0)
        if np.linalg.norm(phi0) > 0 and np.linalg.norm(psi0) > 0:
            y[j, 0], y[j, 1], w[j] = engine.prepare(phi0, psi0.copy())
        else:
            alive[j] = False
        logr[j] = _pdp.draw_log_threshold(rng)
    batch = _pdp.Batch(y=y, logq=np.zeros(count), logr=logr, rngs=rngs)
    batch.active &= alive
    nt = len(times)
    samples = np.empty((count, nt), dtype=complex)
    bound_sum = np.empty(nt)
    survivors = np.empty(nt, dtype=np.int64)
    chi_sum = np.zeros((nt, d, d), dtype=complex) if record_chi else None
    for i, ts in enumerate(times):
        _pdp.advance(kernel, batch, ts, dt)
        phi, psi = batch.y[:, 0], batch.y[:, 1]
        samples[:, i] = w * np.einsum("ij,ij->i", psi.conj(), A.apply_rows(phi))
        n_phi = np.einsum("ij,ij->i", phi.conj(), phi).real
        n_psi = np.einsum("ij,ij->i", psi.conj(), psi).real
        bound_sum[i] = np.sum(np.abs(w) ** 2 * n_phi * n_psi)
        survivors[i] = np.count_nonzero(batch.active & (batch.jumps == 0))
        if record_chi:
            chi_sum[i] = np.einsum("i,ij,ik->jk", w, phi, psi.conj())
    return _ChunkResult(
        stats=SampleStats.from_samples(samples),
        bound_sum=bound_sum,
        survivors=survivors,
        jumps=int(batch.jumps.sum()),
        dead=int(np.count_nonzero(~batch.active & ~batch.aborted)),
        aborted=int(np.count_nonzero(batch.aborted)),
        chi_sum=chi_sum,
        diag=dict(batch.diag),
    )


def _merge_diag(into: dict, diag: dict):
    for key, val in diag.items():
        if key == "channel_counts":
            into[key] = into.get(key, 0) + val
        elif key.startswith("max_"):
            into[key] = max(into.get(key, -np.inf), val)


# driver -------------------------------------------------------------------------------------


def simulate(model: LindbladModel, engine: EngineKind, A: Operator, B: Operator, initial, times,
             trajectories: int, *, dt: float | None = None, seed: int = 0, stream: int = 0,
             workers: int = 1, chunk_size: int = CHUNK_SIZE, record_chi: bool = False,
             normalization: complex | None = None) -> EnsembleResult:
    """Run ``trajectories`` pairs and sample w<psi|A|phi> at ``times``.

    ``initial`` is a state vector, a density matrix (sampled through its
    eigen-decomposition) or one of :class:`PureState`, :class:`Mixture`,
    :class:`SampledStates`.  Trajectories whose ``B psi0`` vanishes contribute
    zero; a pure initial state with ``B psi0 = 0`` raises
    :class:`DegenerateInitialization`.
    """
    if trajectories < 1:
        raise StructuralError("need at least one trajectory")
    if A.dim != model.dim or B.dim != model.dim:
        raise StructuralError("operator and model dimensions differ")
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if times.size == 0 or times[0] < 0 or np.any(np.diff(times) <= 0):
        raise StructuralError("sample times must be non-negative and strictly increasing")
    initial = as_initial(initial)
    if isinstance(initial, PureState) and not np.linalg.norm(B.apply(initial.vector)) > 0:
        raise DegenerateInitialization("B|psi0> = 0: the correlator vanishes identically")
    if isinstance(initial, SampledStates) and len(initial.rows) < trajectories:
        raise StructuralError("fewer sampled initial states than trajectories")
    dt = default_dt(model) if dt is None else float(dt)
    if not dt > 0:
        raise StructuralError("dt must be positive")
    if normalization is None:
        normalization = initial.expectation(A @ B)

    starts = list(range(0, trajectories, chunk_size))
    jobs = [(model, engine, A, B, initial, times, dt, seed, stream, s,
             min(chunk_size, trajectories - s), record_chi) for s in starts]
    t0 = _time.perf_counter()
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_run_chunk, *zip(*jobs)))
    else:
        parts = [_run_chunk(*job) for job in jobs]
    wall = _time.perf_counter() - t0

    stats = parts[0].stats
    bound = parts[0].bound_sum.copy()
    surv = parts[0].survivors.copy()
    chi = parts[0].chi_sum.copy() if record_chi else None
    diag: dict = {}
    _merge_diag(diag, parts[0].diag)
    for p in parts[1:]:
        stats = stats.merge(p.stats)
        bound += p.bound_sum
        surv += p.survivors
        if record_chi:
            chi += p.chi_sum
        _merge_diag(diag, p.diag)
    K = trajectories
    se_re, se_im = stats.stderr()
    series = CorrelationSeries(times, stats.mean, se_re, se_im, K, normalization)
    second = np.abs(stats.mean) ** 2 + (stats.m2_re + stats.m2_im) / K
    return EnsembleResult(
        series=series,
        error_bound=bound / K / K,
        survival=surv / K,
        second_moment=second,
        mean_jumps=sum(p.jumps for p in parts) / K,
        dead=sum(p.dead for p in parts),
        aborted=sum(p.aborted for p in parts),
        chi=None if chi is None else chi / K,
        diagnostics=diag,
        wall_time=wall,
    )
