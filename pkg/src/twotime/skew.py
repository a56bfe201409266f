"""Paired-trajectory unravelings of chi(t) = exp(Lt) B rho(0).

Each realization carries a pair (phi, psi) and a weight ``w``; its
contribution to chi is the dyad ``w |phi><psi|`` and to the correlator
``w <psi|A|phi>``.  All engines share the same piecewise-deterministic
driver (:mod:`twotime._pdp`) and differ only in the continuous coefficients,
jump rate, channel weights and jump map:

``Optimized``
    rate (2/s) sum_k Phi_k Psi_k in the symmetric gauge |phi| = |psi|;
    jumps preserve both norms and s never increases.
``GardinerZoller``
    rate 2 sum_k Psi_k^2 (Psi measured on the normalized psi); psi keeps
    its norm, phi is left uncontrolled.
``DoubledHilbert``
    standard jump unraveling of the stacked vector (phi, psi) with
    |phi|^2 + |psi|^2 = 1 (arithmetic-mean rate).
``MCDPair(nu)``
    jumps driven by psi + nu*phi, normalized so that |psi + nu*phi| = 1.
``SpecializedA(op_a)``
    rate 2 sum_k |<psi|s_k^+ A s_k|phi>| / |<psi|A|phi>|; experimental and
    known to be unreliable.

Multi-channel forms of the last four sum rates and weights per channel.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import _pdp
from .errors import (DeadTrajectoryError, DegenerateError, DegenerateInitialization,
                     RateSingularityError, StructuralError)
from .hilbert import Operator, as_state
from .model import LindbladModel
from .symmetric import _expect_rows, jump_product_ops

_TINY = 1e-300


def _sq_norms(v):
    return np.einsum("...j,...j->...", v.conj(), v).real


def _rowsum(x):
    return np.add.reduce(x, axis=1)


class _PairKernel:
    def __init__(self, model: LindbladModel):
        self.model = model
        self.d = model.dim
        self.heff = model.effective_hamiltonian
        # dense H_eff acts on (n, 2, d) stacks directly through matmul broadcasting
        self._heff_t = None if self.heff.is_sparse else np.ascontiguousarray(self.heff.matrix.T)
        self.nops = jump_product_ops(model)
        self.channels = model.channels
        diags = [dg for dg, _ in self.nops]
        # diagonal jump products are used only when non-negative, so no clipping is needed
        self.diag_products = (np.stack(diags, axis=1)
                              if diags and all(dg is not None and np.all(dg >= 0) for dg in diags)
                              else None)
        self._weights_ri = None
        if self.diag_products is not None:
            # columns: norm, total rate, per-channel rates; rows repeat for the
            # interleaved (re, im) float view of a complex vector
            cols = np.column_stack([np.ones(self.d), self.diag_products.sum(axis=1),
                                    self.diag_products])
            self._weights_ri = np.repeat(cols, 2, axis=0)

    def _diag_table(self, y):
        """``(..., 2 + nch)`` table of |v|^2, sum_k <s_k^+ s_k>, <s_k^+ s_k>."""
        if y.strides[-1] != y.itemsize:
            y = np.ascontiguousarray(y)
        return np.square(y.view(np.float64)) @ self._weights_ri

    def _moments_tot(self, y):
        """Squared norms ``(n, 2)``, total and per-channel <v|s_k^+ s_k|v> of both vectors."""
        if self._weights_ri is not None:
            tab = self._diag_table(y)
            return tab[..., 0], tab[..., 1], tab[..., 2:]
        n = y.shape[0]
        flat = y.reshape(2 * n, self.d)
        ex = np.maximum(_expect_rows(self.nops, flat), 0.0).reshape(n, 2, -1)
        return _sq_norms(y), np.add.reduce(ex, axis=-1), ex

    def _moments(self, y):
        """Squared norms ``(n, 2)`` and <v|s_k^+ s_k|v> ``(n, 2, nch)`` of both vectors."""
        nrm, _, ex = self._moments_tot(y)
        return nrm, ex

    def _expect_one(self, v):
        if self._weights_ri is not None:
            return self._diag_table(v)[..., 2:]
        return np.maximum(_expect_rows(self.nops, v), 0.0)

    def _assemble(self, y, c1, c2):
        n = y.shape[0]
        c = np.empty((n, 2, 1))
        c[:, 0, 0] = c1
        c[:, 1, 0] = c2
        if self._heff_t is not None:
            return c * y - y @ self._heff_t
        return c * y - self.heff.apply_rows(y.reshape(2 * n, self.d)).reshape(y.shape)

    def jump(self, y, k):
        out = np.empty_like(y)
        for ch in np.unique(k):
            rows = np.flatnonzero(k == ch)
            sub = y[rows]
            a1, a2 = self.jump_scales(sub, ch)
            sig = self.channels[ch]
            out[rows, 0] = a1[:, None] * sig.apply_rows(sub[:, 0])
            out[rows, 1] = a2[:, None] * sig.apply_rows(sub[:, 1])
        return out

    def project(self, y):
        return y

    def accept(self, y0, y_raw, diag):
        """Post-process a completed continuous step (default: ``project``)."""
        return self.project(y_raw)

    def dead(self, y):
        return ~((_sq_norms(y[:, 0]) > 0) & (_sq_norms(y[:, 1]) > 0))


def _rebalance(y, a2, b2):
    """Dyad-preserving rescaling to |phi| = |psi|, given the squared norms."""
    ok = (a2 > 0) & (b2 > 0)
    c = np.ones_like(a2)
    c[ok] = (b2[ok] / a2[ok]) ** 0.25
    out = y.copy()
    out[:, 0] *= c[:, None]
    out[:, 1] /= c[:, None]
    return out


class _Rebalancing:
    """Mixin: restore |phi| = |psi| by a dyad-preserving rescaling."""

    def project(self, y):
        return _rebalance(y, _sq_norms(y[:, 0]), _sq_norms(y[:, 1]))


class _OptimizedKernel(_Rebalancing, _PairKernel):
    def _parts(self, y):
        nrm, ex = self._moments(y)
        return ex[:, 0], ex[:, 1], np.sqrt(nrm[:, 0] * nrm[:, 1])

    def derivative(self, y):
        if self._weights_ri is not None and y.strides[-1] == y.itemsize:
            tab = np.square(y.view(np.float64)) @ self._weights_ri
            # roots of (|phi|^2|psi|^2, P_tot Q_tot) in one pass
            root = np.sqrt(tab[:, 0, :2] * tab[:, 1, :2])
            inv = 1.0 / root[:, 0]
            if tab.shape[-1] == 3:
                pp = root[:, 1] * inv
            else:
                pp = _rowsum(np.sqrt(tab[:, 0, 2:] * tab[:, 1, 2:])) * inv
            half = (0.5 * inv) * (tab[:, 0, 1] - tab[:, 1, 1])
            return self._assemble(y, pp + half, pp - half), 2.0 * pp
        nrm, tot, ex = self._moments_tot(y)
        inv = 1.0 / np.sqrt(nrm[:, 0] * nrm[:, 1])
        if ex.shape[-1] == 1:
            pp = np.sqrt(tot[:, 0] * tot[:, 1])
        else:
            pp = _rowsum(np.sqrt(ex[:, 0] * ex[:, 1]))
        half = 0.5 * (tot[:, 0] - tot[:, 1])
        return self._assemble(y, (pp + half) * inv, (pp - half) * inv), 2.0 * pp * inv

    def weights(self, y):
        p2, q2, _ = self._parts(y)
        return np.sqrt(p2 * q2)

    def jump_scales(self, y, k):
        p2, q2, s = self._parts(y)
        rs = np.sqrt(s)
        return rs / np.sqrt(p2[:, k]), rs / np.sqrt(q2[:, k])

    def accept(self, y0, y_raw, diag):
        # The exact flow has ds/dt = -sum_k (Phi_k - Psi_k)^2 <= 0 and keeps
        # |phi|^2 - |psi|^2 constant; undo the O(h^5) truncation excess of s.
        n0 = _sq_norms(y0)
        n1 = _sq_norms(y_raw)
        s0 = np.sqrt(n0[:, 0] * n0[:, 1])
        s1 = np.sqrt(n1[:, 0] * n1[:, 1])
        excess = float((s1 - s0).max())
        with np.errstate(divide="ignore", invalid="ignore"):
            gap = np.abs(n1[:, 0] - n1[:, 1]) / s1
            bal = (n1[:, 1] / n1[:, 0]) ** 0.25
            live = s1 > 0
            if not live.all():
                gap[~live] = 0.0
                bal[~live] = 1.0
            scale = np.empty((y_raw.shape[0], 2, 1))
            scale[:, 0, 0] = bal
            scale[:, 1, 0] = 1.0 / bal
            if excess > 0:
                over = s1 > s0
                scale[over] *= np.sqrt(s0[over] / s1[over])[:, None, None]
        diag["max_raw_s_increase"] = max(diag.get("max_raw_s_increase", -np.inf), excess)
        diag["max_gauge_drift"] = max(diag.get("max_gauge_drift", 0.0), float(gap.max()))
        out = y_raw * scale
        n2 = _sq_norms(out)
        s2 = np.sqrt(n2[:, 0] * n2[:, 1])
        diag["max_s_increase"] = max(diag.get("max_s_increase", -np.inf), float((s2 - s0).max()))
        return out


class _GZKernel(_PairKernel):
    def _qn(self, y):
        psi = y[:, 1]
        return self._expect_one(psi) / _sq_norms(psi)[:, None]

    def derivative(self, y):
        c = _rowsum(self._qn(y))
        return self._assemble(y, c, c), 2.0 * c

    def weights(self, y):
        return self._expect_one(y[:, 1])

    def jump_scales(self, y, k):
        a = 1.0 / np.sqrt(self._qn(y)[:, k])
        return a, a


class _DoubledKernel(_PairKernel):
    def _parts(self, y):
        nrm, ex = self._moments(y)
        return ex.sum(axis=1), nrm.sum(axis=1)

    def derivative(self, y):
        both, nrm = self._parts(y)
        c = both.sum(axis=1) / nrm
        return self._assemble(y, c, c), 2.0 * c

    def weights(self, y):
        return self._parts(y)[0]

    def jump_scales(self, y, k):
        both, nrm = self._parts(y)
        a = np.sqrt(nrm / both[:, k])
        return a, a

    def project(self, y):
        nrm = np.sqrt(_sq_norms(y).sum(axis=1))
        return y / nrm[:, None, None]


class _MCDKernel(_PairKernel):
    def __init__(self, model, nu):
        super().__init__(model)
        self.nu = complex(nu)

    def _parts(self, y):
        v = y[:, 1] + self.nu * y[:, 0]
        return self._expect_one(v), _sq_norms(v)

    def derivative(self, y):
        n2, nrm = self._parts(y)
        c = n2.sum(axis=1) / nrm
        return self._assemble(y, c, c), 2.0 * c

    def weights(self, y):
        return self._parts(y)[0]

    def jump_scales(self, y, k):
        n2, nrm = self._parts(y)
        a = np.sqrt(nrm / n2[:, k])
        return a, a

    def project(self, y):
        nrm = np.linalg.norm(y[:, 1] + self.nu * y[:, 0], axis=1)
        return y / nrm[:, None, None]


class _SpecializedKernel(_Rebalancing, _PairKernel):
    def __init__(self, model, op_a: Operator):
        super().__init__(model)
        if op_a.dim != model.dim:
            raise StructuralError("observable and model dimensions differ")
        self.op_a = op_a
        self.sandwiched = [c.dag() @ op_a @ c for c in model.channels]
        self.norm_a = op_a.norm_bound()

    def _parts(self, y):
        phi, psi = y[:, 0], y[:, 1]
        g = np.einsum("ij,ij->i", psi.conj(), self.op_a.apply_rows(phi))
        a = np.stack([np.abs(np.einsum("ij,ij->i", psi.conj(), m.apply_rows(phi)))
                      for m in self.sandwiched], axis=1)
        nrm, ex = self._moments(y)
        return np.abs(g), a, ex[:, 0], ex[:, 1], np.sqrt(nrm[:, 0] * nrm[:, 1])

    def derivative(self, y):
        g, a, p2, q2, s = self._parts(y)
        singular = g <= 1e-12 * self.norm_a * s
        rate = np.where(singular, np.nan, 2.0 * _rowsum(a) / g)
        split = 0.5 * _rowsum(p2 - q2) / s
        return self._assemble(y, 0.5 * rate + split, 0.5 * rate - split), rate

    def weights(self, y):
        return self._parts(y)[1]

    def jump_scales(self, y, k):
        g, a, p2, q2, _ = self._parts(y)
        prod = g / a[:, k]
        ratio = np.sqrt(q2[:, k] / p2[:, k])
        return np.sqrt(prod * ratio), np.sqrt(prod / ratio)


# engine kinds ---------------------------------------------------------------


def _symmetric_gauge(phi, psi):
    c = np.sqrt(np.linalg.norm(psi) / np.linalg.norm(phi))
    return c * phi, psi / c


class EngineKind:
    """Base class; subclasses build a kernel and fix the initial normalization."""

    name = "engine"

    def kernel(self, model: LindbladModel):
        raise NotImplementedError

    def prepare(self, phi, psi):
        """Gauge-fix (phi, psi) = (B psi0, psi0); returns (phi, psi, w)."""
        phi, psi = _symmetric_gauge(phi, psi)
        return phi, psi, 1.0 + 0j


@dataclass(frozen=True)
class Optimized(EngineKind):
    name = "optimized"

    def kernel(self, model):
        return _OptimizedKernel(model)


@dataclass(frozen=True)
class GardinerZoller(EngineKind):
    name = "gardiner_zoller"

    def kernel(self, model):
        return _GZKernel(model)


@dataclass(frozen=True)
class DoubledHilbert(EngineKind):
    name = "doubled_hilbert"

    def kernel(self, model):
        return _DoubledKernel(model)

    def prepare(self, phi, psi):
        phi, psi = _symmetric_gauge(phi, psi)
        n2 = np.vdot(phi, phi).real + np.vdot(psi, psi).real
        n = np.sqrt(n2)
        return phi / n, psi / n, complex(n2)


@dataclass(frozen=True)
class MCDPair(EngineKind):
    nu: complex = 1.0
    name = "mcd_pair"

    def __post_init__(self):
        if abs(abs(complex(self.nu)) - 1.0) > 1e-12:
            raise StructuralError("nu must have unit modulus")

    def kernel(self, model):
        return _MCDKernel(model, self.nu)

    def prepare(self, phi, psi):
        phi, psi = _symmetric_gauge(phi, psi)
        n = np.linalg.norm(psi + complex(self.nu) * phi)
        if not n > 0:
            raise DegenerateInitialization("psi + nu*phi vanishes; pick another nu")
        return phi / n, psi / n, complex(n * n)


@dataclass(frozen=True, eq=False)
class SpecializedA(EngineKind):
    op_a: Operator = None
    name = "specialized_a"

    def kernel(self, model):
        if self.op_a is None:
            raise StructuralError("SpecializedA needs an observable")
        return _SpecializedKernel(model, self.op_a)


ENGINES = {
    "optimized": Optimized,
    "gardiner_zoller": GardinerZoller,
    "doubled_hilbert": DoubledHilbert,
    "mcd_pair": MCDPair,
    "specialized_a": SpecializedA,
}


# single-pair API --------------------------------------------------------------


@dataclass
class PairState:
    phi: np.ndarray
    psi: np.ndarray
    weight: complex
    q: float
    r: float
    t: float
    rng: np.random.Generator
    engine: EngineKind
    jumps: int = 0

    def chi(self) -> np.ndarray:
        """The contributed dyad w|phi><psi|."""
        return self.weight * np.outer(self.phi, self.psi.conj())

    @property
    def s(self) -> float:
        return float(np.linalg.norm(self.phi) * np.linalg.norm(self.psi))


def init_pair(psi0, B: Operator, engine: EngineKind, seed: int = 0, index: int = 0) -> PairState:
    psi0 = as_state(psi0)
    phi0 = B.apply(psi0)
    if not np.linalg.norm(phi0) > 0:
        raise DegenerateInitialization("B|psi0> = 0: the correlator vanishes identically")
    phi, psi, w = engine.prepare(phi0, psi0.copy())
    rng = _pdp.trajectory_rng(seed, index)
    return PairState(phi, psi, w, 1.0, rng.random(), 0.0, rng, engine)


def _stack(pair: PairState) -> np.ndarray:
    return np.stack([pair.phi, pair.psi])[None].astype(complex)


def _check(m: LindbladModel, pair: PairState):
    if pair.phi.shape != (m.dim,) or pair.psi.shape != (m.dim,):
        raise StructuralError("pair and model dimensions differ")


def drift(m: LindbladModel, pair: PairState):
    """(dphi/dt, dpsi/dt, dq/dt) of the continuous branch."""
    _check(m, pair)
    if not (np.linalg.norm(pair.phi) > 0 or np.linalg.norm(pair.psi) > 0):
        raise DeadTrajectoryError("both vectors vanished")
    if isinstance(pair.engine, Optimized) and not pair.s > 0:
        raise DeadTrajectoryError("s = 0")
    with np.errstate(divide="ignore", invalid="ignore"):
        dy, rate = pair.engine.kernel(m).derivative(_stack(pair))
    if not np.isfinite(rate[0]):
        raise RateSingularityError("jump rate is singular")
    return dy[0, 0], dy[0, 1], -pair.q * float(rate[0])


def jump_rate(m: LindbladModel, pair: PairState) -> float:
    return -drift(m, pair)[2] / pair.q


def select_channel(m: LindbladModel, pair: PairState, u: float) -> int:
    _check(m, pair)
    w = pair.engine.kernel(m).weights(_stack(pair))
    if not w.sum() > 0:
        raise DegenerateError("no channel can fire")
    return int(_pdp.select_index(w, [u])[0])


def apply_jump(m: LindbladModel, pair: PairState, k: int) -> PairState:
    _check(m, pair)
    kern = pair.engine.kernel(m)
    y = _stack(pair)
    if not kern.weights(y)[0, k] > 0:
        raise StructuralError(f"channel {k} has zero weight for this pair")
    out = kern.project(kern.jump(y, np.array([k])))
    if not np.all(np.isfinite(out)):
        raise StructuralError("jump produced a non-finite state")
    return replace(pair, phi=out[0, 0].copy(), psi=out[0, 1].copy(), q=1.0,
                   r=pair.rng.random(), jumps=pair.jumps + 1)


def advance(m: LindbladModel, pair: PairState, dt_max: float, t_target: float) -> PairState:
    """Integrate to ``t_target`` with steps <= ``dt_max``, jumping where q crosses r."""
    _check(m, pair)
    if t_target < pair.t:
        raise ValueError("t_target precedes the pair's clock")
    logr = np.log(pair.r) if pair.r > 0 else -np.inf
    batch = _pdp.Batch(y=_stack(pair), logq=np.array([np.log(pair.q)]), logr=np.array([logr]),
                       rngs=[pair.rng], t=pair.t, jumps=np.array([pair.jumps]))
    _pdp.advance(pair.engine.kernel(m), batch, t_target, dt_max)
    if batch.aborted[0]:
        raise RateSingularityError(f"trajectory aborted at t <= {t_target}")
    lr = batch.logr[0]
    return replace(pair, phi=batch.y[0, 0].copy(), psi=batch.y[0, 1].copy(),
                   q=float(np.exp(batch.logq[0])), r=float(np.exp(lr)) if np.isfinite(lr) else 0.0,
                   t=t_target, jumps=int(batch.jumps[0]))


def expected_increment(m: LindbladModel, pair: PairState, dt: float) -> np.ndarray:
    """Branch-weighted mean change of w|phi><psi| over one step of length ``dt``."""
    _check(m, pair)
    kern = pair.engine.kernel(m)
    y = _stack(pair)
    w = pair.weight
    chi = w * np.outer(y[0, 0], y[0, 1].conj())
    with np.errstate(divide="ignore", invalid="ignore"):
        _, rate = kern.derivative(y)
    rate = float(rate[0])
    if not np.isfinite(rate):
        raise RateSingularityError("jump rate is singular")
    dp = rate * dt
    inc = np.zeros_like(chi)
    weights = kern.weights(y)[0]
    total = weights.sum()
    if dp > 0 and total > 0:
        for k in np.flatnonzero(weights > 0):
            yj = kern.project(kern.jump(y, np.array([k])))
            jumped = w * np.outer(yj[0, 0], yj[0, 1].conj())
            inc += dp * weights[k] / total * (jumped - chi)
    y1, _ = _pdp.rk4(kern, y, np.array([dt]))
    y1 = kern.accept(y, y1, {})
    cont = w * np.outer(y1[0, 0], y1[0, 1].conj())
    inc += (1.0 - dp) * (cont - chi)
    return inc
