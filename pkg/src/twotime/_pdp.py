"""Batched piecewise-deterministic jump process.

A batch holds ``n`` independent trajectories, each a stack of ``m`` vectors
(``y`` has shape ``(n, m, d)``).  Between jumps every row follows the kernel's
deterministic drift, integrated with classical RK4; ``log q`` is integrated
alongside as ``d log q / dt = -rate``.  A row jumps when ``log q`` falls below
``log r``; the crossing time is located by linear interpolation of ``log q``
within the step, the row is re-integrated to that time, the jump map is
applied and the remainder of the step is completed.

Kernels implement ``derivative(y) -> (dy, rate)``, ``weights(y) -> (n, nch)``,
``jump(y, k) -> y``, ``project(y) -> y`` and ``dead(y) -> bool mask``, and
optionally ``accept(y0, y_raw, diag) -> y`` to post-process a completed step
(it replaces ``project`` there and may record diagnostics).
Rows whose rate is not finite are aborted (zeroed and frozen).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateError

_STREAM_SHIFT = 56


def trajectory_rng(seed: int, index: int, stream: int = 0) -> np.random.Generator:
    """Counter-based generator keyed by (master seed, trajectory index, stream)."""
    if not 0 <= index < (1 << _STREAM_SHIFT):
        raise ValueError("trajectory index out of range")
    if not 0 <= stream < (1 << (64 - _STREAM_SHIFT)):
        raise ValueError("stream must lie in [0, 256)")
    key = [int(seed) & 0xFFFFFFFFFFFFFFFF, (int(stream) << _STREAM_SHIFT) | int(index)]
    return np.random.Generator(np.random.Philox(key=key))


def select_index(weights: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Cumulative-sum channel choice, row-wise; zero-weight channels are skipped."""
    weights = np.atleast_2d(weights)
    cum = np.cumsum(weights, axis=1)
    target = np.asarray(u, dtype=float).reshape(-1, 1) * cum[:, -1:]
    k = (cum <= target).sum(axis=1)
    return np.minimum(k, weights.shape[1] - 1)


@dataclass
class Batch:
    y: np.ndarray
    logq: np.ndarray
    logr: np.ndarray
    rngs: list
    t: float = 0.0
    jumps: np.ndarray = None
    active: np.ndarray = None
    aborted: np.ndarray = None
    diag: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.y.shape[0]
        if self.jumps is None:
            self.jumps = np.zeros(n, dtype=np.int64)
        if self.active is None:
            self.active = np.ones(n, dtype=bool)
        if self.aborted is None:
            self.aborted = np.zeros(n, dtype=bool)


def draw_log_threshold(rng: np.random.Generator) -> float:
    r = rng.random()
    return np.log(r) if r > 0 else -np.inf


def rk4(kernel, y: np.ndarray, h: np.ndarray):
    """One RK4 step with per-row step sizes ``h``; returns (y_new, dlogq).

    Kernels may divide by vanishing norms; the resulting non-finite rows are
    detected and aborted by the caller, so floating-point warnings are muted.
    """
    hh = h[:, None, None]
    half = 0.5 * hh
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        k1, g1 = kernel.derivative(y)
        k2, g2 = kernel.derivative(y + half * k1)
        k3, g3 = kernel.derivative(y + half * k2)
        k4, g4 = kernel.derivative(y + hh * k3)
    y_new = y + (hh / 6.0) * (k1 + k4 + 2.0 * (k2 + k3))
    dlogq = -(h / 6.0) * (g1 + g4 + 2.0 * (g2 + g3))
    return y_new, dlogq


def _accept(kernel, y0, y_raw, diag):
    if hasattr(kernel, "accept"):
        return kernel.accept(y0, y_raw, diag)
    return kernel.project(y_raw)


def _abort(batch: Batch, rows: np.ndarray):
    if rows.size:
        batch.y[rows] = 0.0
        batch.active[rows] = False
        batch.aborted[rows] = True


def _jump_rows(kernel, batch: Batch, rows: np.ndarray):
    y = batch.y[rows]
    w = kernel.weights(y)
    total = w.sum(axis=1)
    if not np.all(total > 0):
        raise DegenerateError("jump pending but every channel has zero weight")
    u = np.array([batch.rngs[i].random() for i in rows])
    k = select_index(w, u)
    batch.y[rows] = kernel.project(kernel.jump(y, k))
    batch.logq[rows] = 0.0
    batch.logr[rows] = [draw_log_threshold(batch.rngs[i]) for i in rows]
    batch.jumps[rows] += 1
    batch.diag["channel_counts"] = batch.diag.get("channel_counts", 0) + np.bincount(
        k, minlength=w.shape[1])
    dead = kernel.dead(batch.y[rows])
    if dead.any():
        batch.active[rows[dead]] = False
        batch.y[rows[dead]] = 0.0


def _step_rows(kernel, batch: Batch, rows: np.ndarray, h: np.ndarray):
    """Advance ``rows`` by per-row times ``h``, performing any jumps on the way."""
    remaining = np.asarray(h, dtype=float).copy()
    while rows.size:
        y0 = batch.y[rows]
        lq0 = batch.logq[rows]
        y_raw, dl = rk4(kernel, y0, remaining)
        lq1 = lq0 + dl
        if np.isfinite(lq1.sum() + y_raw.sum()) and not (lq1 < batch.logr[rows]).any():
            # common case: every row finite and no threshold crossed
            batch.y[rows] = _accept(kernel, y0, y_raw, batch.diag)
            batch.logq[rows] = lq1
            return
        bad = ~(np.isfinite(dl) & np.isfinite(y_raw).all(axis=(1, 2)))
        if bad.any():
            _abort(batch, rows[bad])
            keep = ~bad
            rows, remaining = rows[keep], remaining[keep]
            y0, lq0, y_raw, dl = y0[keep], lq0[keep], y_raw[keep], dl[keep]
            if not rows.size:
                return
        lq1 = lq0 + dl
        cross = lq1 < batch.logr[rows]
        ok = ~cross
        if ok.any():
            y_acc = _accept(kernel, y0[ok], y_raw[ok], batch.diag)
            batch.y[rows[ok]] = y_acc
            batch.logq[rows[ok]] = lq1[ok]
        if not cross.any():
            return
        c = rows[cross]
        denom = lq1[cross] - lq0[cross]
        frac = np.clip((batch.logr[c] - lq0[cross]) / denom, 0.0, 1.0)
        hc = frac * remaining[cross]
        yc_raw, dlc = rk4(kernel, y0[cross], hc)
        bad = ~(np.isfinite(dlc) & np.isfinite(yc_raw).all(axis=(1, 2)))
        yc = yc_raw.copy()
        if (~bad).any():
            yc[~bad] = _accept(kernel, y0[cross][~bad], yc_raw[~bad], batch.diag)
        batch.y[c] = yc
        _abort(batch, c[bad])
        good = c[~bad]
        rest = (remaining[cross] - hc)[~bad]
        if good.size:
            _jump_rows(kernel, batch, good)
        still = batch.active[good] & (rest > 1e-15 * max(1.0, abs(batch.t)))
        rows, remaining = good[still], rest[still]


def advance(kernel, batch: Batch, t_target: float, dt_max: float):
    """Advance every active row of ``batch`` to ``t_target`` with steps <= ``dt_max``."""
    span = t_target - batch.t
    if span < 0:
        raise ValueError("t_target lies in the past")
    if span == 0:
        return batch
    n_steps = max(1, int(np.ceil(span / dt_max - 1e-9)))
    h = span / n_steps
    for _ in range(n_steps):
        rows = np.flatnonzero(batch.active)
        if rows.size:
            _step_rows(kernel, batch, rows, np.full(rows.size, h))
        batch.t += h
    batch.t = t_target
    return batch
