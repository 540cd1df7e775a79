"""Stratonovich SDE integration with the reversible Heun scheme.

The solver carries a pair ``(z, zh)``.  One step from ``t_i`` to ``t_i + dt``
with Brownian increment ``dW`` is::

    zh' = 2 z - zh + f(t_i, zh) dt + g(t_i, zh) dW
    z'  = z + (f(t_i, zh) + f(t_i+1, zh')) dt / 2 + (g(t_i, zh) + g(t_i+1, zh')) dW / 2

and inverts in closed form, so the backward sweep can rebuild every state
from the final one instead of storing per-step network activations.

Diffusion outputs are either diagonal (same shape as ``z``; requires
``d_w == d_z``) or general (shape ``z.shape + (d_w,)``).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import NumericalError, ShapeError
from .neural import MlpParams, mlp_backward, mlp_forward


class SolveMode(enum.Enum):
    REVERSIBLE = "reversible"
    STORE_ALL = "store_all"

    @classmethod
    def parse(cls, value) -> "SolveMode":
        if isinstance(value, cls):
            return value
        return cls(str(value).lower().replace("-", "_"))


@dataclass(frozen=True, eq=False)
class BrownianPath:
    """Brownian increments on a uniform grid; ``increments`` is (n, [batch...,] d_w)."""

    times: np.ndarray
    increments: np.ndarray
    seed: object = None

    @property
    def n_steps(self) -> int:
        return self.increments.shape[0]

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if self.times.size > 1 else 0.0

    @property
    def d_w(self) -> int:
        return self.increments.shape[-1]


def brownian_increments(rng: np.random.Generator, n: int, dt: float, d_w: int) -> np.ndarray:
    return rng.standard_normal((n, d_w)) * np.sqrt(dt)


def sample_brownian(n: int, dt: float, d_w: int, seed, t0: float = 0.0) -> BrownianPath:
    if not dt > 0:
        raise ValueError(f"time step must be positive, got {dt}")
    if n < 0 or d_w < 1:
        raise ValueError(f"need n >= 0 and d_w >= 1, got n={n}, d_w={d_w}")
    inc = brownian_increments(np.random.default_rng(seed), n, dt, d_w)
    return BrownianPath(t0 + dt * np.arange(n + 1), inc, seed)


def stack_brownian(paths: list[BrownianPath]) -> BrownianPath:
    """Combine single paths on a common grid into one batched path (batch axis 1)."""
    inc = np.stack([p.increments for p in paths], axis=1)
    return BrownianPath(paths[0].times, inc, tuple(p.seed for p in paths))


def noise_term(gv: np.ndarray, dW: np.ndarray, z_ndim: int) -> np.ndarray:
    if gv.ndim == z_ndim:
        return gv * dW
    return np.einsum("...ij,...j->...i", gv, dW)


def noise_term_vjp(cot: np.ndarray, gv: np.ndarray, dW: np.ndarray) -> np.ndarray:
    if gv.ndim == cot.ndim:
        return cot * dW
    return cot[..., :, None] * dW[..., None, :]


@dataclass(eq=False)
class FieldTape:
    f: np.ndarray
    g: np.ndarray
    saved: object = None

    @property
    def nbytes(self) -> int:
        extra = self.saved.nbytes if hasattr(self.saved, "nbytes") else 0
        return self.f.nbytes + self.g.nbytes + extra


class CallableField:
    """Adapts plain ``f(t, z)`` / ``g(t, z)`` callables; forward-only."""

    n_params = 0

    def __init__(self, f: Callable, g: Callable):
        self.f = f
        self.g = g

    def evaluate(self, t, z, record=False) -> FieldTape:
        return FieldTape(np.asarray(self.f(t, z), dtype=np.float64), np.asarray(self.g(t, z), dtype=np.float64))

    def vjp(self, tape, fbar, gbar):
        raise NotImplementedError("CallableField has no reverse mode; use NeuralField or LinearField")


class LinearField:
    """``f(z) = A z`` and diagonal ``g(z) = B z``; parameters are (A, B)."""

    def __init__(self, A, B):
        self.A = np.asarray(A, dtype=np.float64)
        self.B = np.asarray(B, dtype=np.float64)

    @property
    def n_params(self) -> int:
        return self.A.size + self.B.size

    def evaluate(self, t, z, record=False) -> FieldTape:
        return FieldTape(z @ self.A.T, z @ self.B.T, saved=z if record else None)

    def vjp(self, tape, fbar, gbar):
        z = tape.saved
        zbar = fbar @ self.A + gbar @ self.B
        gA = (fbar.reshape(-1, fbar.shape[-1]).T @ z.reshape(-1, z.shape[-1])).reshape(-1)
        gB = (gbar.reshape(-1, gbar.shape[-1]).T @ z.reshape(-1, z.shape[-1])).reshape(-1)
        return zbar, np.concatenate([gA, gB])


class NeuralField:
    """Drift and diffusion given by tanh MLPs of ``(t, z)`` (or of ``z`` alone)."""

    def __init__(self, drift: MlpParams, diffusion: MlpParams, d_z: int, d_w: int,
                 diagonal: bool = True, time_input: bool = True):
        self.drift = drift
        self.diffusion = diffusion
        self.d_z = d_z
        self.d_w = d_w
        self.diagonal = diagonal
        self.time_input = time_input
        n_in = d_z + int(time_input)
        g_out = d_z if diagonal else d_z * d_w
        if diagonal and d_w != d_z:
            raise ShapeError(f"diagonal diffusion needs d_w == d_z, got {d_w} != {d_z}")
        if drift.n_in != n_in or drift.n_out != d_z:
            raise ShapeError(f"drift network sizes {drift.sizes} do not fit d_z={d_z}")
        if diffusion.n_in != n_in or diffusion.n_out != g_out:
            raise ShapeError(f"diffusion network sizes {diffusion.sizes} do not fit output {g_out}")

    @property
    def n_params(self) -> int:
        return self.drift.n_params + self.diffusion.n_params

    def _input(self, t, z):
        if not self.time_input:
            return z
        return np.concatenate([np.full(z.shape[:-1] + (1,), float(t)), z], axis=-1)

    def evaluate(self, t, z, record=False) -> FieldTape:
        inp = self._input(t, z)
        fv, ftape = mlp_forward(self.drift, inp)
        gv, gtape = mlp_forward(self.diffusion, inp)
        if not self.diagonal:
            gv = gv.reshape(z.shape[:-1] + (self.d_z, self.d_w))
        return FieldTape(fv, gv, saved=_NetTapes(ftape, gtape) if record else None)

    def vjp(self, tape, fbar, gbar):
        ft, gt = tape.saved.drift, tape.saved.diffusion
        in_f, grad_f = mlp_backward(self.drift, ft, fbar)
        gbar = gbar.reshape(gbar.shape[: fbar.ndim - 1] + (-1,))
        in_g, grad_g = mlp_backward(self.diffusion, gt, gbar)
        zbar = in_f + in_g
        if self.time_input:
            zbar = zbar[..., 1:]
        return zbar, np.concatenate([grad_f, grad_g])


@dataclass(eq=False)
class _NetTapes:
    drift: object
    diffusion: object

    @property
    def nbytes(self) -> int:
        return self.drift.nbytes + self.diffusion.nbytes


@dataclass
class TapeLedger:
    """Instrumented accounting of network activation records held by the solver."""

    live: int = 0
    peak: int = 0
    live_bytes: int = 0
    peak_bytes: int = 0
    total: int = 0

    def retain(self, tape: FieldTape):
        self.live += 1
        self.total += 1
        self.live_bytes += tape.nbytes
        self.peak = max(self.peak, self.live)
        self.peak_bytes = max(self.peak_bytes, self.live_bytes)

    def release(self, tape: FieldTape):
        self.live -= 1
        self.live_bytes -= tape.nbytes


@dataclass(frozen=True)
class SolverState:
    z: np.ndarray
    zh: np.ndarray
    step: int = 0


def _check_finite(arr, step):
    if not np.all(np.isfinite(arr)):
        bad = ~np.isfinite(arr).reshape(-1, arr.shape[-1]).all(axis=-1)
        where = f" (trajectory {int(np.argmax(bad))})" if arr.ndim > 1 else ""
        raise NumericalError(f"solver state became non-finite at step {step}{where}")


def _forward_core(vf, t_i, dt, dW, z, zh, F_i, record):
    inc_i = F_i.f * dt + noise_term(F_i.g, dW, z.ndim)
    zh_new = 2.0 * z - zh + inc_i
    F_new = vf.evaluate(t_i + dt, zh_new, record)
    inc_new = F_new.f * dt + noise_term(F_new.g, dW, z.ndim)
    z_new = z + 0.5 * (inc_i + inc_new)
    return z_new, zh_new, F_new


def _as_field(f, g):
    if g is None:
        return f
    return CallableField(f, g)


def reversible_heun_forward_step(f, g, state: SolverState, t_i: float, dt: float, dW) -> SolverState:
    """One forward step. ``f``/``g`` are callables, or ``f`` is a field and ``g`` is None."""
    vf = _as_field(f, g)
    dW = np.asarray(dW, dtype=np.float64)
    F_i = vf.evaluate(t_i, state.zh)
    z_new, zh_new, _ = _forward_core(vf, t_i, dt, dW, state.z, state.zh, F_i, False)
    _check_finite(z_new, state.step + 1)
    _check_finite(zh_new, state.step + 1)
    return SolverState(z_new, zh_new, state.step + 1)


def reversible_heun_reverse_step(f, g, state: SolverState, t_next: float, dt: float, dW) -> SolverState:
    """Exact algebraic inverse of :func:`reversible_heun_forward_step`."""
    vf = _as_field(f, g)
    dW = np.asarray(dW, dtype=np.float64)
    z, zh = state.z, state.zh
    F_next = vf.evaluate(t_next, zh)
    inc_next = F_next.f * dt + noise_term(F_next.g, dW, z.ndim)
    zh_prev = 2.0 * z - zh - inc_next
    F_prev = vf.evaluate(t_next - dt, zh_prev)
    inc_prev = F_prev.f * dt + noise_term(F_prev.g, dW, z.ndim)
    z_prev = z - 0.5 * (inc_prev + inc_next)
    _check_finite(z_prev, state.step - 1)
    _check_finite(zh_prev, state.step - 1)
    return SolverState(z_prev, zh_prev, state.step - 1)


@dataclass(eq=False)
class SolveResult:
    trajectory: np.ndarray          # (n+1, *batch, d_z)
    final: SolverState
    brownian: BrownianPath
    mode: SolveMode
    ledger: TapeLedger
    zh_trajectory: np.ndarray | None = None
    tapes: list | None = field(default=None, repr=False)

    @property
    def times(self) -> np.ndarray:
        return self.brownian.times


def solve(f, g, z0, brownian: BrownianPath, mode=SolveMode.REVERSIBLE,
          ledger: TapeLedger | None = None) -> SolveResult:
    """Integrate from ``z0`` over the grid of ``brownian``.

    Reversible mode keeps only the trajectory values and the final solver
    pair; StoreAll additionally keeps every step's network tape.
    """
    vf = _as_field(f, g)
    mode = SolveMode.parse(mode)
    ledger = ledger if ledger is not None else TapeLedger()
    store = mode is SolveMode.STORE_ALL
    z = np.array(z0, dtype=np.float64)
    zh = z.copy()
    n = brownian.n_steps
    times = brownian.times
    dt = brownian.dt
    traj = np.empty((n + 1,) + z.shape)
    traj[0] = z
    zh_traj = np.empty_like(traj) if store else None
    tapes = [] if store else None
    F = vf.evaluate(times[0], zh, store)
    if store:
        zh_traj[0] = zh
        tapes.append(F)
        ledger.retain(F)
    for i in range(n):
        z, zh, F = _forward_core(vf, times[i], dt, brownian.increments[i], z, zh, F, store)
        _check_finite(z, i + 1)
        _check_finite(zh, i + 1)
        traj[i + 1] = z
        if store:
            zh_traj[i + 1] = zh
            tapes.append(F)
            ledger.retain(F)
    return SolveResult(traj, SolverState(z, zh, n), brownian, mode, ledger, zh_traj, tapes)


def backprop_solve(vf, result: SolveResult, cot_traj) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of ``sum(cot_traj * trajectory)`` w.r.t. ``z0`` and the field parameters.

    ``vf`` must provide ``evaluate(..., record=True)`` and ``vjp``.
    """
    cot_traj = np.asarray(cot_traj, dtype=np.float64)
    if cot_traj.shape != result.trajectory.shape:
        raise ShapeError(f"cotangent shape {cot_traj.shape} != trajectory {result.trajectory.shape}")
    inc = result.brownian.increments
    n = result.brownian.n_steps
    if inc.shape[0] != n:
        raise ShapeError("Brownian increments missing for some steps")
    times = result.times
    dt = result.brownian.dt
    ledger = result.ledger
    reversible = result.mode is SolveMode.REVERSIBLE
    pgrad = np.zeros(vf.n_params)

    z = result.final.z
    zh = result.final.zh
    if reversible:
        F_next = vf.evaluate(times[n], zh, True)
        ledger.retain(F_next)
    else:
        F_next = result.tapes[n]
    zbar = cot_traj[n].copy()
    zhbar = np.zeros_like(zbar)
    fbar_next = np.zeros_like(F_next.f)
    gbar_next = np.zeros_like(F_next.g)

    for i in range(n - 1, -1, -1):
        dW = inc[i]
        if reversible:
            inc_next = F_next.f * dt + noise_term(F_next.g, dW, z.ndim)
            zh_i = 2.0 * z - zh - inc_next
            F_i = vf.evaluate(times[i], zh_i, True)
            ledger.retain(F_i)
            inc_i = F_i.f * dt + noise_term(F_i.g, dW, z.ndim)
            z_i = z - 0.5 * (inc_i + inc_next)
            _check_finite(z_i, i)
        else:
            F_i = result.tapes[i]
            z_i, zh_i = result.trajectory[i], result.zh_trajectory[i]

        # z_{i+1} = z_i + (inc_i + inc_{i+1}) / 2
        half = 0.5 * zbar
        fbar_next += half * dt
        gbar_next += noise_term_vjp(half, F_next.g, dW)
        fbar_i = half * dt
        gbar_i = noise_term_vjp(half, F_i.g, dW)
        zbar_i = zbar.copy()

        # F_{i+1} has received all its cotangent contributions
        zb, pg = vf.vjp(F_next, fbar_next, gbar_next)
        pgrad += pg
        zhbar_next = zhbar + zb
        if reversible:
            ledger.release(F_next)

        # zh_{i+1} = 2 z_i - zh_i + inc_i
        zbar_i += 2.0 * zhbar_next
        zhbar = -zhbar_next
        fbar_i += zhbar_next * dt
        gbar_i += noise_term_vjp(zhbar_next, F_i.g, dW)
        zbar_i += cot_traj[i]

        z, zh, F_next = z_i, zh_i, F_i
        fbar_next, gbar_next = fbar_i, gbar_i
        zbar = zbar_i

    zb, pg = vf.vjp(F_next, fbar_next, gbar_next)
    pgrad += pg
    zhbar = zhbar + zb
    if reversible:
        ledger.release(F_next)
    z0bar = zbar + zhbar
    if not (np.all(np.isfinite(z0bar)) and np.all(np.isfinite(pgrad))):
        raise NumericalError("non-finite gradient in backward sweep")
    return z0bar, pgrad
