"""Conditional neural SDE generator.

A conditioning stream ``x`` is encoded as its scaled truncated signature
``h``.  The initial hidden state is ``[xi1(h), xi2(V)]`` with ``V`` standard
normal noise, the hidden state follows a neural Stratonovich SDE solved with
the reversible Heun scheme on a uniform grid over [0, 1], and outputs are the
affine readout ``alpha Z + beta`` taken at ``out_length`` evenly spread solver
steps.

All sampling is keyed: trajectory ``j`` of a call draws ``V`` and its Brownian
increments from ``default_rng([*key, j])``, so results never depend on batch
composition or evaluation order.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import ConfigError, NumericalError, ShapeError
from .neural import MlpParams, init_params, mlp_backward, mlp_forward
from .sde import BrownianPath, NeuralField, SolveMode, TapeLedger, backprop_solve, solve
from .signature import ALL_AUGMENTATIONS, AugmentOptions, FeatureSpec, Stream


@dataclass(frozen=True)
class GeneratorConfig:
    d_x: int = 1
    d_y: int = 1
    d_z: int = 48
    d_w: int = 48
    d_v: int = 16
    k: int = 16
    xi2_hidden: int = 32
    drift_hidden: int = 84
    diffusion_hidden: int = 84
    diagonal: bool = True
    final_tanh: bool = True
    time_input: bool = True
    out_length: int = 40
    n_steps: int = 64
    enc_depth: int = 5
    enc_augment: AugmentOptions = ALL_AUGMENTATIONS

    def __post_init__(self):
        for name in ("d_x", "d_y", "d_z", "d_w", "d_v", "xi2_hidden", "drift_hidden",
                     "diffusion_hidden", "out_length", "n_steps", "enc_depth"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if not 0 <= self.k <= self.d_z:
            raise ConfigError(f"k must lie in [0, d_z={self.d_z}], got {self.k}")
        if self.diagonal and self.d_w != self.d_z:
            raise ConfigError(f"diagonal diffusion needs d_w == d_z, got d_w={self.d_w}, d_z={self.d_z}")
        if self.n_steps < self.out_length - 1:
            raise ConfigError(
                f"n_steps={self.n_steps} cannot host {self.out_length} distinct output points"
            )

    @property
    def enc_spec(self) -> FeatureSpec:
        return FeatureSpec(self.enc_depth, self.enc_augment)

    @property
    def d_h(self) -> int:
        return self.enc_spec.dim(self.d_x)

    @property
    def dt(self) -> float:
        return 1.0 / self.n_steps

    @property
    def output_indices(self) -> np.ndarray:
        if self.out_length == 1:
            return np.array([self.n_steps])
        return np.rint(np.linspace(0, self.n_steps, self.out_length)).astype(int)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["enc_augment"] = asdict(self.enc_augment)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        d = dict(d)
        if isinstance(d.get("enc_augment"), dict):
            d["enc_augment"] = AugmentOptions(**d["enc_augment"])
        return cls(**d)


def preset(name: str, **overrides) -> GeneratorConfig:
    """Named reference architectures (ar5, seattle, forex, ibex35, bench).

    The vector fields take the hidden state alone as input
    (``time_input=False``); keyword overrides are applied last.
    """
    presets = {
        "ar5": dict(d_z=48, d_w=48, d_v=16, k=16, xi2_hidden=32, drift_hidden=84,
                    diffusion_hidden=84, out_length=40),
        "seattle": dict(d_z=64, d_w=64, d_v=16, k=32, xi2_hidden=32, drift_hidden=84,
                        diffusion_hidden=84, out_length=30),
        "forex": dict(d_z=64, d_w=64, d_v=16, k=32, xi2_hidden=32, drift_hidden=84,
                      diffusion_hidden=84, out_length=80),
        "ibex35": dict(d_z=120, d_w=120, d_v=16, k=56, xi2_hidden=48, drift_hidden=96,
                       diffusion_hidden=96, out_length=15),
        "bench": dict(d_z=92, d_w=10, d_v=16, k=8, xi2_hidden=32, drift_hidden=32,
                      diffusion_hidden=32, diagonal=False, final_tanh=False, out_length=40),
    }
    if name not in presets:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(presets)}")
    kw = dict(time_input=False)
    kw.update(presets[name])
    kw["n_steps"] = max(64, kw["out_length"] - 1)
    kw.update(overrides)
    return GeneratorConfig(**kw)


@dataclass(frozen=True, eq=False)
class CnsdeParams:
    xi1: MlpParams
    xi2: MlpParams
    drift: MlpParams
    diffusion: MlpParams
    alpha: np.ndarray
    beta: np.ndarray

    @property
    def n_params(self) -> int:
        return (self.xi1.n_params + self.xi2.n_params + self.drift.n_params
                + self.diffusion.n_params + self.alpha.size + self.beta.size)

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.xi1.flatten(), self.xi2.flatten(), self.drift.flatten(),
                               self.diffusion.flatten(), self.alpha.reshape(-1), self.beta])

    def unflatten(self, flat) -> "CnsdeParams":
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.n_params:
            raise ShapeError(f"expected {self.n_params} parameters, got {flat.size}")
        parts, pos = [], 0
        for net in (self.xi1, self.xi2, self.drift, self.diffusion):
            parts.append(net.unflatten(flat[pos : pos + net.n_params]))
            pos += net.n_params
        alpha = flat[pos : pos + self.alpha.size].reshape(self.alpha.shape).copy()
        pos += self.alpha.size
        beta = flat[pos:].copy()
        return CnsdeParams(*parts, alpha, beta)

    def field(self, config: GeneratorConfig) -> NeuralField:
        return NeuralField(self.drift, self.diffusion, config.d_z, config.d_w,
                           config.diagonal, config.time_input)


def init_cnsde(config: GeneratorConfig, seed) -> CnsdeParams:
    c = config
    n_in = c.d_z + int(c.time_input)
    g_out = c.d_z if c.diagonal else c.d_z * c.d_w
    xi1 = init_params((c.d_h, c.d_z - c.k), [seed, 0])
    xi2 = init_params((c.d_v, c.xi2_hidden, c.k), [seed, 1])
    drift = init_params((n_in, c.drift_hidden, c.d_z), [seed, 2], final_tanh=c.final_tanh)
    diffusion = init_params((n_in, c.diffusion_hidden, g_out), [seed, 3], final_tanh=c.final_tanh)
    bound = 1.0 / np.sqrt(c.d_z)
    alpha = np.random.default_rng([seed, 4]).uniform(-bound, bound, size=(c.d_y, c.d_z))
    return CnsdeParams(xi1, xi2, drift, diffusion, alpha, np.zeros(c.d_y))


def encode_condition(x: Stream | Sequence[Stream], model, config: GeneratorConfig) -> np.ndarray:
    """Scaled signature features of ``x`` using the regression's fitted scaler."""
    if model.in_spec != config.enc_spec:
        raise ConfigError("encoder signature settings differ from the regression input features")
    return model.features(x)


def initial_state(h: np.ndarray, params: CnsdeParams, V: np.ndarray):
    """``z0 = [xi1(h), xi2(V)]`` for row-batched ``h`` and ``V``; returns (z0, tapes)."""
    a, t1 = mlp_forward(params.xi1, h)
    b, t2 = mlp_forward(params.xi2, V)
    return np.concatenate([a, b], axis=-1), (t1, t2)


def draw_noise(keys: Sequence[tuple], config: GeneratorConfig):
    """Initial noise (R, d_v) and Brownian increments (n, R, d_w) for each key."""
    n = config.n_steps
    sq = np.sqrt(config.dt)
    V = np.empty((len(keys), config.d_v))
    inc = np.empty((n, len(keys), config.d_w))
    for r, key in enumerate(keys):
        rng = np.random.default_rng(list(key))
        V[r] = rng.standard_normal(config.d_v)
        inc[:, r, :] = rng.standard_normal((n, config.d_w)) * sq
    return V, inc


@dataclass(eq=False)
class SimulationTape:
    h: np.ndarray
    init_tapes: tuple
    result: object
    field: NeuralField


def simulate(h_rows: np.ndarray, V: np.ndarray, increments: np.ndarray, params: CnsdeParams,
             config: GeneratorConfig, mode=SolveMode.REVERSIBLE, ledger: TapeLedger | None = None,
             keep_tape: bool = False):
    """Outputs (R, out_length, d_y) for R trajectories with explicit noise."""
    z0, init_tapes = initial_state(h_rows, params, V)
    times = np.arange(config.n_steps + 1) * config.dt
    bm = BrownianPath(times, increments)
    vf = params.field(config)
    res = solve(vf, None, z0, bm, mode, ledger)
    Z = res.trajectory[config.output_indices]            # (L_y, R, d_z)
    Y = np.einsum("lrz,yz->rly", Z, params.alpha) + params.beta
    if not np.all(np.isfinite(Y)):
        raise NumericalError("generated outputs are non-finite")
    if keep_tape:
        return Y, SimulationTape(h_rows, init_tapes, res, vf)
    return Y


def simulate_vjp(tape: SimulationTape, cot_Y: np.ndarray, params: CnsdeParams,
                 config: GeneratorConfig) -> np.ndarray:
    """Flat parameter gradient of ``sum(cot_Y * Y)``."""
    res = tape.result
    idx = config.output_indices
    Z = res.trajectory[idx]
    g_alpha = np.einsum("rly,lrz->yz", cot_Y, Z)
    g_beta = cot_Y.sum(axis=(0, 1))
    cot_traj = np.zeros_like(res.trajectory)
    np.add.at(cot_traj, idx, np.einsum("rly,yz->lrz", cot_Y, params.alpha))
    z0bar, g_field = backprop_solve(tape.field, res, cot_traj)
    nd = config.d_z - config.k
    _, g_xi1 = mlp_backward(params.xi1, tape.init_tapes[0], z0bar[:, :nd])
    _, g_xi2 = mlp_backward(params.xi2, tape.init_tapes[1], z0bar[:, nd:])
    return np.concatenate([g_xi1, g_xi2, g_field, g_alpha.reshape(-1), g_beta])


def output_times(x: Stream, config: GeneratorConfig) -> np.ndarray:
    gap = x.times[-1] - x.times[-2] if x.length > 1 else 1.0
    return x.times[-1] + gap * np.arange(1, config.out_length + 1)


@dataclass
class CnsdeGenerator:
    """Samples output streams for batches of conditioning streams."""

    params: CnsdeParams
    config: GeneratorConfig
    model: object
    chunk: int = 4096
    mode: SolveMode = field(default=SolveMode.REVERSIBLE)

    def sample_values(self, xs: Sequence[Stream], n_samples: int, seed) -> np.ndarray:
        """Array (len(xs), n_samples, out_length, d_y); keyed by (seed, i, j)."""
        keys = [(seed, i, j) for i in range(len(xs)) for j in range(n_samples)]
        return self._run(xs, n_samples, keys).reshape(
            len(xs), n_samples, self.config.out_length, self.config.d_y)

    def _run(self, xs, n_samples, keys):
        h = encode_condition(list(xs), self.model, self.config)
        rows = np.repeat(h, n_samples, axis=0)
        out = np.empty((len(keys), self.config.out_length, self.config.d_y))
        for s in range(0, len(keys), self.chunk):
            sl = slice(s, s + self.chunk)
            V, inc = draw_noise(keys[sl], self.config)
            out[sl] = simulate(rows[sl], V, inc, self.params, self.config, self.mode)
        return out


def generate(x: Stream, params: CnsdeParams, config: GeneratorConfig, n_samples: int, seed,
             model) -> list[Stream]:
    """``n_samples`` output streams conditioned on ``x``; sample j uses key (seed, j)."""
    if x.channels != config.d_x:
        raise ShapeError(f"input has {x.channels} channels, generator expects {config.d_x}")
    gen = CnsdeGenerator(params, config, model)
    keys = [(seed, j) for j in range(n_samples)]
    try:
        Y = gen._run([x], n_samples, keys)
    except NumericalError as exc:
        raise NumericalError(f"generation failed: {exc}") from exc
    t = output_times(x, config)
    return [Stream(t, Y[j]) for j in range(n_samples)]


def with_zero_fields(params: CnsdeParams) -> CnsdeParams:
    """Copy whose drift and diffusion networks output exactly zero (no final bias, zero last layer)."""
    def zero_last(net: MlpParams) -> MlpParams:
        ws = list(net.weights)
        bs = list(net.biases)
        ws[-1] = np.zeros_like(ws[-1])
        bs[-1] = np.zeros_like(bs[-1])
        return replace(net, weights=tuple(ws), biases=tuple(bs))
    return replace(params, drift=zero_last(params.drift), diffusion=zero_last(params.diffusion))
