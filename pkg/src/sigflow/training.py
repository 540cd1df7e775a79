"""SigCWGAN training of a conditional neural SDE, plus checkpoint persistence.

The conditional regression is fitted once on the training split and then
held fixed; its predictions are the targets that Monte Carlo estimates of the
generator's expected output signature are pulled towards.
"""
from __future__ import annotations

import hashlib
import json
import logging
import struct
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .cnsde import (
    CnsdeParams,
    GeneratorConfig,
    draw_noise,
    encode_condition,
    init_cnsde,
    output_times,
    simulate,
    simulate_vjp,
)
from .errors import CheckpointError, ConfigError, DataError, NumericalError
from .neural import FLAT_LAYOUT_VERSION, AdamState, adam_step
from .sde import SolveMode, TapeLedger
from .sigmetric import CondExpSigModel, FeatureScaler, fit_cond_expsig
from .signature import AugmentOptions, FeatureSpec, Stream

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"SIGW"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    mc_samples: int = 32
    val_mc_samples: int = 128
    lr: float = 1e-3
    max_seconds: float = 7200.0
    max_steps: int | None = None
    patience: int = 1000
    val_period: int = 50
    val_max_pairs: int | None = None
    in_depth: int = 5
    out_depth: int = 4
    ridge: float = 1e-4
    scale_targets: bool = True
    seed: int = 0
    init_seed: int = 0
    val_seed: int = 12345
    mode: str = "reversible"

    def __post_init__(self):
        for name in ("batch_size", "mc_samples", "val_mc_samples", "patience", "val_period",
                     "in_depth", "out_depth"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if not self.lr > 0 or not self.max_seconds > 0:
            raise ConfigError("lr and max_seconds must be positive")
        if self.ridge < 0:
            raise ConfigError(f"ridge must be >= 0, got {self.ridge}")
        if self.patience < self.val_period:
            raise ConfigError(f"patience ({self.patience}) must be >= val_period ({self.val_period})")
        SolveMode.parse(self.mode)


def _key(seed) -> tuple:
    if isinstance(seed, (tuple, list)):
        return tuple(int(s) for s in seed)
    return (int(seed),)


def _generated_features(model: CondExpSigModel, xs: Sequence[Stream], Y: np.ndarray,
                        config: GeneratorConfig, keep_tape: bool):
    """Output-signature features of generated values Y (B*m, L_y, d_y)."""
    spec = model.out_spec
    grids = [output_times(x, config) for x in xs]
    ref = spec.prepare_times(grids[0])
    if not all(np.array_equal(spec.prepare_times(g), ref) for g in grids[1:]):
        raise DataError("generated output time grids differ across the batch; enable rebase_time")
    return spec.transform_arrays(grids[0], Y, keep_tape=keep_tape)


def sigcwgan_loss(batch: Sequence[Stream], model: CondExpSigModel, params: CnsdeParams,
                  config: GeneratorConfig, m: int, seed, indices: Sequence[int] | None = None,
                  mode=SolveMode.REVERSIBLE, ledger: TapeLedger | None = None,
                  with_grad: bool = True):
    """Mean over the batch of ||predicted - Monte Carlo generated expected signature||_2.

    Trajectory ``j`` for the item with dataset index ``i`` draws its noise from
    key ``(*seed, i, j)``; items are reduced in ascending index order, so the
    loss does not depend on how the batch is ordered.  Coordinates are divided
    by the model's target standard deviations when it carries a target scaler.  Returns
    ``(loss, flat_gradient)``; the gradient is None without ``with_grad``.
    """
    if m < 1:
        raise ValueError(f"need at least one Monte Carlo sample, got m={m}")
    B = len(batch)
    if B == 0:
        raise DataError("empty batch")
    indices = list(range(B)) if indices is None else [int(i) for i in indices]
    order = np.argsort(indices, kind="stable")
    xs = [batch[o] for o in order]
    idx = [indices[o] for o in order]
    base = _key(seed)
    keys = [base + (i, j) for i in idx for j in range(m)]

    targets = model.predict_vector(xs)
    h = encode_condition(xs, model, config)
    rows = np.repeat(h, m, axis=0)
    V, inc = draw_noise(keys, config)
    sim = simulate(rows, V, inc, params, config, mode, ledger, keep_tape=with_grad)
    Y, tape = sim if with_grad else (sim, None)
    feats = _generated_features(model, xs, Y, config, with_grad)
    feats, sig_tape = feats if with_grad else (feats, None)

    est = feats.reshape(B, m, -1).mean(axis=1)
    weights = model.loss_weights
    diff = (est - targets) * weights
    norms = np.sqrt(np.einsum("bi,bi->b", diff, diff))
    loss = float(sum(norms) / B)
    if not np.isfinite(loss):
        raise NumericalError("non-finite Sig-W1 loss")
    if not with_grad:
        return loss, None
    safe = np.where(norms > 0, norms, 1.0)
    cot_est = np.where(norms[:, None] > 0, diff * weights / safe[:, None], 0.0) / B
    cot_feats = np.repeat(cot_est / m, m, axis=0)
    cot_Y = model.out_spec.transform_arrays_vjp(sig_tape, cot_feats, config.d_y)
    grad = simulate_vjp(tape, cot_Y, params, config)
    return loss, grad


def evaluation_loss(pairs_x: Sequence[Stream], model, params, config, m, seed, chunk_items=64,
                    indices=None):
    """Forward-only loss over many conditioning streams, evaluated in chunks."""
    n = len(pairs_x)
    indices = list(range(n)) if indices is None else list(indices)
    total = 0.0
    for s in range(0, n, chunk_items):
        part = pairs_x[s : s + chunk_items]
        val, _ = sigcwgan_loss(part, model, params, config, m, seed, indices[s : s + chunk_items],
                               with_grad=False)
        total += val * len(part)
    return total / n


# -- checkpoints ------------------------------------------------------------


@dataclass(eq=False)
class Checkpoint:
    gen_config: GeneratorConfig
    params: CnsdeParams
    model: CondExpSigModel
    train_config: TrainConfig | None = None
    state: dict = field(default_factory=dict)
    seeds: dict = field(default_factory=dict)
    data_stats: dict = field(default_factory=dict)
    resume: dict | None = None
    version: int = CHECKPOINT_VERSION


def _spec_to_dict(spec: FeatureSpec) -> dict:
    return {"depth": spec.depth, "augment": asdict(spec.augment), "rebase_time": spec.rebase_time}


def _spec_from_dict(d: dict) -> FeatureSpec:
    return FeatureSpec(d["depth"], AugmentOptions(**d["augment"]), d["rebase_time"])


def _checksum(data: bytes) -> bytes:
    return hashlib.blake2b(data, digest_size=8).digest()


def save_checkpoint(c: Checkpoint, path) -> None:
    arrays = {
        "params": c.params.flatten(),
        "model.W": c.model.W,
        "model.intercept": c.model.intercept,
        "model.scaler_mean": c.model.in_scaler.mean,
        "model.scaler_std": c.model.in_scaler.std,
    }
    if c.model.out_scaler is not None:
        arrays["model.out_mean"] = c.model.out_scaler.mean
        arrays["model.out_std"] = c.model.out_scaler.std
    if c.resume is not None:
        arrays["resume.params"] = c.resume["params"]
        arrays["resume.adam_m"] = c.resume["adam"].m
        arrays["resume.adam_v"] = c.resume["adam"].v
    table, offset = {}, 0
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype=np.float64)
        table[name] = [offset, list(arr.shape)]
        offset += arr.size
    meta = {
        "layout_version": FLAT_LAYOUT_VERSION,
        "gen_config": c.gen_config.to_dict(),
        "train_config": asdict(c.train_config) if c.train_config else None,
        "model": {
            "in_spec": _spec_to_dict(c.model.in_spec),
            "out_spec": _spec_to_dict(c.model.out_spec),
            "in_channels": c.model.in_channels,
            "out_channels": c.model.out_channels,
            "ridge": c.model.ridge,
        },
        "state": c.state,
        "seeds": c.seeds,
        "data_stats": c.data_stats,
        "resume": None if c.resume is None else {
            k: v for k, v in c.resume.items() if k not in ("params", "adam")
        } | {"adam": {"t": c.resume["adam"].t, "lr": c.resume["adam"].lr,
                      "beta1": c.resume["adam"].beta1, "beta2": c.resume["adam"].beta2,
                      "eps": c.resume["adam"].eps}},
        "arrays": table,
    }
    text = json.dumps(meta, sort_keys=True).encode("utf-8")
    payload = np.concatenate([np.asarray(a, dtype="<f8").reshape(-1) for a in arrays.values()])
    body = (CHECKPOINT_MAGIC + struct.pack("<I", c.version) + struct.pack("<Q", len(text)) + text
            + struct.pack("<Q", payload.size) + payload.astype("<f8").tobytes())
    Path(path).write_bytes(body + _checksum(body))


def load_checkpoint(path) -> Checkpoint:
    data = Path(path).read_bytes()
    if len(data) < 4 + 4 + 8 + 8 + 8 or data[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a sigflow checkpoint (bad magic or truncated)")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version} is not supported "
                              f"(this build reads version {CHECKPOINT_VERSION})")
    body, tail = data[:-8], data[-8:]
    (meta_len,) = struct.unpack_from("<Q", data, 8)
    pos = 16 + meta_len
    if pos + 8 > len(body):
        raise CheckpointError(f"{path}: truncated metadata block")
    (n_floats,) = struct.unpack_from("<Q", data, pos)
    pos += 8
    if pos + 8 * n_floats != len(body):
        raise CheckpointError(f"{path}: truncated or oversized payload")
    if _checksum(body) != tail:
        raise CheckpointError(f"{path}: checksum mismatch (file is corrupted)")
    meta = json.loads(data[16 : 16 + meta_len].decode("utf-8"))
    payload = np.frombuffer(data, dtype="<f8", count=n_floats, offset=pos).astype(np.float64)

    def arr(name):
        off, shape = meta["arrays"][name]
        size = int(np.prod(shape)) if shape else 1
        return payload[off : off + size].reshape(shape).copy()

    gen_config = GeneratorConfig.from_dict(meta["gen_config"])
    params = init_cnsde(gen_config, 0).unflatten(arr("params"))
    mm = meta["model"]
    model = CondExpSigModel(
        W=arr("model.W"), intercept=arr("model.intercept"),
        in_scaler=FeatureScaler(arr("model.scaler_mean"), arr("model.scaler_std")),
        in_spec=_spec_from_dict(mm["in_spec"]), out_spec=_spec_from_dict(mm["out_spec"]),
        in_channels=mm["in_channels"], out_channels=mm["out_channels"], ridge=mm["ridge"],
        out_scaler=(FeatureScaler(arr("model.out_mean"), arr("model.out_std"))
                    if "model.out_mean" in meta["arrays"] else None),
    )
    resume = None
    if meta["resume"] is not None:
        r = dict(meta["resume"])
        a = r.pop("adam")
        resume = r | {
            "params": arr("resume.params"),
            "adam": AdamState(arr("resume.adam_m"), arr("resume.adam_v"), a["t"], a["lr"],
                              a["beta1"], a["beta2"], a["eps"]),
        }
    tc = TrainConfig(**meta["train_config"]) if meta["train_config"] else None
    return Checkpoint(gen_config, params, model, tc, meta["state"], meta["seeds"],
                      meta["data_stats"], resume, version)


# -- training loop ----------------------------------------------------------


def batch_indices(step: int, n: int, batch_size: int, seed: int) -> list[int]:
    """Indices of minibatch ``step``: seeded shuffles per epoch, without replacement."""
    bs = min(batch_size, n)
    per_epoch = n // bs
    epoch, pos = divmod(step, per_epoch)
    perm = np.random.default_rng([seed, 7, epoch]).permutation(n)
    return sorted(int(i) for i in perm[pos * bs : (pos + 1) * bs])


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: list
    stop_reason: str


def train(train_pairs: Sequence[tuple[Stream, Stream]], val_pairs: Sequence[tuple[Stream, Stream]],
          tc: TrainConfig, gc: GeneratorConfig, resume: Checkpoint | None = None,
          init: CnsdeParams | None = None, model: CondExpSigModel | None = None,
          on_step: Callable | None = None, data_stats: dict | None = None) -> TrainResult:
    """Fit the regression and run Adam on the Monte Carlo Sig-W1 loss.

    Validation runs every ``val_period`` steps with a fixed seed; the returned
    checkpoint holds the best-validation parameters and, under ``resume``,
    the live optimizer state for continuing the run.
    """
    if not train_pairs or not val_pairs:
        raise DataError("train and validation splits must be non-empty")
    train_x = [p[0] for p in train_pairs]
    if resume is not None:
        model = resume.model
        gc = resume.gen_config
    elif model is None:
        model = fit_cond_expsig(train_pairs, tc.in_depth, tc.out_depth, tc.ridge,
                                in_spec=FeatureSpec(tc.in_depth, gc.enc_augment),
                                scale_targets=tc.scale_targets)
    if model.in_spec != gc.enc_spec:
        raise ConfigError("generator encoder must match the regression input features "
                          f"(enc_depth={gc.enc_depth}, in_depth={tc.in_depth})")
    val_x = [p[0] for p in val_pairs][: tc.val_max_pairs]
    template = init if init is not None else init_cnsde(gc, tc.init_seed)
    mode = SolveMode.parse(tc.mode)

    if resume is not None and resume.resume is not None:
        r = resume.resume
        theta = r["params"].copy()
        adam = r["adam"]
        step = int(r["step"])
        best_val = float(resume.state["best_val"])
        best_step = int(resume.state["best_step"])
        best_theta = resume.params.flatten()
        failures = int(r.get("failures", 0))
    else:
        theta = template.flatten()
        adam = AdamState.create(theta.size, lr=tc.lr)
        step, best_val, best_step, best_theta, failures = 0, np.inf, -1, theta.copy(), 0

    history = []
    start = time.monotonic()
    last_val_step = None
    stop_reason = "max_steps"

    def validate():
        nonlocal best_val, best_step, best_theta, last_val_step
        p = template.unflatten(theta)
        v = evaluation_loss(val_x, model, p, gc, tc.val_mc_samples, (tc.val_seed,))
        last_val_step = step
        improved = v < best_val
        if improved:
            best_val, best_step, best_theta = v, step, theta.copy()
        return v

    while True:
        val = None
        if step % tc.val_period == 0:
            val = validate()
            if step - best_step >= tc.patience:
                stop_reason = "patience"
                history.append({"step": step, "train_loss": None, "val_loss": val})
                break
        if tc.max_steps is not None and step >= tc.max_steps:
            stop_reason = "max_steps"
            if val is not None:
                history.append({"step": step, "train_loss": None, "val_loss": val})
            break
        if time.monotonic() - start > tc.max_seconds:
            stop_reason = "wall_clock"
            if val is not None:
                history.append({"step": step, "train_loss": None, "val_loss": val})
            break

        idx = batch_indices(step, len(train_x), tc.batch_size, tc.seed)
        params = template.unflatten(theta)
        try:
            loss, grad = sigcwgan_loss([train_x[i] for i in idx], model, params, gc,
                                       tc.mc_samples, (tc.seed, step), idx, mode)
            theta, adam = adam_step(adam, theta, grad)
            failures = 0
        except NumericalError as exc:
            failures += 1
            loss = float("nan")
            log.warning("step %d: %s", step, exc)
            if failures >= 3:
                raise NumericalError(f"training diverged: 3 consecutive non-finite steps ending at {step}") from exc
        rec = {"step": step, "train_loss": loss, "val_loss": val}
        history.append(rec)
        if on_step is not None:
            on_step(rec)
        step += 1

    if last_val_step != step:
        val = validate()
        history.append({"step": step, "train_loss": None, "val_loss": val})

    ckpt = Checkpoint(
        gen_config=gc,
        params=template.unflatten(best_theta),
        model=model,
        train_config=tc,
        state={"step": step, "best_val": float(best_val), "best_step": best_step,
               "stop_reason": stop_reason},
        seeds={"seed": tc.seed, "init_seed": tc.init_seed, "val_seed": tc.val_seed},
        data_stats=dict(data_stats or {}),
        resume={"params": theta.copy(), "adam": adam, "step": step, "failures": failures},
    )
    return TrainResult(ckpt, history, stop_reason)
