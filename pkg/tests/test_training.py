from dataclasses import replace

import numpy as np
import pytest

import sigflow.training as training
from oracles import central_fd
from sigflow.cnsde import GeneratorConfig, draw_noise, encode_condition, init_cnsde, simulate
from sigflow.data import WindowSpec, ar_dataset
from sigflow.errors import CheckpointError, DataError, NumericalError
from sigflow.sde import SolveMode
from sigflow.sigmetric import fit_cond_expsig
from sigflow.training import (

    TrainConfig,
    batch_indices,
    evaluation_loss,
    load_checkpoint,
    save_checkpoint,
    sigcwgan_loss,
    train,
)

def tiny_gc(**kw):
    base = dict(d_z=4, d_w=4, d_v=2, k=1, xi2_hidden=4, drift_hidden=5, diffusion_hidden=5,
                out_length=4, n_steps=8, enc_depth=2)
    base.update(kw)
    return GeneratorConfig(**base)

def tiny_tc(**kw):
    base = dict(batch_size=4, mc_samples=2, val_mc_samples=4, lr=1e-2, max_steps=6, patience=50,
                val_period=2, in_depth=2, out_depth=2, ridge=1e-2)
    base.update(kw)
    return TrainConfig(**base)

@pytest.fixture(scope="module")
def ds():
    return ar_dataset(60, WindowSpec(6, 4), seed=1)

@pytest.fixture(scope="module")
def model(ds):
    return fit_cond_expsig(ds.train, 2, 2, 1e-2, scale_targets=True)

def test_loss_gradient_matches_finite_differences(ds, model):
    gc = tiny_gc()
    p = init_cnsde(gc, 0)
    xs = [x for x, _ in ds.train[:2]]
    loss, grad = sigcwgan_loss(xs, model, p, gc, 2, (3,), [0, 1])
    assert np.isfinite(loss) and loss > 0
    num = central_fd(lambda th: sigcwgan_loss(xs, model, p.unflatten(th), gc, 2, (3,), [0, 1],
                                              with_grad=False)[0], p.flatten(), 1e-6)
    assert np.linalg.norm(grad - num) <= 1e-4 * np.linalg.norm(num)

def test_loss_modes_agree(ds, model):
    gc = tiny_gc()
    p = init_cnsde(gc, 1)
    xs = [x for x, _ in ds.train[:3]]
    a = sigcwgan_loss(xs, model, p, gc, 2, (0,), mode=SolveMode.REVERSIBLE)
    b = sigcwgan_loss(xs, model, p, gc, 2, (0,), mode=SolveMode.STORE_ALL)
    assert a[0] == b[0]
    assert np.linalg.norm(a[1] - b[1]) <= 1e-10 * np.linalg.norm(b[1])

def test_deterministic_generator_loss_is_seed_free(ds, model):
    gc = tiny_gc(k=0)
    p = init_cnsde(gc, 2)
    W = list(p.diffusion.weights)
    b = list(p.diffusion.biases)
    W[-1], b[-1] = np.zeros_like(W[-1]), np.zeros_like(b[-1])
    p = replace(p, diffusion=replace(p.diffusion, weights=tuple(W), biases=tuple(b)))
    xs = [x for x, _ in ds.train[:4]]
    losses = [sigcwgan_loss(xs, model, p, gc, 3, (s,), with_grad=False)[0] for s in range(10)]
    assert np.std(losses) < 1e-8

def test_loss_invariant_to_batch_order(ds, model):
    gc = tiny_gc()
    p = init_cnsde(gc, 3)
    idx = [5, 1, 9, 3]
    xs = [ds.train[i][0] for i in idx]
    a, ga = sigcwgan_loss(xs, model, p, gc, 2, (0,), idx)
    perm = [2, 0, 3, 1]
    b, gb = sigcwgan_loss([xs[i] for i in perm], model, p, gc, 2, (0,), [idx[i] for i in perm])
    assert abs(a - b) <= 1e-12
    np.testing.assert_allclose(ga, gb, atol=1e-12)

def test_loss_argument_errors(ds, model):
    gc = tiny_gc()
    p = init_cnsde(gc, 0)
    with pytest.raises(ValueError):
        sigcwgan_loss([ds.train[0][0]], model, p, gc, 0, (0,))
    with pytest.raises(DataError):
        sigcwgan_loss([], model, p, gc, 2, (0,))

def test_unit_weights_without_target_scaler(ds):
    gc = tiny_gc()
    p = init_cnsde(gc, 0)
    plain = fit_cond_expsig(ds.train, 2, 2, 1e-2)
    xs = [x for x, _ in ds.train[:3]]
    loss = sigcwgan_loss(xs, plain, p, gc, 2, (0,), with_grad=False)[0]
    targets = plain.predict_vector(xs)
    keys = [(0, i, j) for i in range(3) for j in range(2)]
    V, inc = draw_noise(keys, gc)
    Y = simulate(np.repeat(encode_condition(xs, plain, gc), 2, axis=0), V, inc, p, gc)
    feats = plain.out_spec.transform_arrays(training.output_times(xs[0], gc), Y)
    est = feats.reshape(3, 2, -1).mean(axis=1)
    assert loss == pytest.approx(np.mean(np.linalg.norm(est - targets, axis=1)), rel=1e-12)

def test_batch_indices_cover_epoch():
    seen = sorted(i for s in range(5) for i in batch_indices(s, 20, 4, 0))
    assert seen == list(range(20))
    assert batch_indices(7, 20, 4, 0) == batch_indices(7, 20, 4, 0)
    assert batch_indices(0, 3, 8, 0) == [0, 1, 2]

def test_train_config_validation():
    with pytest.raises(Exception):
        TrainConfig(patience=10, val_period=50)
    with pytest.raises(Exception):
        TrainConfig(lr=0.0)

def test_train_best_so_far_and_reproducible_validation(ds):
    tc = tiny_tc(max_steps=8)
    gc = tiny_gc()
    res = train(ds.train, ds.val, tc, gc)
    vals = [h["val_loss"] for h in res.history if h["val_loss"] is not None]
    assert all(np.isfinite(h["train_loss"]) for h in res.history if h["train_loss"] is not None)
    ck = res.checkpoint
    assert ck.state["best_val"] == min(vals)
    val_x = [x for x, _ in ds.val]
    again = evaluation_loss(val_x, ck.model, ck.params, gc, tc.val_mc_samples, (tc.val_seed,))
    assert again == ck.state["best_val"]
    res2 = train(ds.train, ds.val, tc, gc)
    np.testing.assert_array_equal(res2.checkpoint.params.flatten(), ck.params.flatten())

def test_early_stop_with_frozen_parameters(ds):
    # an update far below one ulp leaves the parameters bit-identical
    tc = tiny_tc(lr=1e-300, val_period=1, patience=1, max_steps=None)
    res = train(ds.train, ds.val, tc, tiny_gc())
    assert res.stop_reason == "patience"
    vals = [h for h in res.history if h["val_loss"] is not None]
    assert len(vals) == 2 and vals[0]["val_loss"] == vals[1]["val_loss"]

def test_empty_splits_rejected(ds):
    with pytest.raises(DataError):
        train([], ds.val, tiny_tc(), tiny_gc())
    with pytest.raises(DataError):
        train(ds.train, [], tiny_tc(), tiny_gc())

def test_divergence_aborts_after_three_failures(ds, monkeypatch):
    def boom(*a, **k):
        if k.get("with_grad", True):
            raise NumericalError("non-finite Sig-W1 loss")
        return 1.0, None
    monkeypatch.setattr(training, "sigcwgan_loss", boom)
    with pytest.raises(NumericalError, match="3 consecutive"):
        train(ds.train, ds.val, tiny_tc(max_steps=10), tiny_gc())

def test_checkpoint_round_trip(ds, tmp_path):
    res = train(ds.train, ds.val, tiny_tc(max_steps=2), tiny_gc(), data_stats={"mean": [0.1]})
    path = tmp_path / "c.sigw"
    save_checkpoint(res.checkpoint, path)
    back = load_checkpoint(path)
    a, b = res.checkpoint, back
    np.testing.assert_array_equal(a.params.flatten(), b.params.flatten())
    np.testing.assert_array_equal(a.model.W, b.model.W)
    np.testing.assert_array_equal(a.model.loss_weights, b.model.loss_weights)
    np.testing.assert_array_equal(a.resume["adam"].v, b.resume["adam"].v)
    assert a.gen_config == b.gen_config and a.train_config == b.train_config
    assert a.state == b.state and b.data_stats == {"mean": [0.1]}
    save_checkpoint(back, tmp_path / "d.sigw")
    assert (tmp_path / "d.sigw").read_bytes() == path.read_bytes()

def test_checkpoint_corruption_detected(ds, tmp_path):
    res = train(ds.train, ds.val, tiny_tc(max_steps=1), tiny_gc())
    path = tmp_path / "c.sigw"
    save_checkpoint(res.checkpoint, path)
    raw = bytearray(path.read_bytes())
    flipped = bytearray(raw)
    flipped[len(raw) // 2] ^= 0xFF
    (tmp_path / "flip.sigw").write_bytes(bytes(flipped))
    with pytest.raises(CheckpointError, match="checksum|truncated"):
        load_checkpoint(tmp_path / "flip.sigw")
    (tmp_path / "short.sigw").write_bytes(bytes(raw[:-100]))
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(tmp_path / "short.sigw")
    newer = bytearray(raw)
    newer[4:8] = (2).to_bytes(4, "little")
    (tmp_path / "new.sigw").write_bytes(bytes(newer))
    with pytest.raises(CheckpointError, match="version 2"):
        load_checkpoint(tmp_path / "new.sigw")
    (tmp_path / "junk.sigw").write_bytes(b"nope")
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(tmp_path / "junk.sigw")

def test_resume_reproduces_next_step_bit_exactly(ds, tmp_path):
    gc = tiny_gc()
    straight = train(ds.train, ds.val, tiny_tc(max_steps=5, val_period=50, patience=50), gc)
    part = train(ds.train, ds.val, tiny_tc(max_steps=3, val_period=50, patience=50), gc)
    save_checkpoint(part.checkpoint, tmp_path / "p.sigw")
    resumed = train(ds.train, ds.val, tiny_tc(max_steps=5, val_period=50, patience=50), gc,
                    resume=load_checkpoint(tmp_path / "p.sigw"))
    ref = {h["step"]: h["train_loss"] for h in straight.history if h["train_loss"] is not None}
    got = {h["step"]: h["train_loss"] for h in resumed.history if h["train_loss"] is not None}
    assert sorted(got) == [3, 4]
    assert got[3] == ref[3] and got[4] == ref[4]
    np.testing.assert_array_equal(resumed.checkpoint.resume["params"], straight.checkpoint.resume["params"])
