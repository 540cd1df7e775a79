"""Command line entry point: ``sigflow simulate|train|generate|evaluate|bench``.

Exit codes: 0 success, 1 usage or configuration error, 2 data or checkpoint
error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .cnsde import CnsdeGenerator, generate, init_cnsde
from .config import RunConfig, load_config
from .data import Dataset, ar_dataset, load_csv, make_windows, simulate_ar, split_and_normalize, write_csv
from .errors import CheckpointError, ConfigError, DataError, NumericalError
from .evaluation import evaluate
from .sde import SolveMode, TapeLedger
from .training import load_checkpoint, save_checkpoint, sigcwgan_loss, train
from .sigmetric import fit_cond_expsig

log = logging.getLogger("sigflow")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3


def _out_dir(cfg: RunConfig) -> Path:
    p = Path(cfg.out_dir)
    p.mkdir(parents=True, exist_ok=True)
    return p


def write_manifest(path: Path, command: str, cfg: RunConfig, extra=()) -> None:
    lines = [f"command = {command}"] + cfg.lines() + list(extra)
    path.write_text("\n".join(lines) + "\n")


def load_dataset(cfg: RunConfig) -> Dataset:
    """Windows and splits from ``data_path`` or, when it is empty, a simulated AR series."""
    spec = cfg.window_spec()
    if not cfg.data_path:
        return ar_dataset(cfg.n_pairs, spec, cfg.ar_coeffs, cfg.noise_std, cfg.fractions(),
                          cfg.data_seed, cfg.burn_in)
    series = load_csv(cfg.data_path, cfg.log_transform)
    ds = split_and_normalize(make_windows(series, spec), cfg.fractions(), cfg.chronological,
                             cfg.data_seed)
    ds.info.update({"source": cfg.data_path, "x_length": spec.x_length,
                    "y_length": spec.y_length, "stride": spec.stride})
    return ds


def cmd_simulate(cfg: RunConfig) -> Path:
    out = _out_dir(cfg)
    series = simulate_ar(cfg.ar_coeffs, cfg.noise_std, cfg.sim_length, cfg.burn_in, cfg.seed)
    path = out / "series.csv"
    write_csv(series, path)
    write_manifest(out / "simulate.manifest", "simulate", cfg,
                   [f"rows = {series.length}", f"output = {path.name}"])
    return path


def cmd_train(cfg: RunConfig) -> Path:
    out = _out_dir(cfg)
    ds = load_dataset(cfg)
    d_x, d_y = ds.train[0][0].channels, ds.train[0][1].channels
    tc = cfg.train_config()
    gc = cfg.generator_config(d_x, d_y)
    resume = load_checkpoint(cfg.resume) if cfg.resume else None
    stats = {"mean": [float(v) for v in ds.mean], "std": [float(v) for v in ds.std]}
    res = train(ds.train, ds.val, tc, gc, resume=resume, data_stats=stats,
                on_step=lambda r: log.info("step %d loss %.6g", r["step"], r["train_loss"]))
    ckpt_path = Path(cfg.checkpoint) if cfg.checkpoint else out / "checkpoint.sigw"
    save_checkpoint(res.checkpoint, ckpt_path)
    with (out / "loss_log.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "train_loss", "val_loss"])
        for h in res.history:
            w.writerow([h["step"], "" if h["train_loss"] is None else repr(h["train_loss"]),
                        "" if h["val_loss"] is None else repr(h["val_loss"])])
    st = res.checkpoint.state
    write_manifest(out / "train.manifest", "train", cfg, ds.manifest_lines() + [
        f"stop_reason = {res.stop_reason}", f"steps = {st['step']}",
        f"best_step = {st['best_step']}", f"best_val_loss = {st['best_val']!r}",
        f"checkpoint = {ckpt_path}"])
    return ckpt_path


def _checkpoint_path(cfg: RunConfig) -> Path:
    p = Path(cfg.checkpoint) if cfg.checkpoint else Path(cfg.out_dir) / "checkpoint.sigw"
    if not p.exists():
        raise DataError(f"checkpoint {p} does not exist; run train first or set checkpoint=")
    return p


def cmd_generate(cfg: RunConfig) -> Path:
    ckpt = load_checkpoint(_checkpoint_path(cfg))
    if not cfg.x_csv:
        raise ConfigError("generate needs x_csv = <path to the conditioning stream>")
    x = load_csv(cfg.x_csv, cfg.log_transform)
    gc = ckpt.gen_config
    if x.channels != gc.d_x:
        raise DataError(f"{cfg.x_csv} has {x.channels} value channels but the checkpoint "
                        f"expects {gc.d_x}")
    mean = np.asarray(ckpt.data_stats.get("mean", np.zeros(gc.d_x)), dtype=np.float64)
    std = np.asarray(ckpt.data_stats.get("std", np.ones(gc.d_x)), dtype=np.float64)
    xn = x.with_values((x.values - mean) / std)
    samples = generate(xn, ckpt.params, gc, cfg.n_samples, cfg.seed, ckpt.model)
    out = _out_dir(cfg)
    path = out / "samples.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample", "t"] + [f"v{c + 1}" for c in range(gc.d_y)])
        for j, s in enumerate(samples):
            vals = s.values * std[: gc.d_y] + mean[: gc.d_y]
            for t, row in zip(s.times, vals):
                w.writerow([j, repr(float(t))] + [repr(float(v)) for v in row])
    write_manifest(out / "generate.manifest", "generate", cfg,
                   [f"samples = {cfg.n_samples}", f"output = {path.name}"])
    return path


def cmd_evaluate(cfg: RunConfig) -> Path:
    ckpt = load_checkpoint(_checkpoint_path(cfg))
    ds = load_dataset(cfg)
    test = ds.test or ds.val
    if not test:
        raise DataError("evaluation needs a non-empty test or validation split")
    gen = CnsdeGenerator(ckpt.params, ckpt.gen_config, ckpt.model)
    report = evaluate(ds.train, test, gen, cfg.metric_settings())
    out = _out_dir(cfg)
    (out / "report.txt").write_text(report.to_text())
    (out / "report.csv").write_text(report.to_csv())
    write_manifest(out / "evaluate.manifest", "evaluate", cfg, ds.manifest_lines())
    return out / "report.csv"


def linear_r2(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if np.ptp(y) == 0:
        return 1.0 if np.ptp(x) == 0 else 0.0
    coef = np.polyfit(x, y, 1)
    resid = y - np.polyval(coef, x)
    return float(1.0 - resid @ resid / np.sum((y - y.mean()) ** 2))


def bench_rows(cfg: RunConfig, ds: Dataset | None = None) -> list[dict]:
    """One loss-and-gradient evaluation per (mode, step count) with tape accounting."""
    if ds is None:
        ds = load_dataset(cfg)
    batch = ds.train[: cfg.bench_batch]
    xs = [p[0] for p in batch]
    d_x, d_y = batch[0][0].channels, batch[0][1].channels
    model = fit_cond_expsig(ds.train, cfg.in_depth, cfg.out_depth, cfg.ridge,
                            scale_targets=cfg.scale_targets)
    rows = []
    for n in cfg.bench_steps:
        gc = cfg.generator_config(d_x, d_y, n_steps=n, out_length=min(cfg.y_length, n + 1))
        params = init_cnsde(gc, cfg.init_seed)
        for mode in (SolveMode.REVERSIBLE, SolveMode.STORE_ALL):
            times, ledger = [], None
            for _ in range(cfg.bench_repeats):
                ledger = TapeLedger()
                t0 = time.perf_counter()
                loss, _ = sigcwgan_loss(xs, model, params, gc, cfg.bench_mc, (cfg.seed,),
                                        list(range(len(xs))), mode, ledger)
                times.append(time.perf_counter() - t0)
            rows.append({"mode": mode.value, "steps": n, "tapes": ledger.peak,
                         "peak_bytes": ledger.peak_bytes,
                         "seconds_per_step": float(np.median(times)), "loss": loss})
    return rows


def cmd_bench(cfg: RunConfig) -> Path:
    rows = bench_rows(cfg)
    out = _out_dir(cfg)
    path = out / "bench.csv"
    keys = ["mode", "steps", "tapes", "peak_bytes", "seconds_per_step", "loss"]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(keys)
        for r in rows:
            w.writerow([repr(r[k]) if isinstance(r[k], float) else r[k] for k in keys])
    summary = []
    for mode in ("reversible", "store_all"):
        sel = [r for r in rows if r["mode"] == mode]
        tapes = [r["tapes"] for r in sel]
        summary.append(f"{mode}_tape_range = {max(tapes) - min(tapes)}")
        summary.append(f"{mode}_tape_r2 = {linear_r2([r['steps'] for r in sel], tapes)!r}")
    text = [f"{'mode':<11}{'steps':>6}{'tapes':>7}{'peak_bytes':>12}{'sec/step':>10}  loss"]
    text += [f"{r['mode']:<11}{r['steps']:>6}{r['tapes']:>7}{r['peak_bytes']:>12}"
             f"{r['seconds_per_step']:>10.4f}  {r['loss']:.10g}" for r in rows]
    (out / "bench.txt").write_text("\n".join(text + summary) + "\n")
    write_manifest(out / "bench.manifest", "bench", cfg, summary)
    return path


COMMANDS = {"simulate": cmd_simulate, "train": cmd_train, "generate": cmd_generate,
            "evaluate": cmd_evaluate, "bench": cmd_bench}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"sigflow: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sigflow", description="Conditional neural SDE generators trained with signatures.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="flat key = value configuration file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override one configuration value (repeatable)")
    p.add_argument("--seed", type=int, help="shorthand for --set seed=N")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, args.overrides, args.seed)
        path = COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"sigflow: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, CheckpointError) as exc:
        print(f"sigflow: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"sigflow: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
