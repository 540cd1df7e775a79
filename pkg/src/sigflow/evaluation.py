"""Metrics for comparing generated output streams with real ones.

Generators are anything with ``sample_values(xs, n, seed)`` returning an
array of shape (len(xs), n, L_y, d_y).  Generated values are read on the
timestamps of the matching real output streams.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np
import scipy.optimize
import scipy.special
import scipy.stats

from .errors import DataError, ShapeError
from .sigmetric import FeatureScaler, fit_cond_expsig
from .signature import FeatureSpec, Stream

DEFAULT_EVAL_MC = 128
DEFAULT_EVAL_SEEDS = (0, 1, 2)
UNORDERED_VARIANTS = ("a", "b", "c", "d")


class Generator(Protocol):
    def sample_values(self, xs: Sequence[Stream], n_samples: int, seed) -> np.ndarray: ...


def w1_1d(a, b) -> float:
    """Exact Wasserstein-1 distance between two 1-D empirical distributions."""
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.size == 0 or b.size == 0:
        raise DataError("w1_1d needs two non-empty sample sets")
    if a.size == b.size:
        sa, sb = np.sort(a), np.sort(b)
        # summing the signed raw values keeps the total exact until one final rounding
        sign = np.where(sa >= sb, 1.0, -1.0)
        return math.fsum(np.concatenate([sign * sa, -sign * sb])) / a.size
    # the CDF integral equals the quantile-function integral on the merged grid
    return float(scipy.stats.wasserstein_distance(a, b))


def auc(scores, labels) -> float:
    """Area under the ROC curve via the Mann-Whitney statistic; ties count one half."""
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    if s.shape != y.shape:
        raise ShapeError(f"{s.size} scores but {y.size} labels")
    if not np.all(np.isin(y, (0, 1))):
        raise DataError("labels must be 0 or 1")
    pos = y == 1
    n1, n0 = int(pos.sum()), int((~pos).sum())
    if n1 == 0 or n0 == 0:
        raise DataError("AUC is undefined: labels contain a single class")
    ranks = scipy.stats.rankdata(s)
    u = ranks[pos].sum() - n1 * (n1 + 1) / 2.0
    return float(u / (n1 * n0))


def _check_samples(real_pairs, gen: np.ndarray) -> np.ndarray:
    gen = np.asarray(gen, dtype=np.float64)
    if gen.ndim == 3:
        gen = gen[:, None]
    if gen.ndim != 4 or gen.shape[0] != len(real_pairs) or gen.shape[1] < 1:
        raise ShapeError(
            f"generated samples must have shape ({len(real_pairs)}, m>=1, L_y, d_y), got {gen.shape}"
        )
    d_y = real_pairs[0][1].channels
    if gen.shape[3] != d_y:
        raise ShapeError(f"generated samples have {gen.shape[3]} channels, real outputs {d_y}")
    return gen


def _pools(real_pairs, gen: np.ndarray, variant: str):
    """Real and generated scalar pools, each of shape (count, d_y)."""
    if variant not in UNORDERED_VARIANTS:
        raise ValueError(f"unknown unordered-W1 variant {variant!r}; expected one of a, b, c, d")
    last = np.stack([x.values[-1] for x, _ in real_pairs])          # (N, d)
    ys = np.stack([y.values for _, y in real_pairs])                # (N, L, d)
    real = ys if variant == "a" else ys - last[:, None, :]
    fake = gen if variant == "a" else gen - last[:, None, None, :]
    if variant in ("a", "b"):
        return real.reshape(-1, real.shape[-1]), fake.reshape(-1, fake.shape[-1])
    op = np.max if variant == "c" else np.min
    return op(real, axis=1), op(fake, axis=2).reshape(-1, fake.shape[-1])


def unordered_w1(real_pairs: Sequence[tuple[Stream, Stream]], gen, variant: str) -> float:
    """W1 between pooled real and generated statistics, averaged over output channels.

    a: output values; b: output values minus the last input value; c/d: the
    largest/smallest such difference per stream.
    """
    if len(real_pairs) == 0:
        raise DataError("unordered_w1 needs at least one real pair")
    gen = _check_samples(real_pairs, gen)
    real, fake = _pools(real_pairs, gen, variant)
    if real.shape[0] == 0 or fake.shape[0] == 0:
        raise DataError("empty pool")
    return float(np.mean([w1_1d(real[:, c], fake[:, c]) for c in range(real.shape[1])]))


def _streams_like(real_pairs, values: np.ndarray) -> list[Stream]:
    return [Stream(y.times, v) for (_, y), v in zip(real_pairs, values)]


def _fit_logistic(X: np.ndarray, y: np.ndarray, l2: float, max_iter: int) -> np.ndarray:
    """Weights (d + 1,) of an L2-penalized logistic classifier; the bias is unpenalized."""
    n, d = X.shape
    Xb = np.hstack([X, np.ones((n, 1))])
    pen = np.full(d + 1, l2)
    pen[-1] = 0.0

    def obj(w):
        z = Xb @ w
        loss = np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * np.sum(pen * w * w)
        grad = Xb.T @ (scipy.special.expit(z) - y) / n + pen * w
        return loss, grad

    res = scipy.optimize.minimize(obj, np.zeros(d + 1), jac=True, method="L-BFGS-B",
                                  options={"maxiter": max_iter})
    return res.x


def classification_metric(real_pairs: Sequence[tuple[Stream, Stream]], generator: Generator,
                          test_fraction: float = 0.3, seed=0, in_depth: int = 5,
                          out_depth: int = 4, l2: float = 1e-3, max_iter: int = 500):
    """(AUC, accuracy) of a real-vs-generated logistic classifier on a held-out split.

    Each conditioning stream contributes its real output (label 1) and one
    generated output (label 0); the split is by conditioning stream.
    """
    n = len(real_pairs)
    n_test = int(round(test_fraction * n))
    if not 0 < test_fraction < 1 or n_test < 1 or n - n_test < 2:
        raise DataError(f"{n} pairs are not enough for a classifier split at test_fraction={test_fraction}")
    xs = [p[0] for p in real_pairs]
    gen = _check_samples(real_pairs, generator.sample_values(xs, 1, seed))[:, 0]
    fake = _streams_like(real_pairs, gen)
    fx = FeatureSpec(in_depth).transform_many(xs)
    fy_real = FeatureSpec(out_depth).transform_many([p[1] for p in real_pairs])
    fy_fake = FeatureSpec(out_depth).transform_many(fake)
    X = np.vstack([np.hstack([fx, fy_real]), np.hstack([fx, fy_fake])])
    y = np.concatenate([np.ones(n), np.zeros(n)])
    perm = np.random.default_rng([int(s) for s in np.atleast_1d(seed)] + [11]).permutation(n)
    test_ids = perm[:n_test]
    is_test = np.zeros(n, dtype=bool)
    is_test[test_ids] = True
    is_test = np.concatenate([is_test, is_test])
    scaler = FeatureScaler.fit(X[~is_test])
    Xtr, Xte = scaler.transform(X[~is_test]), scaler.transform(X[is_test])
    w = _fit_logistic(Xtr, y[~is_test], l2, max_iter)
    score = Xte @ w[:-1] + w[-1]
    acc = float(np.mean((score > 0) == (y[is_test] == 1)))
    return auc(score, y[is_test]), acc


def ho_sigw1_metric(ref_pairs: Sequence[tuple[Stream, Stream]],
                    test_pairs: Sequence[tuple[Stream, Stream]], generator: Generator,
                    depths: tuple[int, int] = (6, 5), m: int = DEFAULT_EVAL_MC,
                    ridge: float = 1e-4, seed=0, model=None) -> float:
    """Mean L2 distance between refitted predictions and generated expected signatures."""
    if not test_pairs:
        raise DataError("ho_sigw1_metric needs test pairs")
    if model is None:
        model = fit_cond_expsig(ref_pairs, depths[0], depths[1], ridge)
    xs = [p[0] for p in test_pairs]
    pred = model.predict_vector(xs)
    gen = _check_samples(test_pairs, generator.sample_values(xs, m, seed))
    out = np.empty(len(test_pairs))
    for i, (_, y) in enumerate(test_pairs):
        feats = model.out_spec.transform_arrays(y.times, gen[i])
        out[i] = np.linalg.norm(pred[i] - feats.mean(axis=0))
    return float(out.mean())


def _extreme(last: np.ndarray, values: np.ndarray, sign: str, relative: bool) -> np.ndarray:
    """Per-stream statistic over the time axis (axis -1) of channel-selected values."""
    diff = values - last
    if relative:
        diff = diff / last
    return diff.max(axis=-1) if sign == "+" else diff.min(axis=-1)


def extreme_values_metric(real_pairs: Sequence[tuple[Stream, Stream]], generator: Generator,
                          p: float = 95.0, m: int = DEFAULT_EVAL_MC, sign: str = "+",
                          relative: bool = False, seed=0, channel: int = 0) -> float:
    """AUC of the generated probability of an extreme move against the real outcome."""
    if not 0 < p < 100:
        raise ValueError(f"percentile must lie in (0, 100), got {p}")
    if sign not in ("+", "-"):
        raise ValueError(f"sign must be '+' or '-', got {sign!r}")
    if not real_pairs:
        raise DataError("extreme_values_metric needs real pairs")
    last = np.array([x.values[-1, channel] for x, _ in real_pairs])
    if relative and np.any(last == 0):
        raise DataError("relative extreme values need every last input value to be non-zero")
    xs = [q[0] for q in real_pairs]
    gen = _check_samples(real_pairs, generator.sample_values(xs, m, seed))[..., channel]
    real_vals = np.stack([y.values[:, channel] for _, y in real_pairs])
    real_stat = _extreme(last[:, None], real_vals, sign, relative)
    gen_stat = _extreme(last[:, None, None], gen, sign, relative)
    q = np.percentile(real_stat, p, method="linear")
    if sign == "+":
        labels, hits = real_stat >= q, gen_stat >= q
    else:
        labels, hits = real_stat <= q, gen_stat <= q
    try:
        return auc(hits.mean(axis=1), labels.astype(int))
    except DataError:
        raise DataError(f"extreme-values AUC is undefined at p={p}: real labels contain a single class") from None


@dataclass
class MetricReport:
    """Mean and standard deviation of each metric over evaluation seeds."""

    values: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def add(self, name: str, samples: Sequence[float]) -> None:
        arr = np.asarray(samples, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise DataError(f"metric {name} produced non-finite values")
        self.values[name] = (float(arr.mean()), float(arr.std()), len(arr))

    def to_text(self) -> str:
        width = max([len(k) for k in self.values] + [6])
        lines = [f"{k.ljust(width)}  {m:.6g} +/- {s:.3g}  (n={n})" for k, (m, s, n) in self.values.items()]
        lines += [f"# {k} = {v}" for k, v in self.metadata.items()]
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "mean", "std", "n"])
        for k, (m, s, n) in self.values.items():
            w.writerow([k, repr(m), repr(s), n])
        return buf.getvalue()


@dataclass(frozen=True)
class MetricSettings:
    classification: bool = True
    ho_sigw1: bool = True
    unordered: bool = True
    extreme: bool = True
    m: int = DEFAULT_EVAL_MC
    ho_depths: tuple = (6, 5)
    ridge: float = 1e-4
    percentiles: tuple = (95.0,)
    relative: bool = False
    test_fraction: float = 0.3
    seeds: tuple = DEFAULT_EVAL_SEEDS


def evaluate(ref_pairs, test_pairs, generator: Generator, settings: MetricSettings = MetricSettings()
             ) -> MetricReport:
    """Run every enabled metric once per evaluation seed."""
    report = MetricReport(metadata={
        "seeds": ",".join(str(s) for s in settings.seeds),
        "mc_samples": settings.m,
        "n_test": len(test_pairs),
        "n_reference": len(ref_pairs),
    })
    seeds = settings.seeds
    if settings.classification:
        res = [classification_metric(test_pairs, generator, settings.test_fraction, s) for s in seeds]
        report.add("classification_auc", [r[0] for r in res])
        report.add("classification_accuracy", [r[1] for r in res])
        report.metadata["classifier"] = "logistic regression on signature features (depths 5 and 4), not an LSTM"
    if settings.ho_sigw1:
        model = fit_cond_expsig(ref_pairs, settings.ho_depths[0], settings.ho_depths[1], settings.ridge)
        report.add("ho_sigw1", [ho_sigw1_metric(ref_pairs, test_pairs, generator, settings.ho_depths,
                                                settings.m, settings.ridge, s, model) for s in seeds])
        report.metadata["ho_depths"] = f"{settings.ho_depths[0]},{settings.ho_depths[1]}"
    if settings.unordered:
        samples = {s: generator.sample_values([p[0] for p in test_pairs], settings.m, s) for s in seeds}
        for v in UNORDERED_VARIANTS:
            report.add(f"unordered_w1_{v}", [unordered_w1(test_pairs, samples[s], v) for s in seeds])
    if settings.extreme:
        for p in settings.percentiles:
            for sign, tag in (("+", "plus"), ("-", "minus")):
                name = f"extreme_{tag}_{p:g}" + ("_rel" if settings.relative else "")
                report.add(name, [extreme_values_metric(test_pairs, generator, p, settings.m, sign,
                                                        settings.relative, s) for s in seeds])
        report.metadata["percentile_method"] = "linear interpolation"
    return report
