"""Expected signatures, the truncated Sig-W1 distance and the conditional
expected-signature regression."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg

from .errors import DataError, NumericalError, ShapeError
from .signature import FeatureSpec, Stream, batch_signature
from .tensoralg import TruncTensor, add, l2_norm, scale

DEFAULT_RIDGE = 1e-4


def expected_signature(paths: Sequence[Stream], depth: int) -> TruncTensor:
    """Monte Carlo estimate: the mean of the per-path truncated signatures."""
    if len(paths) == 0:
        raise DataError("expected_signature of an empty collection")
    c = paths[0].channels
    for i, p in enumerate(paths):
        if p.channels != c:
            raise ShapeError(f"path {i} has {p.channels} channels, expected {c}")
    sigs = batch_signature(paths, depth)
    total = sigs[0]
    for s in sigs[1:]:
        total = add(total, s)
    return scale(total, 1.0 / len(sigs))


def sig_w1(mu_hat: TruncTensor, nu_hat: TruncTensor) -> float:
    """Truncated Signature-Wasserstein-1 distance between two expected signatures."""
    return l2_norm(mu_hat - nu_hat)


@dataclass(frozen=True, eq=False)
class FeatureScaler:
    """Per-coordinate standardization; near-constant coordinates keep unit scale."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray) -> "FeatureScaler":
        X = np.asarray(X, dtype=np.float64)
        mean = X.mean(axis=0)
        std = X.std(axis=0)
        std = np.where(std < 1e-12, 1.0, std)
        return cls(mean, std)

    def transform(self, X) -> np.ndarray:
        return (np.asarray(X) - self.mean) / self.std

    def inverse_transform(self, Z) -> np.ndarray:
        return np.asarray(Z) * self.std + self.mean


@dataclass(frozen=True, eq=False)
class CondExpSigModel:
    """Linear map from scaled input-signature features to expected output signatures.

    ``W`` has shape (out_dim, in_dim); targets are levels 1..M of the output
    signature on their natural (unscaled) scale.
    """

    W: np.ndarray
    intercept: np.ndarray
    in_scaler: FeatureScaler
    in_spec: FeatureSpec
    out_spec: FeatureSpec
    in_channels: int
    out_channels: int
    ridge: float = DEFAULT_RIDGE
    out_scaler: FeatureScaler | None = None

    @property
    def loss_weights(self) -> np.ndarray:
        """Per-coordinate weights for comparing expected signatures (ones if unscaled)."""
        if self.out_scaler is None:
            return np.ones(self.out_dim)
        return 1.0 / self.out_scaler.std

    @property
    def in_dim(self) -> int:
        return self.in_spec.dim(self.in_channels)

    @property
    def out_dim(self) -> int:
        return self.out_spec.dim(self.out_channels)

    @property
    def out_sig_channels(self) -> int:
        return self.out_spec.channels_out(self.out_channels)

    def features(self, x: Stream | Sequence[Stream]) -> np.ndarray:
        """Scaled input features for one stream (vector) or many (matrix)."""
        single = isinstance(x, Stream)
        streams = [x] if single else list(x)
        for i, s in enumerate(streams):
            if s.channels != self.in_channels:
                raise ShapeError(
                    f"input stream {i} has {s.channels} channels, model expects {self.in_channels}"
                )
        X = self.in_scaler.transform(self.in_spec.transform_many(streams))
        return X[0] if single else X

    def predict_features(self, X_scaled: np.ndarray) -> np.ndarray:
        return X_scaled @ self.W.T + self.intercept

    def predict_vector(self, x: Stream | Sequence[Stream]) -> np.ndarray:
        return self.predict_features(self.features(x))

    def target_features(self, ys: Sequence[Stream]) -> np.ndarray:
        for i, s in enumerate(ys):
            if s.channels != self.out_channels:
                raise ShapeError(
                    f"output stream {i} has {s.channels} channels, model expects {self.out_channels}"
                )
        return self.out_spec.transform_many(list(ys))


def solve_ridge(X: np.ndarray, Y: np.ndarray, ridge: float) -> tuple[np.ndarray, np.ndarray]:
    """Ridge least squares with an unpenalized intercept on the mean squared loss.

    Minimizes ``mean ||y - W x - b||^2 + ridge ||W||_F^2``.  Returns (W, b) with
    W of shape (Y.shape[1], X.shape[1]).
    """
    n = X.shape[0]
    xm = X.mean(axis=0)
    ym = Y.mean(axis=0)
    Xc = X - xm
    Yc = Y - ym
    A = Xc.T @ Xc / n
    B = Xc.T @ Yc / n
    if ridge > 0:
        A[np.diag_indices_from(A)] += ridge
    try:
        cf = scipy.linalg.cho_factor(A, lower=False, check_finite=True)
        Wt = scipy.linalg.cho_solve(cf, B)
        if ridge == 0 and np.linalg.cond(A) > 1e14:
            raise np.linalg.LinAlgError("ill-conditioned")
    except np.linalg.LinAlgError:
        if ridge == 0:
            raise NumericalError(
                "normal equations are singular with ridge=0; increase the ridge strength"
            ) from None
        Wt = np.linalg.pinv(A) @ B
    W = Wt.T
    return W, ym - W @ xm


def fit_cond_expsig(
    pairs: Sequence[tuple[Stream, Stream]],
    in_depth: int = 5,
    out_depth: int = 4,
    ridge: float = DEFAULT_RIDGE,
    in_spec: FeatureSpec | None = None,
    out_spec: FeatureSpec | None = None,
    scale_targets: bool = False,
) -> CondExpSigModel:
    """Fit the conditional expected-signature regression on (x, y) pairs."""
    if len(pairs) < 2:
        raise DataError(f"need at least 2 pairs to fit the regression, got {len(pairs)}")
    if ridge < 0:
        raise ValueError(f"ridge strength must be >= 0, got {ridge}")
    in_spec = in_spec or FeatureSpec(in_depth)
    out_spec = out_spec or FeatureSpec(out_depth)
    xs = [p[0] for p in pairs]
    ys = [p[1] for p in pairs]
    X_raw = in_spec.transform_many(xs)
    scaler = FeatureScaler.fit(X_raw)
    X = scaler.transform(X_raw)
    Y = out_spec.transform_many(ys)
    W, b = solve_ridge(X, Y, ridge)
    if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
        raise NumericalError("regression produced non-finite coefficients")
    return CondExpSigModel(
        W=W,
        intercept=b,
        in_scaler=scaler,
        in_spec=in_spec,
        out_spec=out_spec,
        in_channels=xs[0].channels,
        out_channels=ys[0].channels,
        ridge=ridge,
        out_scaler=FeatureScaler.fit(Y) if scale_targets else None,
    )


def predict_cond_expsig(model: CondExpSigModel, x: Stream) -> TruncTensor:
    vec = model.predict_vector(x)
    return TruncTensor.from_vector(vec, model.out_sig_channels, model.out_spec.depth, include_level0=False)
