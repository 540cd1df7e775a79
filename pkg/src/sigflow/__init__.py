"""Signature features, conditional neural SDEs and the SigCWGAN training loop."""
from .errors import (CheckpointError, ConfigError, DataError, NumericalError, ShapeError,
                     SigflowError)
from .tensoralg import TruncTensor, dimension, feature_dimension, tensor_exp, tensor_product
from .signature import (ALL_AUGMENTATIONS, AugmentOptions, FeatureSpec, Stream, augment,
                        batch_signature, concat, signature)
from .sigmetric import (CondExpSigModel, FeatureScaler, expected_signature, fit_cond_expsig,
                        predict_cond_expsig, sig_w1)
from .sde import BrownianPath, SolveMode, TapeLedger, backprop_solve, sample_brownian, solve
from .cnsde import CnsdeGenerator, CnsdeParams, GeneratorConfig, generate, init_cnsde, preset
from .training import (Checkpoint, TrainConfig, load_checkpoint, save_checkpoint, sigcwgan_loss,
                       train)
from .data import WindowSpec, ar_dataset, load_csv, make_windows, simulate_ar, split_and_normalize
from .evaluation import (MetricReport, MetricSettings, auc, classification_metric, evaluate,
                         extreme_values_metric, ho_sigw1_metric, unordered_w1, w1_1d)

__version__ = "0.1.0"
