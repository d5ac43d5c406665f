"""Novelty-driven continual learning of an autoencoder and a latent predictor.

Incoming samples are scored by reconstruction error (autoencoder) and, when a
target is known, by prediction error (predictor). Each sub-model routes the
sample into its novelty buffer if the error exceeds its threshold and into its
familiarity buffer otherwise. A full novelty buffer triggers retraining on the
buffered novelties only, followed by consolidation, threshold re-estimation
and emptying of both buffers.
"""

from __future__ import annotations

import enum
import logging
import pickle
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import continual, metrics, nn
from .dataio import Dataset, split_phases
from .errors import ConfigurationError, InputShapeError, PrematureUpdateError

log = logging.getLogger(__name__)


class Strategy(str, enum.Enum):
    NONE = "none"
    FINE_TUNE = "fine_tune"
    ONLINE_EWC = "online_ewc"


class Which(str, enum.Enum):
    AUTOENCODER = "autoencoder"
    PREDICTOR = "predictor"


@dataclass(frozen=True)
class ThresholdState:
    alpha: float
    mse_min: float

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("threshold factor must be positive")

    @property
    def threshold(self) -> float:
        return self.alpha * self.mse_min


@dataclass
class BufferPair:
    """Bounded novelty buffer and unbounded familiarity buffer of one sub-model."""

    capacity: int
    novelty: list = field(default_factory=list)
    familiarity: list = field(default_factory=list)

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError("novelty buffer capacity must be positive")

    def add(self, item, novel: bool) -> bool:
        """Store ``item``; True iff this insertion filled the novelty buffer."""
        if novel:
            if len(self.novelty) >= self.capacity:
                raise PrematureUpdateError("novelty buffer is already full")
            self.novelty.append(item)
            return len(self.novelty) == self.capacity
        self.familiarity.append(item)
        return False

    @property
    def full(self) -> bool:
        return len(self.novelty) == self.capacity

    def clear(self) -> None:
        self.novelty.clear()
        self.familiarity.clear()


@dataclass
class SubModel:
    net: nn.MLP
    threshold: ThresholdState
    buffers: BufferPair
    consolidation: continual.ConsolidationState
    update_count: int = 0


@dataclass
class UpdateSettings:
    """Retraining settings used during the update phase."""

    epochs_a: int = 512
    epochs_p: int = 512
    batch_size: int = 16
    patience: int = 30
    lr: float = 1e-3
    warn_ratio: float = 2.0
    seed: int = 0


@dataclass
class UpdateReport:
    which: Which
    position: int
    epochs_run: int
    train_mse: float
    validation_mse: Optional[float]
    threshold: float
    n_novelty: int
    n_familiarity: int
    flagged: bool = False

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["which"] = self.which.value
        return d


@dataclass
class ClearModel:
    autoencoder: SubModel
    latent_layer: int
    predictor: Optional[SubModel] = None
    strategy: Strategy = Strategy.ONLINE_EWC
    settings: UpdateSettings = field(default_factory=UpdateSettings)
    position: int = 0
    reports: list = field(default_factory=list)

    def __post_init__(self):
        ae = self.autoencoder.net
        if ae.input_dim != ae.output_dim:
            raise ValueError("autoencoder output width must equal its input width")
        latent = ae.layers[self.latent_layer - 1].output_dim
        if self.predictor is not None and self.predictor.net.input_dim != latent:
            raise ValueError("predictor input width must equal the latent width")

    def sub(self, which: Which) -> SubModel:
        sub = self.autoencoder if Which(which) is Which.AUTOENCODER else self.predictor
        if sub is None:
            raise ValueError(f"model has no {which.value}")
        return sub

    def encode(self, x) -> np.ndarray:
        return nn.forward(self.autoencoder.net, x, nn.Mode.EVAL, upto=self.latent_layer)

    def reconstruct(self, x) -> np.ndarray:
        return nn.forward(self.autoencoder.net, x, nn.Mode.EVAL)

    def predict(self, x) -> np.ndarray:
        out = nn.forward(self.predictor.net, self.encode(x), nn.Mode.EVAL)
        return out[..., 0]


def reconstruction_errors(model: ClearModel, X) -> np.ndarray:
    """Per-sample ``||x - x_hat||^2 / dim`` for a batch."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    d = X - model.reconstruct(X)
    return np.mean(d * d, axis=1)


def prediction_errors(model: ClearModel, X, y) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    d = np.asarray(y, dtype=np.float64).reshape(-1) - model.predict(X)
    return d * d


def score_sample(model: ClearModel, x, y: Optional[float] = None):
    """``(reconstruction_error, prediction_error or None)`` of one sample, without dropout."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != model.autoencoder.net.input_dim:
        raise InputShapeError(f"expected a feature vector of length "
                              f"{model.autoencoder.net.input_dim}, got shape {x.shape}")
    rec = float(reconstruction_errors(model, x)[0])
    pred = None
    if y is not None and model.predictor is not None:
        pred = float(prediction_errors(model, x, [y])[0])
    return rec, pred


def route_sample(model: ClearModel, x, y, scores) -> tuple[bool, bool]:
    """Buffer the sample per sub-model; returns which novelty buffers just filled."""
    if model.strategy is Strategy.NONE:
        return False, False
    rec, pred = scores
    ae = model.autoencoder
    ae_full = ae.buffers.add(np.array(x, dtype=np.float64), rec > ae.threshold.threshold)
    pred_full = False
    if pred is not None and model.predictor is not None:
        p = model.predictor
        item = (np.array(x, dtype=np.float64), float(y))
        pred_full = p.buffers.add(item, pred > p.threshold.threshold)
    return ae_full, pred_full


def _stack(items, which: Which):
    if which is Which.AUTOENCODER:
        X = np.array(items, dtype=np.float64).reshape(len(items), -1)
        return X, None
    X = np.array([it[0] for it in items], dtype=np.float64).reshape(len(items), -1)
    return X, np.array([it[1] for it in items], dtype=np.float64)


def _training_arrays(model: ClearModel, which: Which, X, y):
    """Network-level (inputs, targets) for a sub-model; predictor inputs are re-encoded."""
    if which is Which.AUTOENCODER:
        return X, None
    return model.encode(X), y


def sample_errors(model: ClearModel, which: Which, X, y=None) -> np.ndarray:
    if which is Which.AUTOENCODER:
        return reconstruction_errors(model, X)
    return prediction_errors(model, X, y)


def reestimate_threshold(model: ClearModel, which: Which, snapshot) -> ThresholdState:
    """Set ``mse_min`` to the mean per-sample error over the buffered samples.

    ``snapshot`` is ``(X, y)`` holding novelty and familiarity contents taken
    before the buffers were emptied (``y`` is None for the autoencoder).
    """
    sub = model.sub(which)
    X, y = snapshot
    if X is None or len(X) == 0:
        log.warning("empty buffer snapshot; %s threshold kept at %g",
                    which.value, sub.threshold.threshold)
        return sub.threshold
    mse_min = float(np.mean(sample_errors(model, which, X, y)))
    sub.threshold = ThresholdState(sub.threshold.alpha, mse_min)
    return sub.threshold


def _seed(settings: UpdateSettings, which: Which, count: int) -> int:
    tag = 0 if which is Which.AUTOENCODER else 1
    return int(np.random.SeedSequence([settings.seed, tag, count]).generate_state(1)[0])


def perform_update(model: ClearModel, which: Which) -> UpdateReport:
    which = Which(which)
    sub = model.sub(which)
    if not sub.buffers.full:
        raise PrematureUpdateError(
            f"{which.value} novelty buffer holds {len(sub.buffers.novelty)}"
            f"/{sub.buffers.capacity} samples")
    if model.strategy is Strategy.NONE:
        raise PrematureUpdateError("a frozen model is never updated")
    s = model.settings
    nov_X, nov_y = _stack(sub.buffers.novelty, which)
    fam = sub.buffers.familiarity
    fam_X, fam_y = _stack(fam, which) if fam else (None, None)

    pre_val = None
    if fam_X is not None:
        pre_val = float(np.mean(sample_errors(model, which, fam_X, fam_y)))

    epochs = s.epochs_a if which is Which.AUTOENCODER else s.epochs_p
    dropout_on = any(l.dropout_rate > 0 for l in sub.net.layers)
    if model.strategy is Strategy.FINE_TUNE:
        cfg = nn.TrainConfig(epochs, s.batch_size, s.patience, dropout_on,
                             _seed(s, which, sub.update_count), s.lr)
        penalty = None
    else:
        cfg = nn.TrainConfig(epochs, s.batch_size, None, dropout_on,
                             _seed(s, which, sub.update_count), s.lr)
        penalty = sub.consolidation.penalty if sub.consolidation.update_count else None
    inputs, targets = _training_arrays(model, which, nov_X, nov_y)
    result = nn.train(sub.net, inputs, targets, cfg, penalty)

    train_mse = float(np.mean(sample_errors(model, which, nov_X, nov_y)))
    val = None
    if fam_X is not None:
        val = float(np.mean(sample_errors(model, which, fam_X, fam_y)))

    snap_X = nov_X if fam_X is None else np.vstack([nov_X, fam_X])
    snap_y = None
    if which is Which.PREDICTOR:
        snap_y = nov_y if fam_y is None else np.concatenate([nov_y, fam_y])

    if model.strategy is Strategy.ONLINE_EWC:
        f_in, f_t = _training_arrays(model, which, snap_X, snap_y)
        fisher = continual.estimate_fisher_diagonal(sub.net, f_in, f_t)
        sub.consolidation = continual.consolidate(sub.consolidation, fisher, sub.net.params)

    thr = reestimate_threshold(model, which, (snap_X, snap_y))
    flagged = bool(val is not None and pre_val and val / pre_val > s.warn_ratio)
    if flagged:
        log.warning("%s update at sample %d: validation error rose from %.4g to %.4g",
                    which.value, model.position, pre_val, val)
    report = UpdateReport(which, model.position, result.epochs_run, train_mse, val,
                          thr.threshold, len(nov_X), 0 if fam_X is None else len(fam_X),
                          flagged)
    sub.buffers.clear()
    sub.update_count += 1
    model.reports.append(report)
    return report


CHECKPOINT_VERSION = 1


def save_checkpoint(model: ClearModel, path) -> None:
    """Pickle the full model state: networks, thresholds, buffers and consolidation."""
    with open(path, "wb") as fh:
        pickle.dump({"version": CHECKPOINT_VERSION, "model": model}, fh)


def load_checkpoint(path) -> ClearModel:
    with open(path, "rb") as fh:
        blob = pickle.load(fh)
    if not isinstance(blob, dict) or blob.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path} is not a version {CHECKPOINT_VERSION} checkpoint")
    return blob["model"]


# --------------------------------------------------------------------------
# experiment phases


@dataclass
class EngineConfig:
    """Architecture, framework and training settings of one continual-learning instance."""

    strategy: Strategy = Strategy.ONLINE_EWC
    latent_dim: int = 4
    encoder_hidden: tuple = (32, 16, 8)
    predictor_hidden: tuple = (96, 64, 32, 16, 8)
    slope: float = 0.05
    dropout: float = 0.0
    use_predictor: bool = True
    capacity_a: int = 1000
    capacity_p: int = 1000
    alpha_a: float = 0.95
    alpha_p: float = 0.95
    gamma: float = 0.9
    lambda_a: float = 200.0
    lambda_p: float = 200.0
    ewc_rule: str = "online"
    consolidate_warmup: bool = True
    epochs_a_1: int = 512
    epochs_p_1: int = 512
    epochs_a_2: int = 512
    epochs_p_2: int = 512
    batch_1: int = 32
    batch_2: int = 16
    lr: float = 1e-3
    patience: int = 30
    warn_ratio: float = 2.0
    phases: tuple = (1000, 10000, 1000)
    seed: int = 0

    def __post_init__(self):
        self.strategy = Strategy(self.strategy)


def autoencoder_layers(dims: int, cfg: EngineConfig, dropout: float) -> list:
    widths = [dims, *cfg.encoder_hidden, cfg.latent_dim, *reversed(cfg.encoder_hidden), dims]
    return nn.dense_stack(widths, nn.Activation.LEAKY_RELU, cfg.slope, dropout)


def predictor_layers(cfg: EngineConfig, dropout: float) -> list:
    widths = [cfg.latent_dim, *cfg.predictor_hidden, 1]
    acts = [nn.Activation.TANH] * len(cfg.predictor_hidden) + [nn.Activation.IDENTITY]
    return nn.dense_stack(widths, acts, cfg.slope, dropout)


def build_networks(dims: int, cfg: EngineConfig, supervised: bool, dropout: float):
    """Freshly initialised ``(autoencoder, predictor or None, latent_layer)``."""
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 7]))
    ae = nn.MLP(autoencoder_layers(dims, cfg, dropout)).init_params(rng)
    pred = None
    if supervised and cfg.use_predictor:
        pred = nn.MLP(predictor_layers(cfg, dropout)).init_params(rng)
    return ae, pred, len(cfg.encoder_hidden) + 1


def pretrain(ae: nn.MLP, pred: Optional[nn.MLP], latent_layer: int, X, y,
             epochs_a: int, epochs_p: int, batch: int, lr: float, seed: int):
    """Train the autoencoder, then the predictor on the learned latent codes."""
    dropout_on = any(l.dropout_rate > 0 for l in ae.layers)
    nn.train(ae, X, None, nn.TrainConfig(epochs_a, batch, None, dropout_on, seed, lr))
    if pred is not None:
        Z = nn.forward(ae, X, nn.Mode.EVAL, upto=latent_layer)
        nn.train(pred, Z, y, nn.TrainConfig(epochs_p, batch, None, dropout_on, seed + 1, lr))


@dataclass
class ExperimentRecord:
    metrics: metrics.MetricsRecord
    reports: list
    errors_ae: np.ndarray
    errors_pred: Optional[np.ndarray] = None
    model: Optional[ClearModel] = None


def evaluate(model: ClearModel, seen: Dataset, evaluation: Dataset, warm_up: Dataset,
             l1_ae=None, l1_pred=None, updating: bool = False) -> ExperimentRecord:
    """Fitting/prediction errors, forgetting ratios and per-sample errors of a finished model.

    Per-sample errors are squared Euclidean norms (the summands of ``mse``) over
    ``seen`` followed by ``evaluation``.
    """
    full = Dataset.concat([seen, evaluation])
    rec = model.reconstruct(full.X)
    d = full.X - rec
    err_ae = np.sum(d * d, axis=1)
    n_seen = len(seen)
    kw = dict(
        fitting_error_ae=metrics.fitting_error(rec[:n_seen], seen.X),
        prediction_error_ae=metrics.prediction_error(rec[n_seen:], evaluation.X),
        update_count_ae=model.autoencoder.update_count,
    )
    err_pred = None
    if model.predictor is not None and full.supervised:
        yhat = model.predict(full.X)
        err_pred = (full.y - yhat) ** 2
        kw.update(fitting_error_pred=metrics.fitting_error(yhat[:n_seen], seen.y),
                  prediction_error_pred=metrics.prediction_error(yhat[n_seen:], evaluation.y),
                  update_count_pred=model.predictor.update_count)
    if updating:
        l2_ae = nn.mse(model.reconstruct(warm_up.X), warm_up.X)
        kw.update(l_warmup_1_ae=l1_ae, l_warmup_2_ae=l2_ae,
                  forgetting_ratio_ae=metrics.forgetting_ratio(l1_ae, l2_ae))
        if err_pred is not None:
            l2_p = nn.mse(model.predict(warm_up.X), warm_up.y)
            kw.update(l_warmup_1_pred=l1_pred, l_warmup_2_pred=l2_p,
                      forgetting_ratio_pred=metrics.forgetting_ratio(l1_pred, l2_p))
    return ExperimentRecord(metrics.MetricsRecord(**kw), list(model.reports), err_ae, err_pred,
                            model)


def stream(model: ClearModel, data: Dataset, block: int = 256) -> None:
    """Feed ``data`` one sample at a time through score, route and update.

    Scores are computed for blocks of upcoming samples at once; a block is
    discarded and re-scored as soon as an update changes the model.
    """
    n = len(data)
    i = 0
    supervised = data.supervised and model.predictor is not None
    while i < n:
        stop = min(n, i + block)
        rec = reconstruction_errors(model, data.X[i:stop])
        pred = prediction_errors(model, data.X[i:stop], data.y[i:stop]) if supervised else None
        j = i
        while j < stop:
            y = float(data.y[j]) if supervised else None
            scores = (float(rec[j - i]), None if pred is None else float(pred[j - i]))
            ae_full, p_full = route_sample(model, data.X[j], y, scores)
            j += 1
            model.position += 1
            if ae_full:
                perform_update(model, Which.AUTOENCODER)
            if p_full:
                perform_update(model, Which.PREDICTOR)
            if ae_full or p_full:
                break
        i = j


def run_phases(cfg: EngineConfig, data: Dataset) -> ExperimentRecord:
    """Warm-up training, streamed update phase and evaluation of one instance."""
    if len(data) < sum(cfg.phases):
        raise ConfigurationError(f"dataset has {len(data)} samples, phases need {sum(cfg.phases)}")
    split = split_phases(data, cfg.phases)
    warm = split.warm_up
    drop = cfg.dropout
    ae, pred, latent_layer = build_networks(data.dims, cfg, data.supervised, drop)
    pretrain(ae, pred, latent_layer, warm.X, warm.y, cfg.epochs_a_1, cfg.epochs_p_1,
             cfg.batch_1, cfg.lr, cfg.seed)

    def sub(net, alpha, capacity, lam):
        cons = continual.ConsolidationState(net.n_params, cfg.gamma, lam, cfg.ewc_rule)
        return SubModel(net, ThresholdState(alpha, 0.0), BufferPair(capacity), cons)

    model = ClearModel(
        sub(ae, cfg.alpha_a, cfg.capacity_a, cfg.lambda_a), latent_layer,
        None if pred is None else sub(pred, cfg.alpha_p, cfg.capacity_p, cfg.lambda_p),
        cfg.strategy,
        UpdateSettings(cfg.epochs_a_2, cfg.epochs_p_2, cfg.batch_2, cfg.patience, cfg.lr,
                       cfg.warn_ratio, cfg.seed))
    subs = [(Which.AUTOENCODER, warm.X, None)]
    if pred is not None:
        subs.append((Which.PREDICTOR, warm.X, warm.y))
    for which, X, y in subs:
        reestimate_threshold(model, which, (X, y))
        if cfg.strategy is Strategy.ONLINE_EWC and cfg.consolidate_warmup:
            s = model.sub(which)
            f = continual.estimate_fisher_diagonal(s.net, *_training_arrays(model, which, X, y))
            s.consolidation = continual.consolidate(s.consolidation, f, s.net.params)

    l1_ae = nn.mse(model.reconstruct(warm.X), warm.X)
    l1_pred = nn.mse(model.predict(warm.X), warm.y) if pred is not None else None

    if cfg.strategy is not Strategy.NONE:
        stream(model, split.update)
    seen = Dataset.concat([warm, split.update])
    return evaluate(model, seen, split.evaluation, warm, l1_ae, l1_pred,
                    updating=cfg.strategy is not Strategy.NONE)
