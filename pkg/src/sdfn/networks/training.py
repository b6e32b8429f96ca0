"""Training loops for the classifier and the segmenter."""
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from ..data_synth.transforms import AugmentRanges, augment, sample_affine
from ..metrics import UndefinedAUCError, auc_score, grouped_holdout
from ..tensor_core import AdamState, ReduceOnPlateau, Tensor, adam_step, bce_loss, no_grad
from ..tensor_core import pixelwise_ce
from .models import MiniDenseNet, MiniDenseNetConfig, MiniUNet, MiniUNetConfig


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    decay: float = 1e-5
    batch_size: int = 16
    max_epochs: int = 100
    plateau_patience: int = 5
    plateau_factor: float = 10.0
    seed: int = 0
    augment: bool = True
    val_fraction: float = 0.1

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("learning_rate, batch_size and max_epochs must be positive")
        if self.plateau_factor <= 1 or self.plateau_patience < 1:
            raise ValueError("plateau rule needs factor > 1 and patience >= 1")

    @classmethod
    def classification(cls, **kw):
        return cls(**kw)

    @classmethod
    def segmentation(cls, **kw):
        kw.setdefault("learning_rate", 1e-3)
        kw.setdefault("batch_size", 8)
        return cls(**kw)

    def replace(self, **kw):
        return replace(self, **kw)

    def to_dict(self):
        return asdict(self)


@dataclass
class Dataset:
    """In-memory training data: images (N,1,S,S), targets, group keys, ids."""
    images: np.ndarray
    targets: np.ndarray
    groups: list
    ids: list = None

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.targets = np.asarray(self.targets, dtype=np.float64)
        if self.ids is None:
            self.ids = [str(i) for i in range(len(self.images))]
        if not (len(self.images) == len(self.targets) == len(self.groups) == len(self.ids)):
            raise ValueError("images, targets, groups and ids differ in length")

    def __len__(self):
        return len(self.images)

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.images[idx], self.targets[idx], [self.groups[i] for i in idx],
                       [self.ids[i] for i in idx])


@dataclass
class TrainedModel:
    config: object
    model: object
    train_config: TrainConfig
    history: list = field(default_factory=list)
    best_epoch: int = 0
    selector: str = ""

    @property
    def best_metric(self):
        key = "val_mean_auc" if self.selector == "max_val_mean_auc" else "val_loss"
        return self.history[self.best_epoch - 1][key]


def select_checkpoint(values, mode="min"):
    """1-based epoch of the best value; the first one wins ties. NaN never wins."""
    best, best_epoch = None, 0
    for epoch, v in enumerate(values, 1):
        if v is None or (isinstance(v, float) and math.isnan(v)):
            continue
        if best is None or (v < best if mode == "min" else v > best):
            best, best_epoch = v, epoch
    return best_epoch


def split_validation(data, config):
    kept, held = grouped_holdout(data.ids, data.groups, config.val_fraction, config.seed)
    return data.subset(kept), data.subset(held)


def mean_defined_auc(probs, labels):
    vals = []
    for c in range(labels.shape[1]):
        try:
            vals.append(auc_score(probs[:, c], labels[:, c]))
        except UndefinedAUCError:
            pass
    return float(np.mean(vals)) if vals else float("nan")


def predict(model, images, batch_size=64):
    """Inference-mode outputs in batches; classifier -> probs, segmenter -> masks."""
    out = []
    with no_grad():
        for lo in range(0, len(images), batch_size):
            res = model.forward(images[lo:lo + batch_size], training=False)
            out.append(res[3].data if isinstance(res, tuple) else res.data)
    return np.concatenate(out) if out else np.empty((0,))


def _flip_batch(xb, rng):
    flips = rng.random(len(xb)) < 0.5
    xb = xb.copy()
    xb[flips] = xb[flips][..., ::-1]
    return xb


def _affine_batch(xb, yb, rng, ranges):
    xo = np.empty_like(xb)
    yo = np.empty_like(yb)
    for i in range(len(xb)):
        p = sample_affine(rng, ranges)
        img, m = augment(xb[i, 0], yb[i, 0] >= 0.5, p)
        xo[i, 0] = img
        yo[i, 0] = m
    return xo, yo


def fit_model(model, train, val, config, loss_fn, augment_fn, evaluate, selector, log=None):
    """Shared epoch loop: Adam, plateau rule, per-epoch validation, best-checkpoint restore."""
    if len(train) == 0:
        raise ValueError("empty training split")
    if len(val) == 0:
        raise ValueError("empty validation split")
    params = [t for _, t in model.parameters()]
    state = AdamState(learning_rate=config.learning_rate, decay=config.decay)
    plateau = ReduceOnPlateau(config.plateau_patience, config.plateau_factor)
    history = []
    best_state, best_epoch = None, 0
    mode = "max" if selector == "max_val_mean_auc" else "min"
    key = "val_mean_auc" if mode == "max" else "val_loss"
    for epoch in range(1, config.max_epochs + 1):
        rng = np.random.default_rng([config.seed, epoch])
        order = rng.permutation(len(train))
        total, seen = 0.0, 0
        for lo in range(0, len(order), config.batch_size):
            idx = order[lo:lo + config.batch_size]
            xb, yb = train.images[idx], train.targets[idx]
            if config.augment:
                xb, yb = augment_fn(xb, yb, rng)
            for p in params:
                p.zero_grad()
            loss = loss_fn(model, xb, yb)
            value = loss.item()
            if not math.isfinite(value):
                raise FloatingPointError(
                    f"non-finite training loss at epoch {epoch}, batch {lo // config.batch_size + 1}")
            loss.backward()
            adam_step(params, [p.grad for p in params], state)
            total += value * len(idx)
            seen += len(idx)
        record = {"epoch": epoch, "train_loss": total / seen, "learning_rate": state.learning_rate}
        record.update(evaluate(model, val))
        history.append(record)
        score = record[key]
        if select_checkpoint([h[key] for h in history], mode) == epoch:
            best_state, best_epoch = model.state_copy(), epoch
        plateau.step(record["val_loss"], state)
        if log:
            log(record)
        if not math.isfinite(score) and mode == "min":
            raise FloatingPointError(f"non-finite validation loss at epoch {epoch}")
    if best_state is None:
        best_state, best_epoch = model.state_copy(), len(history)
    model.load_state(best_state)
    return history, best_epoch


def _cls_loss(model, xb, yb):
    return bce_loss(yb, model.forward(xb, training=True)[3])


def _seg_loss(model, xb, yb):
    return pixelwise_ce(yb, model.forward(xb, training=True))


def _eval_classifier(model, val):
    probs = predict(model, val.images)
    loss = bce_loss(val.targets, Tensor(probs)).item()
    return {"val_loss": loss, "val_mean_auc": mean_defined_auc(probs, val.targets)}


def _eval_segmenter(model, val):
    probs = predict(model, val.images)
    return {"val_loss": pixelwise_ce(val.targets, Tensor(probs)).item()}


def train_classifier(data, config=None, model_config=None, validation=None, log=None):
    """Train a MiniDenseNet with BCE, flip augmentation and max-AUC checkpointing.

    Without an explicit ``validation`` set, 10% of ``data`` (grouped by
    patient) is held out.
    """
    config = config or TrainConfig.classification()
    model_config = model_config or MiniDenseNetConfig()
    train, val = (data, validation) if validation is not None else split_validation(data, config)
    model = MiniDenseNet(model_config, seed=config.seed)

    def flip(xb, yb, rng):
        return _flip_batch(xb, rng), yb

    history, best = fit_model(model, train, val, config, _cls_loss, flip, _eval_classifier,
                         "max_val_mean_auc", log)
    return TrainedModel(model_config, model, config, history, best, "max_val_mean_auc")


def train_segmenter(data, config=None, model_config=None, validation=None, log=None,
                    ranges=AugmentRanges()):
    """Train a MiniUNet with pixelwise CE, affine augmentation and min-loss checkpointing."""
    config = config or TrainConfig.segmentation()
    model_config = model_config or MiniUNetConfig()
    train, val = (data, validation) if validation is not None else split_validation(data, config)
    model = MiniUNet(model_config, seed=config.seed)

    def affine(xb, yb, rng):
        return _affine_batch(xb, yb, rng, ranges)

    history, best = fit_model(model, train, val, config, _seg_loss, affine, _eval_segmenter,
                         "min_val_loss", log)
    return TrainedModel(model_config, model, config, history, best, "min_val_loss")
