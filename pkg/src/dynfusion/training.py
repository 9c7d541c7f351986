# -*- coding: utf-8 -*-

"""training.py: MSE loss, global-norm gradient clipping, Adam, early stopping and the epoch loop."""

from collections import OrderedDict, namedtuple
import dataclasses
import logging
import math

import numpy as np

from . import data
from . import model as daf
from . import tensor as T
from .exceptions import DimensionError, NumericError


logger = logging.getLogger(__name__)


@dataclasses.dataclass(frozen=True)
class TrainConfig():
    """Optimization recipe"""
    learning_rate: float = 5e-5
    batch_size: int = 32
    max_epochs: int = 200
    patience: int = 10
    clip_max_norm: float = 4.0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    min_delta: float = 1e-6
    l2_norm: bool = True
    seed: int = 0

    def problems(self):
        """Returns a list of validation problems (empty if valid)"""
        result = []
        for field in ('learning_rate', 'batch_size', 'max_epochs', 'patience', 'clip_max_norm', 'epsilon'):
            if not getattr(self, field) > 0:
                result.append(f'train.{field} must be positive, got [{getattr(self, field)}]')
        for field in ('beta1', 'beta2'):
            if not 0 < getattr(self, field) < 1:
                result.append(f'train.{field} must be in (0, 1), got [{getattr(self, field)}]')
        if self.min_delta < 0:
            result.append('train.min_delta must be >= 0')
        if self.patience > self.max_epochs > 0:
            result.append(f'train.patience [{self.patience}] must not exceed train.max_epochs [{self.max_epochs}]')
        return result

    def to_dict(self):
        return dataclasses.asdict(self)


class OptimState():
    """Adam moment buffers and step counter"""

    def __init__(self, params):
        """Instance initialization"""
        self.m = OrderedDict((name, np.zeros_like(p.data)) for name, p in params.items())
        self.v = OrderedDict((name, np.zeros_like(p.data)) for name, p in params.items())
        self.step = 0


def mse_loss(prediction, labels):
    """Mean squared error over the batch"""
    labels = T.as_tensor(labels)
    if prediction.size == 0:
        raise DimensionError('mse_loss needs a nonempty batch')
    if prediction.shape != labels.shape:
        raise DimensionError(f'Prediction shape {prediction.shape} does not match label shape {labels.shape}')
    diff = prediction - labels
    return T.reduce('mean', diff * diff)


def clip_global_norm(grads, max_norm=4.0):
    """Scales all gradients jointly so that their global norm does not exceed max_norm; returns (grads, norm)"""
    total = 0.0
    for name, grad in grads.items():
        if not np.all(np.isfinite(grad)):
            raise NumericError(f'Non-finite gradient for parameter [{name}]')
        total += float(np.sum(grad * grad))
    norm = math.sqrt(total)
    if norm <= max_norm:
        return OrderedDict(grads), norm
    factor = max_norm / norm
    return OrderedDict((name, grad * factor) for name, grad in grads.items()), norm


def adam_step(params, grads, state, cfg):
    """Bias-corrected Adam update, applied in place"""
    step = state.step + 1
    correction1 = 1.0 - cfg.beta1 ** step
    correction2 = 1.0 - cfg.beta2 ** step
    updates = dict()
    for name, param in params.items():
        grad = grads[name]
        if grad.shape != param.shape:
            raise DimensionError(f'Gradient for [{name}] has shape {grad.shape}, expected {param.shape}')
        m = cfg.beta1 * state.m[name] + (1.0 - cfg.beta1) * grad
        v = cfg.beta2 * state.v[name] + (1.0 - cfg.beta2) * grad * grad
        update = cfg.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + cfg.epsilon)
        if not np.all(np.isfinite(update)):
            raise NumericError(f'Non-finite Adam update for parameter [{name}]')
        updates[name] = (m, v, update)
    for name, (m, v, update) in updates.items():
        state.m[name], state.v[name] = m, v
        params[name].data -= update
    state.step = step
    return state


class EarlyStopping():
    """Tracks the best validation value and keeps a snapshot of the best parameters"""

    def __init__(self, patience, min_delta=1e-6):
        """Instance initialization"""
        self.patience = patience
        self.min_delta = min_delta
        self.best_value = math.inf
        self.best_epoch = None
        self.best_state = None
        self.bad_epochs = 0
        self.stopped = False

    def update(self, epoch, value, params):
        """Registers the validation value of an epoch; returns True when training should stop"""
        if value < self.best_value - self.min_delta:
            self.best_value = value
            self.best_epoch = epoch
            self.best_state = params.state()
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs >= self.patience:
                self.stopped = True
                logger.info(f'Early stopping at epoch [{epoch}]; best epoch [{self.best_epoch}] with [{self.best_value:.6g}]')
        return self.stopped


EpochRecord = namedtuple('EpochRecord', ['epoch', 'train_mse', 'val_mse', 'val_mae', 'grad_norm_mean', 'stopped_early'])
FitResult = namedtuple('FitResult', ['params', 'history', 'best_epoch', 'best_val_mse', 'stopped_early'])
Prediction = namedtuple('Prediction', ['id', 'prediction', 'label', 'gates', 'oracle'])


def evaluate(model, split, l2_norm=True, batch_size=256):
    """Eval-mode predictions for all samples, in split order"""
    predictions = []
    for batch in data.iter_batches(split, batch_size, l2_norm=l2_norm):
        trace = model.forward(batch, mode='eval')
        values = trace.prediction.data
        gates = trace.gates.data if trace.gates is not None else np.zeros((len(batch), 0))
        for i, sample_id in enumerate(batch.ids):
            predictions.append(Prediction(sample_id, float(values[i]), float(batch.labels[i]),
                                          tuple(float(g) for g in gates[i]), batch.oracle[i]))
    return predictions


def _validation_errors(model, split, l2_norm):
    predictions = evaluate(model, split, l2_norm=l2_norm)
    errors = np.array([p.prediction - p.label for p in predictions])
    return float(np.mean(errors * errors)), float(np.mean(np.abs(errors)))


def fit(model, train, val, cfg, validate=None):
    """Trains the model in place and restores the parameters of the best validation epoch

    `validate(epoch, model)` may replace the default validation and return
    the validation MSE or a (mse, mae) pair."""
    if not train or not val:
        raise DimensionError('fit needs nonempty train and validation splits')
    shuffle_seed, dropout_seed = np.random.SeedSequence(cfg.seed).spawn(2)
    shuffle_rng = np.random.default_rng(shuffle_seed)
    dropout_rng = np.random.default_rng(dropout_seed)
    params = model.params
    state = OptimState(params)
    stopper = EarlyStopping(cfg.patience, cfg.min_delta)
    history = []
    for epoch in range(1, cfg.max_epochs + 1):
        squared_sum, count, norms = 0.0, 0, []
        for batch_index, batch in enumerate(data.iter_batches(train, cfg.batch_size, shuffle_rng, cfg.l2_norm)):
            trace = model.forward(batch, mode='train', rng=dropout_rng)
            loss = mse_loss(trace.prediction, batch.labels)
            if not math.isfinite(loss.item()):
                raise NumericError(f'Non-finite loss at epoch [{epoch}] batch [{batch_index}]')
            T.backward(loss, leaves=params.values())
            grads, norm = clip_global_norm(params.grads(), cfg.clip_max_norm)
            adam_step(params, grads, state, cfg)
            squared_sum += loss.item() * len(batch)
            count += len(batch)
            norms.append(norm)
            logger.debug(f'Epoch [{epoch}] batch [{batch_index}] loss [{loss.item():.6g}] grad norm [{norm:.4g}]')
        if validate is not None:
            result = validate(epoch, model)
            val_mse, val_mae = result if isinstance(result, tuple) else (result, math.nan)
        else:
            val_mse, val_mae = _validation_errors(model, val, cfg.l2_norm)
        if not math.isfinite(val_mse):
            raise NumericError(f'Non-finite validation loss at epoch [{epoch}]')
        stop = stopper.update(epoch, val_mse, params)
        history.append(EpochRecord(epoch, squared_sum / count, val_mse, val_mae, float(np.mean(norms)), stop))
        logger.info(f'Epoch [{epoch}] train_mse [{squared_sum / count:.5f}] val_mse [{val_mse:.5f}] val_mae [{val_mae:.5f}]')
        if stop:
            break
    params.load_state(stopper.best_state)
    return FitResult(params, history, stopper.best_epoch, stopper.best_value, stopper.stopped)


def check_model_gradients(cfg, batch, params=None, h=1e-5, tol=1e-4, max_elements=None, rng=None, grad_transform=None):
    """Gradient check of the MSE loss of the full model (dropout disabled)"""
    cfg = dataclasses.replace(cfg, input_dropout=0.0)
    params = params if params is not None else daf.init_params(cfg)

    def loss():
        return mse_loss(daf.forward(batch, params, cfg, mode='eval').prediction, batch.labels)

    return T.grad_check(loss, OrderedDict(params.items()), h=h, tol=tol, max_elements=max_elements,
                        rng=rng, grad_transform=grad_transform)
