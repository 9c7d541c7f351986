# -*- coding: utf-8 -*-

"""model.py: Dynamic attention fusion model with text-guided attention, gating variants and bounded regression head."""

# Weight matrices act on row vectors (x @ W), i.e. they are stored transposed
# relative to the usual W·x notation. All inputs carry a leading batch axis.

from collections import OrderedDict
import dataclasses
import logging
import math

import numpy as np

from . import dataformat
from . import tensor as T
from .exceptions import ConfigError, DataError, DimensionError


logger = logging.getLogger(__name__)

MODALITIES = ('text', 'audio', 'video')
SEQUENCE_MODALITIES = ('audio', 'video')
ENCODER_KINDS = ('linear', 'bi_recurrent')
GATE_KINDS = ('softmax3', 'sigmoid2', 'static_concat', 'fixed_mean')
OUTPUT_ACTIVATIONS = ('scaled_tanh', 'linear')
LABEL_BOUND = 3.0


@dataclasses.dataclass(frozen=True)
class ModelConfig():
    """Architecture hyperparameters"""
    d_text: int = 768
    d_audio: int = 74
    d_video: int = 35
    d_attn: int = 32
    d_hidden: int = 32
    encoder_kind: str = 'bi_recurrent'
    encoder_hidden: int = 16
    gate_kind: str = 'softmax3'
    input_dropout: float = 0.2
    output_activation: str = 'scaled_tanh'
    modalities: tuple = MODALITIES
    seed: int = 0

    def problems(self):
        """Returns a list of validation problems (empty if valid)"""
        result = []
        for field in ('d_text', 'd_audio', 'd_video', 'd_attn', 'd_hidden', 'encoder_hidden'):
            if not isinstance(getattr(self, field), int) or getattr(self, field) <= 0:
                result.append(f'model.{field} must be a positive integer, got [{getattr(self, field)}]')
        if self.encoder_kind not in ENCODER_KINDS:
            result.append(f'model.encoder_kind must be one of {ENCODER_KINDS}, got [{self.encoder_kind}]')
        if self.gate_kind not in GATE_KINDS:
            result.append(f'model.gate_kind must be one of {GATE_KINDS}, got [{self.gate_kind}]')
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            result.append(f'model.output_activation must be one of {OUTPUT_ACTIVATIONS}, got [{self.output_activation}]')
        if not 0 <= self.input_dropout < 1:
            result.append(f'model.input_dropout must be in [0, 1), got [{self.input_dropout}]')
        if 'text' not in self.modalities:
            result.append('text modality is required')
        unknown = [m for m in self.modalities if m not in MODALITIES]
        if unknown:
            result.append(f'unknown modalities {unknown}')
        return result

    def to_dict(self):
        result = dataclasses.asdict(self)
        result['modalities'] = list(self.modalities)
        return result

    @classmethod
    def from_dict(cls, values):
        values = dict(values)
        if 'modalities' in values:
            values['modalities'] = tuple(values['modalities'])
        return cls(**values)

    def input_width(self, modality):
        return getattr(self, 'd_' + modality)

    @property
    def sequence_modalities(self):
        """Audio/video modalities present in this configuration, in canonical order"""
        return tuple(m for m in SEQUENCE_MODALITIES if m in self.modalities)

    @property
    def gate_names(self):
        """Names of the gate weight components"""
        if self.gate_kind == 'softmax3' and self.sequence_modalities:
            return ('text',) + self.sequence_modalities
        if self.gate_kind == 'sigmoid2':
            return self.sequence_modalities
        return ()

    @property
    def fused_width(self):
        k = len(self.sequence_modalities)
        if self.gate_kind == 'static_concat':
            return (1 + k) * self.d_attn
        if self.gate_kind == 'sigmoid2' and k > 0:
            return 2 * self.d_attn
        return self.d_attn


class ModelParams():
    """Named, ordered set of parameter tensors"""

    def __init__(self, tensors=None):
        """Instance initialization"""
        self._tensors = OrderedDict()
        for name, value in (tensors or dict()).items():
            self.add(name, value)

    def add(self, name, value):
        """Adds a parameter"""
        value = value if isinstance(value, T.Tensor) else T.Tensor(value)
        value.requires_grad = True
        value.name = name
        self._tensors[name] = value

    def __getitem__(self, name):
        return self._tensors[name]

    def __contains__(self, name):
        return name in self._tensors

    def __iter__(self):
        return iter(self._tensors)

    def __len__(self):
        return len(self._tensors)

    def names(self):
        return list(self._tensors)

    def items(self):
        return self._tensors.items()

    def values(self):
        return self._tensors.values()

    @property
    def n_elements(self):
        return sum(p.size for p in self._tensors.values())

    def zero_grad(self):
        """Resets all gradient buffers"""
        for param in self._tensors.values():
            param.zero_grad()

    def grads(self):
        """Returns the gradients as name -> array"""
        return OrderedDict((name, p.grad if p.grad is not None else np.zeros_like(p.data))
                           for name, p in self._tensors.items())

    def state(self):
        """Returns a copy of the values as name -> array"""
        return OrderedDict((name, p.data.copy()) for name, p in self._tensors.items())

    def load_state(self, state):
        """Overwrites parameter values in place from name -> array"""
        for name, value in state.items():
            if name not in self._tensors:
                raise DimensionError(f'Unknown parameter [{name}]')
            value = np.asarray(value, dtype=np.float64)
            if value.shape != self._tensors[name].shape:
                raise DimensionError(f'Parameter [{name}] has shape {self._tensors[name].shape}, got {value.shape}')
            self._tensors[name].data[...] = value

    def copy(self):
        return ModelParams(self.state())


def _glorot(rng, fan_in, fan_out):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_params(cfg):
    """Creates the parameter set for the configuration, seeded by cfg.seed"""
    rng = np.random.default_rng(cfg.seed)
    params = ModelParams()

    def affine(prefix, fan_in, fan_out, weight='W', bias='b'):
        params.add(f'{prefix}.{weight}', _glorot(rng, fan_in, fan_out))
        params.add(f'{prefix}.{bias}', np.zeros(fan_out))

    affine('text', cfg.d_text, cfg.d_attn)
    for modality in cfg.sequence_modalities:
        d_in = cfg.input_width(modality)
        if cfg.encoder_kind == 'linear':
            affine(f'{modality}.enc', d_in, cfg.d_attn)
        else:
            hidden = cfg.encoder_hidden
            for direction in ('fwd', 'bwd'):
                prefix = f'{modality}.{direction}'
                for gate in ('z', 'r', 'n'):
                    params.add(f'{prefix}.W_{gate}', _glorot(rng, d_in, hidden))
                    params.add(f'{prefix}.U_{gate}', _glorot(rng, hidden, hidden))
                    params.add(f'{prefix}.b_{gate}', np.zeros(hidden))
            affine(f'{modality}.proj', 2 * hidden, cfg.d_attn)
        params.add(f'{modality}.attn.W', _glorot(rng, cfg.d_attn, cfg.d_attn))
    arity = len(cfg.gate_names)
    if cfg.gate_kind == 'softmax3' and arity > 1:
        affine('gate', arity * cfg.d_attn, cfg.d_hidden, 'W1', 'b1')
        affine('gate', cfg.d_hidden, arity, 'W2', 'b2')
    elif cfg.gate_kind == 'sigmoid2' and arity > 0:
        affine('gate', arity * cfg.d_attn, arity)
    affine('head', cfg.fused_width, cfg.d_hidden, 'W_h', 'b_h')
    affine('head', cfg.d_hidden, 1, 'W_out', 'b_out')
    logger.debug(f'Initialized [{len(params)}] parameter tensors with [{params.n_elements}] values')
    return params


def affine(x, weight, bias):
    """x @ W + b with the bias repeated over all leading axes of x"""
    y = T.matmul(x, weight)
    b = bias
    for extent in reversed(y.shape[:-1]):
        b = T.expand(b, 0, extent)
    return y + b


def text_project(text, weight, bias):
    """Projects the sentence embedding to the attention width"""
    if text.shape[-1] != weight.shape[0]:
        raise DimensionError(f'Text width {text.shape[-1]} does not match projection {weight.shape}')
    return affine(text, weight, bias)


def _gru_cell(x, h, params, prefix):
    """Gated recurrent cell with update and reset gates"""
    z = T.sigmoid(T.matmul(x, params[f'{prefix}.W_z']) + affine(h, params[f'{prefix}.U_z'], params[f'{prefix}.b_z']))
    r = T.sigmoid(T.matmul(x, params[f'{prefix}.W_r']) + affine(h, params[f'{prefix}.U_r'], params[f'{prefix}.b_r']))
    n = T.tanh(T.matmul(x, params[f'{prefix}.W_n']) + affine(r * h, params[f'{prefix}.U_n'], params[f'{prefix}.b_n']))
    return (1.0 - z) * n + z * h


def _run_direction(frames, mask, params, prefix, hidden, steps):
    """Runs the recurrent cell over the given time steps; padded steps keep the state"""
    batch_size = frames.shape[0]
    h = T.Tensor(np.zeros((batch_size, hidden)))
    outputs = dict()
    for step in steps:
        keep = np.repeat(mask[:, step:step + 1].astype(np.float64), hidden, axis=1)
        if not keep.any():
            outputs[step] = T.Tensor(np.zeros((batch_size, hidden)))
            continue
        h_new = _gru_cell(T.take(frames, step, axis=1), h, params, prefix)
        if keep.all():
            h = h_new
            outputs[step] = h
        else:
            h = keep * h_new + (1.0 - keep) * h
            outputs[step] = keep * h
    return outputs


def encode_sequence(frames, mask, params, modality, cfg):
    """Encodes a padded frame sequence (B x T x d_in) into B x T x d_attn"""
    mask = np.asarray(mask, dtype=bool)
    if frames.ndim != 3 or frames.shape[1] == 0:
        raise DimensionError(f'Empty or malformed [{modality}] sequence of shape {frames.shape}')
    if mask.shape != frames.shape[:2] or not mask.any(axis=1).all():
        raise DimensionError(f'Every [{modality}] sequence needs at least one unmasked frame')
    if frames.shape[2] != cfg.input_width(modality):
        raise DimensionError(f'[{modality}] frames have width {frames.shape[2]}, expected {cfg.input_width(modality)}')
    if cfg.encoder_kind == 'linear':
        return affine(frames, params[f'{modality}.enc.W'], params[f'{modality}.enc.b'])
    length = frames.shape[1]
    hidden = cfg.encoder_hidden
    forward_states = _run_direction(frames, mask, params, f'{modality}.fwd', hidden, range(length))
    backward_states = _run_direction(frames, mask, params, f'{modality}.bwd', hidden, reversed(range(length)))
    steps = [T.concat([forward_states[t], backward_states[t]], axis=1) for t in range(length)]
    return affine(T.stack(steps, axis=1), params[f'{modality}.proj.W'], params[f'{modality}.proj.b'])


def luong_attention(query, keys, weight, mask):
    """General-form Luong attention: score_i = q W s_i, masked softmax, weighted sum of the keys"""
    length, width = keys.shape[1], keys.shape[2]
    if query.shape[-1] != weight.shape[0] or weight.shape[1] != width:
        raise DimensionError(f'Attention shapes do not fit: query {query.shape}, W {weight.shape}, keys {keys.shape}')
    projected = T.matmul(query, weight)
    scores = T.reduce('sum', T.expand(projected, 1, length) * keys, axis=2)
    alpha = T.softmax(scores, mask)
    context = T.reduce('sum', T.expand(alpha, 2, width) * keys, axis=1)
    return alpha, context


def gate_softmax3(parts, params):
    """MLP gate (affine, relu, affine) over the concatenated parts followed by softmax"""
    hidden = T.relu(affine(T.concat(parts, axis=1), params['gate.W1'], params['gate.b1']))
    return T.softmax(affine(hidden, params['gate.W2'], params['gate.b2']))


def gate_sigmoid2(contexts, weight, bias):
    """Single affine layer over the concatenated attended vectors with per-component sigmoid"""
    return T.sigmoid(affine(T.concat(contexts, axis=1), weight, bias))


def _weighted_sum(weights, parts):
    width = parts[0].shape[1]
    total = None
    for i, part in enumerate(parts):
        term = T.expand(T.take(weights, i, axis=1), 1, width) * part
        total = term if total is None else total + term
    return total


def fuse(variant, text_proj, contexts, gates=None):
    """Combines the text projection with the attended context vectors"""
    parts = [text_proj] + list(contexts)
    if variant == 'softmax3':
        if len(parts) == 1:
            return text_proj
        if gates is None or gates.shape[1] != len(parts):
            raise DimensionError(f'Gate arity {None if gates is None else gates.shape[1]} does not match {len(parts)} modalities')
        return _weighted_sum(gates, parts)
    if variant == 'sigmoid2':
        if not contexts:
            return text_proj
        if gates is None or gates.shape[1] != len(contexts):
            raise DimensionError(f'Gate arity {None if gates is None else gates.shape[1]} does not match {len(contexts)} attended modalities')
        return T.concat([text_proj, _weighted_sum(gates, list(contexts))], axis=1)
    if variant == 'static_concat':
        return T.concat(parts, axis=1)
    if variant == 'fixed_mean':
        total = parts[0]
        for part in parts[1:]:
            total = total + part
        return T.scale(total, 1.0 / len(parts))
    raise ValueError(f'Unknown fusion variant [{variant}]')


def head(z, params, output_activation):
    """Hidden relu layer and scalar output, bounded to [-3, 3] for scaled_tanh"""
    if z.shape[-1] != params['head.W_h'].shape[0]:
        raise DimensionError(f'Fused width {z.shape[-1]} does not match head input {params["head.W_h"].shape}')
    hidden = T.relu(affine(z, params['head.W_h'], params['head.b_h']))
    output = T.reshape(affine(hidden, params['head.W_out'], params['head.b_out']), (z.shape[0],))
    if output_activation == 'scaled_tanh':
        return hidden, T.scale(T.tanh(output), LABEL_BOUND)
    return hidden, output


@dataclasses.dataclass
class ForwardTrace():
    """Intermediate values of one forward pass, per batch element"""
    text_proj: T.Tensor
    encoded: dict
    attention: dict
    context: dict
    gates: object
    gate_names: tuple
    fused: T.Tensor
    hidden: T.Tensor
    prediction: T.Tensor


def _dropout(values, rate, rng):
    """Inverted dropout on a constant input array"""
    keep = rng.random(values.shape) >= rate
    return values * keep / (1.0 - rate)


def forward(batch, params, cfg, mode='eval', rng=None):
    """Runs the full pipeline and returns the trace"""
    if mode not in ('train', 'eval'):
        raise ValueError(f'Unknown mode [{mode}]')
    dropping = mode == 'train' and cfg.input_dropout > 0
    if dropping and rng is None:
        raise ValueError('Train mode with dropout requires a random generator')
    text = np.asarray(batch.text, dtype=np.float64)
    if dropping:
        text = _dropout(text, cfg.input_dropout, rng)
    text_proj = text_project(T.Tensor(text), params['text.W'], params['text.b'])
    encoded, attention, context = dict(), dict(), dict()
    for modality in cfg.sequence_modalities:
        frames = getattr(batch, modality)
        mask = getattr(batch, modality + '_mask')
        if frames is None:
            raise DimensionError(f'Batch carries no [{modality}] features but the model expects them')
        frames = np.asarray(frames, dtype=np.float64)
        if dropping:
            frames = _dropout(frames, cfg.input_dropout, rng)
        encoded[modality] = encode_sequence(T.Tensor(frames), mask, params, modality, cfg)
        attention[modality], context[modality] = luong_attention(
            text_proj, encoded[modality], params[f'{modality}.attn.W'], mask)
    contexts = [context[m] for m in cfg.sequence_modalities]
    gates = None
    if cfg.gate_kind == 'softmax3' and contexts:
        gates = gate_softmax3([text_proj] + contexts, params)
    elif cfg.gate_kind == 'sigmoid2' and contexts:
        gates = gate_sigmoid2(contexts, params['gate.W'], params['gate.b'])
    fused = fuse(cfg.gate_kind, text_proj, contexts, gates)
    hidden, prediction = head(fused, params, cfg.output_activation)
    return ForwardTrace(text_proj, encoded, attention, context, gates, cfg.gate_names, fused, hidden, prediction)


class DafModel():
    """Model configuration bundled with its parameters"""

    def __init__(self, cfg, params=None):
        """Instance initialization"""
        problems = cfg.problems()
        if problems:
            raise ConfigError(problems)
        self.cfg = cfg
        self.params = params if params is not None else init_params(cfg)

    def forward(self, batch, mode='eval', rng=None):
        return forward(batch, self.params, self.cfg, mode=mode, rng=rng)

    def predict(self, batch):
        """Returns eval-mode predictions as array"""
        return self.forward(batch).prediction.numpy()

    @classmethod
    def from_checkpoint(cls, filename):
        """Restores a model from a checkpoint file; returns (model, header)"""
        header, values = dataformat.load_checkpoint(filename)
        try:
            cfg = ModelConfig.from_dict(header['model_config'])
        except (KeyError, TypeError) as e:
            raise DataError(f'Checkpoint carries no usable model configuration ({e})', filename=filename) from None
        params = init_params(cfg)
        if set(values) != set(params.names()):
            raise DataError('Checkpoint parameters do not match its model configuration', filename=filename)
        params.load_state(values)
        return cls(cfg, params), header

    def checkpoint_bytes(self, extra=None):
        return dataformat.encode_checkpoint(self.params, self.cfg, self.cfg.seed, extra)
