# -*- coding: utf-8 -*-

"""data.py: Utterances, dataset loading, preprocessing (scrub, L2 normalization, padding), splits and synthetic data with a known informative modality."""

import dataclasses
import logging
import os

import numpy as np

from . import dataformat
from .exceptions import ConfigError, DataError


logger = logging.getLogger(__name__)

DEFAULT_DIMS = {'text': 768, 'audio': 74, 'video': 35}
LABEL_BOUND = 3.0


@dataclasses.dataclass
class Utterance():
    """One aligned sample; audio/video are None when the modality is absent"""
    id: str
    label: float
    text: np.ndarray
    audio: np.ndarray = None
    video: np.ndarray = None
    oracle: str = None  # informative modality of synthetic samples

    def has(self, modality):
        return getattr(self, modality) is not None


@dataclasses.dataclass
class Batch():
    """Padded, masked and preprocessed mini-batch"""
    text: np.ndarray
    audio: np.ndarray
    audio_mask: np.ndarray
    video: np.ndarray
    video_mask: np.ndarray
    labels: np.ndarray
    ids: list
    oracle: list

    def __len__(self):
        return len(self.ids)


class Splits(dict):
    """Dictionary split name -> list of utterances, with loading statistics"""

    def __init__(self, splits=None, dims=None, dropped=None):
        """Instance initialization"""
        super().__init__(splits or dict())
        self.dims = dict(dims or DEFAULT_DIMS)
        self.dropped = dict(dropped or dict())

    @property
    def n_dropped(self):
        return sum(self.dropped.values())


def scrub(x):
    """Replaces NaN and infinite values with zeros"""
    x = np.asarray(x, dtype=np.float64)
    return np.where(np.isfinite(x), x, 0.0)


def l2_normalize(frames, enabled=True, eps=1e-12):
    """Divides every frame by its Euclidean norm; frames with norm <= eps stay unchanged"""
    frames = np.asarray(frames, dtype=np.float64)
    if not enabled:
        return frames
    norms = np.linalg.norm(frames, axis=-1, keepdims=True)
    return np.where(norms > eps, frames / np.where(norms > eps, norms, 1.0), frames)


def _check_label(label):
    if not np.isfinite(label) or abs(label) > LABEL_BOUND:
        raise ValueError(f'label [{label}] out of range [-3, 3]')


def load_dataset(path):
    """Loads all splits listed in the manifest; records missing a modality are dropped and counted"""
    manifest = dataformat.read_manifest(path)
    dims = manifest['dims']
    splits = Splits(dims=dims)
    for name, filename in sorted(manifest['splits'].items()):
        filename = os.path.join(path, filename)
        utterances, dropped = [], 0
        for index, record in enumerate(dataformat.read_split(filename, dims, manifest['encoding'])):
            try:
                _check_label(record['label'])
            except ValueError as e:
                raise DataError(f'Rejected record ({e})', filename=filename, record=record['id']) from None
            if record['audio'] is None or record['video'] is None:
                logger.debug(f'Dropping record [{record["id"]}] with missing modality')
                dropped += 1
                continue
            utterances.append(Utterance(**record))
        if dropped:
            logger.warning(f'Dropped [{dropped}] records with missing modalities from split [{name}]')
        splits[name] = utterances
        splits.dropped[name] = dropped
        logger.info(f'Loaded split [{name}] with [{len(utterances)}] utterances')
    return splits


def save_dataset(splits, path, encoding='jsonl', extra=None):
    """Writes the manifest and one file per split"""
    if encoding not in dataformat.ENCODINGS:
        raise ConfigError(f'unknown dataset encoding [{encoding}]')
    os.makedirs(path, exist_ok=True)
    dims = getattr(splits, 'dims', DEFAULT_DIMS)
    manifest = dataformat.write_manifest(path, dims, encoding=encoding, extra=extra)
    for name in dataformat.SPLIT_NAMES:
        filename = os.path.join(path, manifest['splits'][name])
        dataformat.write_split(filename, splits.get(name, []), encoding)
    logger.info(f'Dataset written to [{path}]')
    return manifest


def _pad(sequences, width, l2_norm):
    """Scrubs, optionally normalizes and zero-pads a list of frame arrays"""
    lengths = [len(frames) for frames in sequences]
    padded = np.zeros((len(sequences), max(lengths), width))
    mask = np.zeros((len(sequences), max(lengths)), dtype=bool)
    for i, frames in enumerate(sequences):
        padded[i, :lengths[i]] = l2_normalize(scrub(frames), enabled=l2_norm)
        mask[i, :lengths[i]] = True
    return padded, mask


def collate(samples, l2_norm=True):
    """Builds a padded and masked batch, keeping the sample order"""
    if not samples:
        raise DataError('Cannot collate an empty list of samples')
    text = np.stack([scrub(sample.text) for sample in samples])
    sequences = dict()
    for modality in ('audio', 'video'):
        present = [sample.has(modality) for sample in samples]
        if not any(present):
            sequences[modality] = (None, None)
            continue
        if not all(present):
            raise DataError(f'Batch mixes samples with and without [{modality}]')
        width = np.asarray(getattr(samples[0], modality)).shape[1]
        sequences[modality] = _pad([getattr(sample, modality) for sample in samples], width, l2_norm)
    return Batch(
        text=text,
        audio=sequences['audio'][0], audio_mask=sequences['audio'][1],
        video=sequences['video'][0], video_mask=sequences['video'][1],
        labels=np.array([float(sample.label) for sample in samples]),
        ids=[sample.id for sample in samples],
        oracle=[sample.oracle for sample in samples],
    )


def iter_batches(split, batch_size, rng=None, l2_norm=True):
    """Yields collated batches; shuffled when a random generator is given; the last batch may be smaller"""
    order = rng.permutation(len(split)) if rng is not None else np.arange(len(split))
    for start in range(0, len(split), batch_size):
        yield collate([split[i] for i in order[start:start + batch_size]], l2_norm=l2_norm)


def drop_modality(split, which):
    """Returns a view of the split without the given modality (None for no change)"""
    if which in (None, 'none'):
        return list(split)
    if which == 'text':
        raise ConfigError('text is the anchor modality and cannot be dropped')
    if which not in ('audio', 'video'):
        raise ConfigError(f'unknown modality [{which}]')
    return [dataclasses.replace(utterance, **{which: None}) for utterance in split]


def zero_modality(split, which, width):
    """Returns a view of the split where the modality is replaced by one zero frame"""
    if which == 'text':
        raise ConfigError('text is the anchor modality and cannot be zeroed')
    return [dataclasses.replace(utterance, **{which: np.zeros((1, width))}) for utterance in split]


def apply_modality_set(splits, modalities, policy='reduce_gate'):
    """Restricts all splits to the modality set, dropping or zeroing the missing modalities"""
    if 'text' not in modalities:
        raise ConfigError('text modality is required')
    if policy not in ('reduce_gate', 'zero_input'):
        raise ConfigError(f'unknown missing-modality policy [{policy}]')
    result = Splits(dims=splits.dims, dropped=splits.dropped)
    for name, split in splits.items():
        for modality in ('audio', 'video'):
            if modality not in modalities:
                if policy == 'reduce_gate':
                    split = drop_modality(split, modality)
                else:
                    split = zero_modality(split, modality, splits.dims[modality])
        result[name] = split
    return result


def add_noise(split, std, rng):
    """Returns a copy of the split with Gaussian noise added to audio and video frames"""
    if std <= 0:
        return list(split)
    result = []
    for utterance in split:
        changes = dict()
        for modality in ('audio', 'video'):
            frames = getattr(utterance, modality)
            if frames is not None:
                changes[modality] = frames + rng.normal(0.0, std, size=frames.shape)
        result.append(dataclasses.replace(utterance, **changes))
    return result


@dataclasses.dataclass(frozen=True)
class SyntheticSpec():
    """Parameters of the synthetic dataset generator"""
    n_samples: int = 3000
    d_text: int = 768
    d_audio: int = 74
    d_video: int = 35
    noise_std: float = 0.3
    modality_probs: tuple = (0.34, 0.33, 0.33)
    seq_len_min: int = 1
    seq_len_max: int = 8
    split_fractions: tuple = (0.7, 0.15, 0.15)
    seed: int = 0

    def problems(self):
        """Returns a list of validation problems (empty if valid)"""
        result = []
        if self.n_samples <= 0:
            result.append('synthetic.n_samples must be positive')
        if min(self.d_text, self.d_audio, self.d_video) <= 0:
            result.append('synthetic dims must be positive')
        if self.noise_std < 0:
            result.append('synthetic.noise_std must be >= 0')
        if len(self.modality_probs) != 3 or min(self.modality_probs) < 0 or abs(sum(self.modality_probs) - 1.0) > 1e-9:
            result.append('synthetic.modality_probs must be three nonnegative values summing to 1')
        if not 1 <= self.seq_len_min <= self.seq_len_max:
            result.append('synthetic sequence length range must satisfy 1 <= min <= max')
        if len(self.split_fractions) != 3 or min(self.split_fractions) < 0 or abs(sum(self.split_fractions) - 1.0) > 1e-9:
            result.append('synthetic.split_fractions must be three nonnegative values summing to 1')
        return result

    @property
    def dims(self):
        return {'text': self.d_text, 'audio': self.d_audio, 'video': self.d_video}

    def to_dict(self):
        result = dataclasses.asdict(self)
        result['modality_probs'] = list(self.modality_probs)
        result['split_fractions'] = list(self.split_fractions)
        return result

    @classmethod
    def from_dict(cls, values):
        values = dict(values)
        for key in ('modality_probs', 'split_fractions'):
            if key in values:
                values[key] = tuple(values[key])
        return cls(**values)


def _unit(rng, width):
    direction = rng.normal(size=width)
    return direction / np.linalg.norm(direction)


def gen_synthetic(spec):
    """Generates splits where one randomly chosen modality carries the label signal

    Each utterance records its informative modality in `oracle`."""
    problems = spec.problems()
    if problems:
        raise ConfigError(problems)
    rng = np.random.default_rng(spec.seed)
    modalities = ('text', 'audio', 'video')
    directions = {m: _unit(rng, spec.dims[m]) for m in modalities}
    utterances = []
    for index in range(spec.n_samples):
        label = rng.uniform(-LABEL_BOUND, LABEL_BOUND)
        informative = modalities[rng.choice(3, p=spec.modality_probs)]
        lengths = rng.integers(spec.seq_len_min, spec.seq_len_max + 1, size=2)
        features = {
            'text': rng.normal(0.0, spec.noise_std, size=spec.d_text),
            'audio': rng.normal(0.0, spec.noise_std, size=(lengths[0], spec.d_audio)),
            'video': rng.normal(0.0, spec.noise_std, size=(lengths[1], spec.d_video)),
        }
        features[informative] = features[informative] + (label / LABEL_BOUND) * directions[informative]
        utterances.append(Utterance(id=f'synth-{index:06d}', label=label, oracle=informative, **features))
    n_train = int(round(spec.split_fractions[0] * spec.n_samples))
    n_val = int(round(spec.split_fractions[1] * spec.n_samples))
    splits = Splits({
        'train': utterances[:n_train],
        'val': utterances[n_train:n_train + n_val],
        'test': utterances[n_train + n_val:],
    }, dims=spec.dims)
    logger.info(f'Generated [{spec.n_samples}] synthetic utterances '
                f'(train [{n_train}], val [{n_val}], test [{spec.n_samples - n_train - n_val}])')
    return splits


def random_batch(dims, batch_size, length, rng, modalities=('text', 'audio', 'video')):
    """Random batch whose first sample has `length` frames per sequence and the others are shorter and padded"""
    samples = []
    for i in range(batch_size):
        frames = length if i == 0 else int(rng.integers(1, length + 1))
        features = {m: rng.normal(size=(frames, dims[m])) for m in ('audio', 'video') if m in modalities}
        samples.append(Utterance(id=f'random-{i}', label=float(rng.uniform(-LABEL_BOUND, LABEL_BOUND)),
                                 text=rng.normal(size=dims['text']), **features))
    return collate(samples, l2_norm=False)
