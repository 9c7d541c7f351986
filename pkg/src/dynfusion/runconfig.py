# -*- coding: utf-8 -*-

"""runconfig.py: Run configuration resolved from the configuration file and command line, and the run record."""

from collections import namedtuple
import dataclasses
import logging
import os
import time

from .data import SyntheticSpec
from .exceptions import ConfigError
from .metadata import FORMAT_VERSION, RunMetadata
from .metrics import aggregate_reports
from .model import ENCODER_KINDS, MODALITIES, ModelConfig
from .training import TrainConfig


logger = logging.getLogger(__name__)

FUSION_ALIASES = {
    'softmax3': 'softmax3',
    'dynamic': 'softmax3',
    'sigmoid2': 'sigmoid2',
    'static': 'static_concat',
    'static_concat': 'static_concat',
    'fixed': 'fixed_mean',
    'fixed_mean': 'fixed_mean',
}
MISSING_POLICIES = ('reduce_gate', 'zero_input')
SPLITS = ('train', 'val', 'test')

Cell = namedtuple('Cell', ['modalities', 'fusion'])


def parse_bool(value):
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ('on', 'true', 'yes', '1'):
        return True
    if text in ('off', 'false', 'no', '0'):
        return False
    raise ValueError(f'expected on/off, got [{value}]')


def parse_int(value):
    if isinstance(value, bool):
        raise ValueError(f'expected an integer, got [{value}]')
    if isinstance(value, float) and not value.is_integer():
        raise ValueError(f'expected an integer, got [{value}]')
    return int(value)


def parse_modalities(value):
    """Modality set from 'text,audio', 'text+audio' or a list; returned in canonical order"""
    if isinstance(value, str):
        value = value.replace('+', ',').split(',')
    names = {str(name).strip().lower() for name in value if str(name).strip()}
    unknown = sorted(names - set(MODALITIES))
    if unknown:
        raise ValueError(f'unknown modalities {unknown}')
    if 'text' not in names:
        raise ValueError('text modality is required')
    return tuple(m for m in MODALITIES if m in names)


def parse_fusion(value):
    key = str(value).strip().lower()
    if key not in FUSION_ALIASES:
        raise ValueError(f'unknown fusion [{value}], expected one of {sorted(FUSION_ALIASES)}')
    return FUSION_ALIASES[key]


def parse_seeds(value):
    """Seeds from an integer, a list or a string like '0,1,2' or '0-4'"""
    if isinstance(value, int) and not isinstance(value, bool):
        return (value,)
    if isinstance(value, str):
        text = value.strip()
        if '-' in text[1:] and ',' not in text:
            first, last = text.split('-', 1)
            return tuple(range(int(first), int(last) + 1))
        value = [part for part in text.split(',') if part.strip()]
    seeds = tuple(parse_int(seed) for seed in value)
    if not seeds:
        raise ValueError('at least one seed is required')
    return seeds


def _list(value):
    return value.split(',') if isinstance(value, str) else value


def parse_lengths(value):
    return tuple(parse_int(length) for length in _list(value))


def parse_fusions(value):
    return tuple(parse_fusion(fusion) for fusion in _list(value))


def parse_matrix(value, fusion):
    """Ablation cells from a preset name or a list of 'modalities[:fusion]' entries"""
    if isinstance(value, str):
        if value == 'table1':
            return tuple(Cell(m, fusion) for m in (('text',), ('text', 'audio'), ('text', 'video'), MODALITIES))
        if value == 'fusion':
            return (Cell(MODALITIES, 'softmax3'), Cell(MODALITIES, 'static_concat'))
        if value == 'full':
            return parse_matrix('table1', fusion) + (Cell(MODALITIES, 'static_concat'), Cell(MODALITIES, 'fixed_mean'))
        value = [entry for entry in value.split(';') if entry.strip()]
    cells = []
    for entry in value:
        if isinstance(entry, dict):
            cells.append(Cell(parse_modalities(entry.get('modalities', MODALITIES)),
                              parse_fusion(entry.get('fusion', fusion))))
        else:
            modalities, _, cell_fusion = str(entry).partition(':')
            cells.append(Cell(parse_modalities(modalities), parse_fusion(cell_fusion or fusion)))
    if not cells:
        raise ValueError('the ablation matrix is empty')
    return tuple(cells)


def _writable(path):
    """True if the directory exists writable or could be created"""
    path = os.path.abspath(path)
    while not os.path.exists(path):
        parent = os.path.dirname(path)
        if parent == path:
            return False
        path = parent
    return os.path.isdir(path) and os.access(path, os.W_OK)


@dataclasses.dataclass(frozen=True)
class GradCheckConfig():
    """Tiny model dimensions and settings for the gradient check suite"""
    d_text: int = 4
    d_audio: int = 3
    d_video: int = 2
    d_attn: int = 3
    d_hidden: int = 3
    encoder_hidden: int = 2
    encoder_kind: str = 'bi_recurrent'
    batch_size: int = 2
    lengths: tuple = (1, 3, 7)
    seeds: tuple = (0, 1, 2, 3, 4)
    fusions: tuple = ('softmax3', 'sigmoid2', 'static_concat', 'fixed_mean')
    tol: float = 1e-4
    step: float = 1e-5
    max_elements: int = 0  # 0 checks every element; otherwise sampled elements per tensor and configuration

    def problems(self):
        result = []
        for field in ('d_text', 'd_audio', 'd_video', 'd_attn', 'd_hidden', 'encoder_hidden', 'batch_size'):
            if getattr(self, field) <= 0:
                result.append(f'gradcheck.{field} must be positive')
        if self.encoder_kind not in ENCODER_KINDS:
            result.append(f'gradcheck.encoder_kind must be one of {ENCODER_KINDS}')
        if not self.lengths or min(self.lengths) < 1:
            result.append('gradcheck.lengths must be positive sequence lengths')
        if not self.seeds:
            result.append('gradcheck.seeds must not be empty')
        if self.tol < 0 or self.step <= 0:
            result.append('gradcheck.tol must be >= 0 and gradcheck.step > 0')
        return result

    def model_config(self, fusion, seed):
        return ModelConfig(d_text=self.d_text, d_audio=self.d_audio, d_video=self.d_video, d_attn=self.d_attn,
                           d_hidden=self.d_hidden, encoder_kind=self.encoder_kind, encoder_hidden=self.encoder_hidden,
                           gate_kind=fusion, input_dropout=0.0, seed=seed)

    def to_dict(self):
        result = dataclasses.asdict(self)
        for key in ('lengths', 'seeds', 'fusions'):
            result[key] = list(result[key])
        return result


@dataclasses.dataclass(frozen=True)
class RunConfig():
    """Everything a command needs, with all defaults materialized"""
    data_path: str
    synthetic: SyntheticSpec
    l2_norm: bool
    model: ModelConfig
    train: TrainConfig
    modalities: tuple
    fusion: str
    missing_policy: str
    out: str
    seeds: tuple
    workers: int
    matrix: tuple
    split: str
    noise_std: float
    gradcheck: GradCheckConfig

    @classmethod
    def from_config(cls, cfg):
        """Resolves a Configuration; raises one ConfigError listing every problem"""
        problems = []

        def item(name, default, convert=None):
            raw = cfg.get_item(name, default)
            if convert is None:
                convert = _converter(default)
            try:
                return convert(raw)
            except (TypeError, ValueError) as e:
                problems.append(f'{name}: {e}')
                return default

        data_path = item('data.path', '', str) or None
        synthetic_values = dict()
        for field in dataclasses.fields(SyntheticSpec):
            synthetic_values[field.name] = item(f'data.synthetic.{field.name}', field.default, _converter(field.default))
        synthetic = SyntheticSpec(**synthetic_values) if data_path is None else None
        if synthetic is not None:
            problems.extend(synthetic.problems())
        l2_norm = item('data.l2_norm', data_path is not None, parse_bool)

        fusion = item('run.fusion', cfg.get_item('model.gate_kind', 'softmax3'), parse_fusion)
        modalities = item('run.modalities', MODALITIES, parse_modalities)
        model_values = dict()
        for field in dataclasses.fields(ModelConfig):
            if field.name in ('modalities', 'gate_kind', 'seed'):
                continue
            default = field.default
            if synthetic is not None and field.name in ('d_text', 'd_audio', 'd_video'):
                default = getattr(synthetic, field.name)
            model_values[field.name] = item(f'model.{field.name}', default, _converter(field.default))
        model = ModelConfig(gate_kind=fusion, modalities=modalities, **model_values)
        problems.extend(model.problems())

        train_values = dict()
        for field in dataclasses.fields(TrainConfig):
            if field.name in ('l2_norm', 'seed'):
                continue
            train_values[field.name] = item(f'train.{field.name}', field.default, _converter(field.default))
        if cfg.get_item('train.patience') is None and isinstance(train_values['max_epochs'], int):
            train_values['patience'] = max(1, min(train_values['patience'], train_values['max_epochs']))
        train = TrainConfig(l2_norm=l2_norm, **train_values)
        problems.extend(train.problems())

        missing_policy = item('run.missing_policy', 'reduce_gate', str)
        if missing_policy not in MISSING_POLICIES:
            problems.append(f'run.missing_policy must be one of {MISSING_POLICIES}, got [{missing_policy}]')
        out = item('run.out', 'runs', str)
        if not _writable(out):
            problems.append(f'run.out [{out}] is not a writable directory')
        seeds = item('run.seeds', (0,), parse_seeds)
        workers = item('run.workers', 1, parse_int)
        if workers < 1:
            problems.append('run.workers must be at least 1')
        matrix = item('run.matrix', 'table1', lambda value: parse_matrix(value, fusion))
        split = item('run.split', 'test', str)
        if split not in SPLITS:
            problems.append(f'run.split must be one of {SPLITS}, got [{split}]')
        noise_std = item('run.noise_std', 0.0, float)
        if noise_std < 0:
            problems.append('run.noise_std must be >= 0')

        gradcheck_values = dict()
        for field in dataclasses.fields(GradCheckConfig):
            default = field.default
            convert = {'seeds': parse_seeds, 'lengths': parse_lengths, 'fusions': parse_fusions}.get(
                field.name, _converter(default))
            gradcheck_values[field.name] = item(f'gradcheck.{field.name}', default, convert)
        gradcheck = GradCheckConfig(**gradcheck_values)
        problems.extend(gradcheck.problems())

        if problems:
            raise ConfigError(problems)
        return cls(data_path, synthetic, l2_norm, model, train, modalities, fusion, missing_policy, out, seeds,
                   workers, matrix, split, noise_std, gradcheck)

    def with_dims(self, dims):
        """Copy whose model input widths follow the dataset"""
        model = dataclasses.replace(self.model, d_text=dims['text'], d_audio=dims['audio'], d_video=dims['video'])
        return dataclasses.replace(self, model=model)

    def model_config(self, modalities=None, fusion=None, seed=0):
        """Model configuration of one cell; the zero_input policy keeps all modalities in the model"""
        modalities = self.modalities if modalities is None else modalities
        if self.missing_policy == 'zero_input':
            modalities = MODALITIES
        return dataclasses.replace(self.model, modalities=tuple(modalities),
                                   gate_kind=self.fusion if fusion is None else fusion, seed=seed)

    def train_config(self, seed):
        return dataclasses.replace(self.train, seed=seed)

    def to_dict(self, include_location=True):
        """Resolved configuration; without location the values only depend on what determines results"""
        result = {
            'data': {
                'path': self.data_path,
                'l2_norm': self.l2_norm,
                'synthetic': self.synthetic.to_dict() if self.synthetic is not None else None,
            },
            'model': self.model.to_dict(),
            'train': self.train.to_dict(),
            'run': {
                'modalities': list(self.modalities),
                'fusion': self.fusion,
                'missing_policy': self.missing_policy,
                'seeds': list(self.seeds),
                'matrix': [{'modalities': list(cell.modalities), 'fusion': cell.fusion} for cell in self.matrix],
                'split': self.split,
                'noise_std': self.noise_std,
            },
            'gradcheck': self.gradcheck.to_dict(),
        }
        for section in ('model', 'train'):
            del result[section]['seed']
        if include_location:
            result['run']['out'] = self.out
            result['run']['workers'] = self.workers
        else:
            result['data']['path'] = None if self.data_path is None else os.path.basename(os.path.normpath(self.data_path))
        return result


def _converter(default):
    if isinstance(default, bool):
        return parse_bool
    if isinstance(default, int):
        return parse_int
    if isinstance(default, float):
        return float
    if isinstance(default, tuple):
        return lambda value: tuple(float(v) for v in _list(value))
    return str


class RunRecord():
    """Everything a run produced that is needed to interpret or reproduce it"""

    def __init__(self, command, config, metadata=None):
        """Instance initialization"""
        self.command = command
        self.config = config
        self.metadata = metadata or RunMetadata()
        self.seeds = []
        self.reports = []
        self.cells = []
        self.extra = dict()
        self._started = time.monotonic()
        self.wall_clock = None

    def add_seed(self, entry, report=None):
        self.seeds.append(entry)
        if report is not None:
            self.reports.append(report)

    def add_cell(self, entry):
        self.cells.append(entry)

    def finish(self):
        self.wall_clock = time.monotonic() - self._started
        logger.info(f'Run [{self.metadata.run_id}] finished after [{self.wall_clock:.1f}] s')
        return self

    def to_dict(self):
        result = {
            'format_version': FORMAT_VERSION,
            'command': self.command,
            'metadata': self.metadata.to_dict(),
            'config': self.config,
            'wall_clock_seconds': self.wall_clock,
        }
        if self.seeds:
            result['seeds'] = self.seeds
            result['aggregate'] = aggregate_dict(self.reports)
        if self.cells:
            result['cells'] = self.cells
        result.update(self.extra)
        return result


def aggregate_dict(reports):
    """Aggregated headline metrics as name -> {'mean', 'std'}"""
    if not reports:
        return dict()
    return {name: {'mean': mean, 'std': std} for name, (mean, std) in aggregate_reports(reports).items()}
