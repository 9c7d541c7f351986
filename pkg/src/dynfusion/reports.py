# -*- coding: utf-8 -*-

"""reports.py: Text artifacts of runs: CSV tables, metrics JSON, markdown tables and the ROC SVG."""

import csv
import io
import json
import logging
import math
import os

import jinja2
import numpy as np

from .dataformat import encode_nonfinite
from .metadata import FORMAT_VERSION


logger = logging.getLogger(__name__)

TABLE_COLUMNS = ('Modality', 'Embedding', 'Accuracy', 'F1-score', 'MAE', '7-Class Acc. (%)')
COMPARISON_METRICS = ('acc2', 'f1', 'mae', 'acc7', 'cc', 'auc')
LOWER_IS_BETTER = ('mae',)
EMBEDDINGS = {'text': 'BERT', 'audio': 'COVAREP', 'video': 'FACET'}
MODALITY_LABELS = {'text': 'Text', 'audio': 'Audio', 'video': 'Video'}
FUSION_LABELS = {
    'softmax3': 'Dynamic Fusion',
    'sigmoid2': 'Sigmoid Gate Fusion',
    'static_concat': 'Static Fusion',
    'fixed_mean': 'Fixed Weighted Fusion',
}

_environment = None


def get_environment():
    """Returns the template environment for the templates shipped with the package"""
    global _environment
    if _environment is None:
        _environment = jinja2.Environment(
            loader=jinja2.FileSystemLoader(os.path.join(os.path.dirname(os.path.abspath(__file__)), 'templates')),
            keep_trailing_newline=True,
            autoescape=jinja2.select_autoescape(['svg.j2']),
        )
    return _environment


def provenance(config):
    """Header values embedded in every artifact"""
    return {'format_version': FORMAT_VERSION, 'config': config}


def _comment(values):
    """Provenance as '#' comment lines preceding CSV content"""
    if values is None:
        return ''
    return ''.join(f'# {key}: {_strict_json(values[key], separators=(",", ":"))}\n'
                   for key in sorted(values))


def _number(value):
    if value is None:
        return ''
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def _csv(header, rows, meta=None):
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow(header)
    writer.writerows(rows)
    return _comment(meta) + buffer.getvalue()


def read_csv(text):
    """Parses CSV content written by this module, skipping comment lines; returns (header, rows)"""
    lines = [line for line in text.splitlines() if not line.startswith('#')]
    rows = list(csv.reader(lines))
    return rows[0], rows[1:]


def history_csv(history, meta=None):
    """One row per epoch"""
    header = ('epoch', 'train_mse', 'val_mse', 'val_mae', 'grad_norm_mean', 'stopped_early')
    rows = [[_number(getattr(record, name)) for name in header] for record in history]
    return _csv(header, rows, meta)


def roc_csv(points, meta=None):
    rows = [[_number(fpr), _number(tpr), _number(threshold)] for fpr, tpr, threshold in points]
    return _csv(('fpr', 'tpr', 'threshold'), rows, meta)


def predictions_csv(predictions, meta=None):
    rows = [[p.id, _number(p.prediction), _number(p.label)] for p in predictions]
    return _csv(('id', 'prediction', 'label'), rows, meta)


def gates_csv(predictions, gate_names, meta=None):
    """Per-sample gate weights next to the label and the informative modality (if known)"""
    header = ['id', 'label'] + [f'gate_{name}' for name in gate_names] + ['oracle']
    rows = [[p.id, _number(p.label)] + [_number(g) for g in p.gates] + [p.oracle or ''] for p in predictions]
    return _csv(header, rows, meta)


def gate_summary(predictions, gate_names):
    """Mean gate weight per modality and the mean weight given to the informative modality"""
    result = {'mean_weight': dict(), 'oracle_weight': None, 'n_oracle': 0}
    if not gate_names or not predictions:
        return result
    weights = np.array([p.gates for p in predictions], dtype=np.float64)
    for i, name in enumerate(gate_names):
        result['mean_weight'][name] = float(np.mean(weights[:, i]))
    oracle = [weights[k, gate_names.index(p.oracle)] for k, p in enumerate(predictions) if p.oracle in gate_names]
    if oracle:
        result['oracle_weight'] = float(np.mean(oracle))
        result['n_oracle'] = len(oracle)
    return result


def _strict_json(values, **kwargs):
    return json.dumps(encode_nonfinite(values), sort_keys=True, allow_nan=False, **kwargs)


def to_json(values):
    """Readable, deterministic JSON; non-finite numbers are written as strings"""
    return _strict_json(values, indent=2) + '\n'


def modality_label(modalities):
    names = [MODALITY_LABELS[m] for m in ('text', 'audio', 'video') if m in modalities]
    return 'Text only' if len(names) == 1 else ' + '.join(names)


def row_label(modalities, fusion):
    label = modality_label(modalities)
    if len(modalities) > 1:
        label += f' ({FUSION_LABELS.get(fusion, fusion)})'
    return label


def embedding_label(modalities):
    return ' + '.join(EMBEDDINGS[m] for m in ('text', 'audio', 'video') if m in modalities)


def _format(value, std=None, percent=False):
    if value is None:
        return 'n/a'
    scale, digits = (100.0, 1) if percent else (1.0, 3)
    text = f'{value * scale:.{digits}f}'
    if std is not None:
        text += f' ± {std * scale:.{digits}f}'
    return text


def table_row(modalities, fusion, aggregate):
    """Table row from aggregated (mean, std) headline metrics; aggregate None marks a failed cell"""
    cells = [row_label(modalities, fusion), embedding_label(modalities)]
    if aggregate is None:
        return cells + ['FAILED'] * 4
    cells.append(_format(*aggregate['acc2']))
    cells.append(_format(*aggregate['f1']))
    cells.append(_format(*aggregate['mae']))
    cells.append(_format(*aggregate['acc7'], percent=True))
    return cells


def _html_comment(meta):
    if meta is None:
        return ''
    return f'\n<!-- {_strict_json(meta, separators=(",", ":"))} -->\n'


def markdown_table(rows, seeds=1, meta=None):
    text = get_environment().get_template('ablation.md.j2').render(columns=TABLE_COLUMNS, rows=rows, seeds=seeds)
    return text + _html_comment(meta)


def table_csv(rows, meta=None):
    return _csv(TABLE_COLUMNS, rows, meta)


def markdown_row(report, modalities, fusion, meta=None):
    """Single evaluation as a table row in the ablation layout"""
    aggregate = {name: (value, None) for name, value in report.headline().items()}
    return markdown_table([table_row(modalities, fusion, aggregate)], meta=meta)


def comparison_summary(conditions, meta=None):
    """Static vs dynamic summary; conditions are (label, aggregate) pairs where aggregate maps metric -> (mean, std)"""
    rows = []
    for label, aggregate in conditions:
        if aggregate is None:
            rows.append({'label': label, 'cells': ['FAILED'] * len(COMPARISON_METRICS)})
        else:
            rows.append({'label': label, 'cells': [_format(*aggregate[m]) for m in COMPARISON_METRICS]})
    verdicts = []
    valid = [(label, aggregate) for label, aggregate in conditions if aggregate is not None]
    for metric in COMPARISON_METRICS:
        scored = [(aggregate[metric][0], label) for label, aggregate in valid if aggregate[metric][0] is not None]
        if len(scored) < 2:
            continue
        best = min(scored) if metric in LOWER_IS_BETTER else max(scored)
        verdicts.append(f'{metric}: best [{best[1]}] with {_format(best[0])}')
    text = get_environment().get_template('comparison.md.j2').render(
        metrics=COMPARISON_METRICS, rows=rows, verdicts=verdicts)
    return text + _html_comment(meta)


def roc_svg(points, auc, title=None, meta=None, size=360, margin=50):
    """Self-contained SVG line plot of a ROC curve with the AUC in the title"""
    if title is None:
        title = 'ROC curve'
    if auc is not None and math.isfinite(auc):
        title = f'{title} (AUC = {auc:.3f})'
    text = get_environment().get_template('roc.svg.j2').render(
        title=title, points=[(fpr, tpr) for fpr, tpr, _ in points], size=size, margin=margin,
        ticks=[0.0, 0.2, 0.4, 0.6, 0.8, 1.0], desc=_strict_json(meta) if meta is not None else None)
    return text
