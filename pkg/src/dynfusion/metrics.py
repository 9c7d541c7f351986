# -*- coding: utf-8 -*-

"""metrics.py: Evaluation protocol: MAE, Pearson CC, 7-class accuracy, neutral-excluded binary accuracy/F1 and ROC-AUC."""

from collections import namedtuple
import dataclasses
import logging
import math

import numpy as np

from .exceptions import MetricError


logger = logging.getLogger(__name__)

HEADLINE_METRICS = ('acc2', 'f1', 'mae', 'acc7', 'cc', 'auc')


def _pair(pred, labels):
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels, dtype=np.float64).reshape(-1)
    if pred.shape != labels.shape:
        raise MetricError(f'Predictions ({pred.size}) and labels ({labels.size}) differ in length')
    if pred.size == 0:
        raise MetricError('Metrics need at least one sample')
    return pred, labels


def mae(pred, labels):
    """Mean absolute error"""
    pred, labels = _pair(pred, labels)
    return float(np.mean(np.abs(pred - labels)))


def pearson_cc(pred, labels):
    """Pearson correlation coefficient; undefined for constant inputs"""
    pred, labels = _pair(pred, labels)
    if pred.size < 2:
        raise MetricError('Correlation needs at least two samples')
    if np.all(pred == pred[0]) or np.all(labels == labels[0]):
        raise MetricError('Correlation is undefined for constant input')
    dp = pred - pred.mean()
    dl = labels - labels.mean()
    denominator = math.sqrt(float(np.sum(dp * dp)) * float(np.sum(dl * dl)))
    if denominator == 0.0:
        raise MetricError('Correlation is undefined for constant input')
    return float(np.clip(np.sum(dp * dl) / denominator, -1.0, 1.0))


def discretize7(value):
    """Class in -3..3: clamp to [-3, 3], round half away from zero"""
    value = float(value)
    if not math.isfinite(value):
        raise MetricError(f'Cannot discretize non-finite value [{value}]')
    clamped = min(3.0, max(-3.0, value))
    return int(math.copysign(math.floor(abs(clamped) + 0.5), clamped))


def acc7(pred, labels):
    """Fraction of samples whose 7-class discretizations agree"""
    pred, labels = _pair(pred, labels)
    hits = sum(discretize7(p) == discretize7(y) for p, y in zip(pred, labels))
    return hits / pred.size


BinaryResult = namedtuple('BinaryResult', ['acc2', 'f1', 'precision', 'recall', 'n_used', 'n_neutral', 'zero_division'])


def binary_eval(pred, labels, exclude_neutral=True):
    """Positive vs negative accuracy and positive-class F1

    Neutral (label exactly 0) samples are excluded, or counted as negative
    when exclude_neutral is False. A prediction of exactly 0 counts as negative."""
    pred, labels = _pair(pred, labels)
    neutral = labels == 0
    keep = ~neutral if exclude_neutral else np.ones_like(neutral)
    if not keep.any():
        raise MetricError('All samples are neutral; binary metrics are undefined')
    pred, labels = pred[keep], labels[keep]
    ties = int(np.sum(pred == 0))
    if ties:
        logger.warning(f'[{ties}] predictions are exactly 0 and count as negative')
    actual = labels > 0
    predicted = pred > 0
    tp = int(np.sum(actual & predicted))
    fp = int(np.sum(~actual & predicted))
    fn = int(np.sum(actual & ~predicted))
    zero_division = False
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    if tp + fp == 0 or tp + fn == 0:
        zero_division = True
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    acc = float(np.mean(actual == predicted))
    return BinaryResult(acc, f1, precision, recall, int(keep.sum()), int(neutral.sum()), zero_division)


def roc_auc(scores, labels):
    """ROC points (fpr, tpr, threshold) and trapezoidal AUC over neutral-excluded samples

    Tied scores form one threshold, so the area equals P(score+ > score-) + 0.5 P(tie)."""
    scores, labels = _pair(scores, labels)
    keep = labels != 0
    scores, positive = scores[keep], labels[keep] > 0
    n_pos = int(positive.sum())
    n_neg = int((~positive).sum())
    if n_pos == 0 or n_neg == 0:
        raise MetricError(f'ROC needs both classes after neutral exclusion (positives [{n_pos}], negatives [{n_neg}], '
                          f'neutral excluded [{int((~keep).sum())}])')
    order = np.argsort(-scores, kind='mergesort')
    ranked, hits = scores[order], positive[order]
    last_of_group = np.r_[np.nonzero(np.diff(ranked))[0], ranked.size - 1]
    tp = np.r_[0, np.cumsum(hits)[last_of_group]].astype(np.int64)
    fp = np.r_[0, np.cumsum(~hits)[last_of_group]].astype(np.int64)
    thresholds = np.r_[math.inf, ranked[last_of_group]]
    doubled_area = int(np.sum((fp[1:] - fp[:-1]) * (tp[1:] + tp[:-1])))
    auc = doubled_area / (2 * n_pos * n_neg)
    points = [(float(f) / n_neg, float(t) / n_pos, float(th)) for f, t, th in zip(fp, tp, thresholds)]
    return auc, points


@dataclasses.dataclass
class MetricsReport():
    """All evaluation metrics of one prediction set; unavailable metrics are None with a reason"""
    mae: float
    cc: float
    acc7: float
    acc2: float
    f1: float
    f1_with_neutral: float
    auc: float
    roc_points: list
    n_total: int
    n_neutral_excluded: int
    unavailable: dict = dataclasses.field(default_factory=dict)

    def to_dict(self):
        result = dataclasses.asdict(self)
        result['roc_points'] = [list(point) for point in self.roc_points]
        return result

    def headline(self):
        """Returns the headline metrics as name -> value"""
        return {name: getattr(self, name) for name in HEADLINE_METRICS}


def _try(name, func, unavailable):
    try:
        return func()
    except MetricError as e:
        logger.warning(f'Metric [{name}] unavailable: {e}')
        unavailable[name] = str(e)
        return None


def full_report(predictions):
    """Computes every metric for a list of predictions (objects with .prediction and .label)"""
    if not predictions:
        raise MetricError('Cannot report on an empty prediction list')
    pred = np.array([p.prediction for p in predictions], dtype=np.float64)
    labels = np.array([p.label for p in predictions], dtype=np.float64)
    return report_from_arrays(pred, labels)


def report_from_arrays(pred, labels):
    """Computes every metric for prediction and label arrays"""
    pred, labels = _pair(pred, labels)
    unavailable = dict()
    binary = _try('acc2', lambda: binary_eval(pred, labels), unavailable)
    if binary is None:
        unavailable['f1'] = unavailable['acc2']
    binary_all = _try('f1_with_neutral', lambda: binary_eval(pred, labels, exclude_neutral=False), unavailable)
    roc = _try('auc', lambda: roc_auc(pred, labels), unavailable)
    return MetricsReport(
        mae=mae(pred, labels),
        cc=_try('cc', lambda: pearson_cc(pred, labels), unavailable),
        acc7=acc7(pred, labels),
        acc2=binary.acc2 if binary else None,
        f1=binary.f1 if binary else None,
        f1_with_neutral=binary_all.f1 if binary_all else None,
        auc=roc[0] if roc else None,
        roc_points=roc[1] if roc else [],
        n_total=int(pred.size),
        n_neutral_excluded=int(np.sum(labels == 0)),
        unavailable=unavailable,
    )


def aggregate_reports(reports):
    """Mean and sample standard deviation per headline metric across seeds (std None for one seed)"""
    result = dict()
    for name in HEADLINE_METRICS:
        values = [getattr(report, name) for report in reports if getattr(report, name) is not None]
        if not values:
            result[name] = (None, None)
        elif len(values) == 1:
            result[name] = (values[0], None)
        else:
            result[name] = (float(np.mean(values)), float(np.std(values, ddof=1)))
    return result
