""" Evaluation statistics: confusion matrices, F-scores, ROC/C-statistic,
Jaccard index, binary diagnostic rates and Mann-Whitney U tests.

Every function here is pure. Undefined values (empty denominators, classes
absent from both masks) are reported as ``None`` and never defaulted.
"""
import csv
import io
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import (Any, Dict, FrozenSet, Hashable, List, Mapping, Optional,
                    Sequence, Tuple)

import numpy as np
from scipy import stats

from chd_screen import errors
from chd_screen.masks import (LabelMask, MaskSchema, StudyManifest,
                              load_mask)

MACRO = 'macro'
WEIGHTED = 'weighted'

EXACT = 'exact'
NORMAL_APPROXIMATION = 'normal-approximation'
# exact Mann-Whitney p-values for tie-free samples up to this total size
EXACT_MAX_SIZE = 12


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """ ``counts[i, j]`` is the number of samples of class ``classes[i]``
    predicted as ``classes[j]``."""
    classes: Tuple[str, ...]
    counts: np.ndarray

    def __post_init__(self) -> None:
        counts = np.array(self.counts, dtype=np.int64)
        n = len(self.classes)
        if counts.shape != (n, n):
            raise errors.ShapeMismatch(
                f'counts must be {n}x{n}, got {counts.shape}')
        if (counts < 0).any():
            raise errors.InvalidParameters('counts must be non-negative')
        counts.setflags(write=False)
        object.__setattr__(self, 'classes', tuple(self.classes))
        object.__setattr__(self, 'counts', counts)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ConfusionMatrix):
            return NotImplemented
        return (self.classes == other.classes
                and np.array_equal(self.counts, other.counts))

    def __getitem__(self, key: Tuple[str, str]) -> int:
        actual, predicted = key
        return int(self.counts[self.classes.index(actual),
                               self.classes.index(predicted)])

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def support(self) -> Dict[str, int]:
        return dict(zip(self.classes, (int(s) for s in self.counts.sum(1))))

    @property
    def overall_accuracy(self) -> Optional[float]:
        """ Trace over total."""
        if not self.total:
            return None
        return float(np.trace(self.counts)) / self.total

    @property
    def per_class_accuracy(self) -> Dict[str, Optional[float]]:
        """ Recall of each class; ``None`` for classes without samples."""
        out: Dict[str, Optional[float]] = {}
        for i, name in enumerate(self.classes):
            row = int(self.counts[i].sum())
            out[name] = int(self.counts[i, i]) / row if row else None
        return out

    @property
    def average_accuracy(self) -> Optional[float]:
        """ Mean per-class accuracy over classes with samples."""
        values = [v for v in self.per_class_accuracy.values() if v is not None]
        return float(np.mean(values)) if values else None

    def to_dict(self) -> Dict[str, Any]:
        return {
            'classes': list(self.classes),
            'counts': self.counts.tolist(),
            'total': self.total,
            'overall_accuracy': self.overall_accuracy,
            'per_class_accuracy': self.per_class_accuracy,
            'average_accuracy': self.average_accuracy,
        }


def confusion_matrix(labels: Sequence[Hashable],
                     predictions: Sequence[Hashable],
                     classes: Sequence[Hashable]) -> ConfusionMatrix:
    """
    Counts (actual, predicted) pairs.

    :param labels: actual classes
    :param predictions: predicted classes, aligned with ``labels``
    :param classes: class list fixing the matrix order
    :raises LengthMismatch: sequences differ in length
    :raises UnknownClass: a value is not in ``classes``
    """
    if len(labels) != len(predictions):
        raise errors.LengthMismatch(
            f'{len(labels)} labels vs {len(predictions)} predictions')
    index = {c: i for i, c in enumerate(classes)}
    counts = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for actual, predicted in zip(labels, predictions):
        try:
            counts[index[actual], index[predicted]] += 1
        except KeyError as exc:
            raise errors.UnknownClass(f'{exc.args[0]!r} not in {list(classes)}'
                                      ) from None
    return ConfusionMatrix(tuple(str(c) for c in classes), counts)


@dataclass(frozen=True)
class FScore:
    """ Headline F-score under ``averaging`` plus the per-class breakdown."""
    value: float
    averaging: str
    macro: float
    weighted: float
    precision: Dict[str, float]
    recall: Dict[str, float]
    f: Dict[str, float]

    def to_dict(self) -> Dict[str, Any]:
        return {
            'value': self.value,
            'averaging': self.averaging,
            'macro': self.macro,
            'weighted': self.weighted,
            'precision': dict(self.precision),
            'recall': dict(self.recall),
            'f': dict(self.f),
        }


def _ratio(numerator: float, denominator: float) -> float:
    return numerator / denominator if denominator else 0.0


def f_score(cm: ConfusionMatrix, averaging: str = MACRO) -> FScore:
    """
    Per-class F = 2PR/(P+R), zero when P+R is zero, averaged over classes.

    :param averaging: ``macro`` (unweighted mean) or ``weighted`` (by support)
    :raises EmptyMatrix: the matrix holds no samples
    """
    if averaging not in (MACRO, WEIGHTED):
        raise errors.InvalidParameters(f'unknown averaging {averaging!r}')
    if not cm.total:
        raise errors.EmptyMatrix('confusion matrix is empty')
    tp = np.diag(cm.counts).astype(np.float64)
    predicted = cm.counts.sum(axis=0)
    actual = cm.counts.sum(axis=1)
    precision: Dict[str, float] = {}
    recall: Dict[str, float] = {}
    f: Dict[str, float] = {}
    for i, name in enumerate(cm.classes):
        p = _ratio(tp[i], predicted[i])
        r = _ratio(tp[i], actual[i])
        precision[name], recall[name] = p, r
        f[name] = _ratio(2 * p * r, p + r)
    values = np.array([f[name] for name in cm.classes])
    macro = float(values.mean())
    weighted = float((values * actual).sum() / actual.sum())
    return FScore(value=macro if averaging == MACRO else weighted,
                  averaging=averaging, macro=macro, weighted=weighted,
                  precision=precision, recall=recall, f=f)


def _binary(scores: Sequence[float], labels: Sequence[Any]
            ) -> Tuple[np.ndarray, np.ndarray]:
    if len(scores) != len(labels):
        raise errors.LengthMismatch(
            f'{len(scores)} scores vs {len(labels)} labels')
    values = np.asarray(scores, dtype=np.float64)
    positive = np.asarray([bool(label) for label in labels], dtype=bool)
    if positive.all() or not positive.any():
        raise errors.SingleClass('both classes must be present')
    return values, positive


@dataclass(frozen=True)
class RocCurve:
    """ (fpr, tpr) points of a descending threshold sweep.

    The first point is (0, 0) at an infinite threshold.
    """
    fpr: Tuple[float, ...]
    tpr: Tuple[float, ...]
    thresholds: Tuple[float, ...]
    auc: float

    def to_csv(self) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator='\n')
        writer.writerow(['fpr', 'tpr', 'threshold'])
        for row in zip(self.fpr, self.tpr, self.thresholds):
            writer.writerow([repr(v) for v in row])
        return buffer.getvalue()

    def to_dict(self) -> Dict[str, Any]:
        return {'auc': self.auc, 'fpr': list(self.fpr),
                'tpr': list(self.tpr),
                'thresholds': [None if math.isinf(t) else t
                               for t in self.thresholds]}


def roc_curve(scores: Sequence[float], labels: Sequence[Any]) -> RocCurve:
    """
    Threshold sweep over the unique scores, descending.

    Tied scores share one threshold; the area is integrated with the
    trapezoidal rule.

    :param labels: truthy for positives
    :raises SingleClass: only one class present
    """
    values, positive = _binary(scores, labels)
    n_pos, n_neg = int(positive.sum()), int((~positive).sum())
    fpr, tpr, thresholds = [0.0], [0.0], [math.inf]
    for threshold in np.unique(values)[::-1]:
        called = values >= threshold
        tpr.append(int((called & positive).sum()) / n_pos)
        fpr.append(int((called & ~positive).sum()) / n_neg)
        thresholds.append(float(threshold))
    x, y = np.asarray(fpr), np.asarray(tpr)
    auc = float((np.diff(x) * (y[1:] + y[:-1]) / 2).sum())
    return RocCurve(tuple(fpr), tuple(tpr), tuple(thresholds), auc)


def c_statistic(scores: Sequence[float], labels: Sequence[Any]) -> float:
    """ (concordant pairs + ties / 2) / (n+ * n-), from midranks."""
    values, positive = _binary(scores, labels)
    n_pos, n_neg = int(positive.sum()), int((~positive).sum())
    ranks = stats.rankdata(values)
    u = ranks[positive].sum() - n_pos * (n_pos + 1) / 2
    return float(u / (n_pos * n_neg))


def jaccard_index(predicted: LabelMask,
                  truth: LabelMask) -> Dict[int, Optional[float]]:
    """
    |P ∩ T| / |P ∪ T| for every non-background label of the schema.

    A label absent from both masks maps to ``None``.

    :raises SchemaMismatch: masks use different schemas
    :raises ShapeMismatch: masks differ in size
    """
    if predicted.schema is not truth.schema:
        raise errors.SchemaMismatch(
            f'{predicted.schema.value} vs {truth.schema.value}')
    if predicted.shape != truth.shape:
        raise errors.ShapeMismatch(f'{predicted.shape} vs {truth.shape}')
    out: Dict[int, Optional[float]] = {}
    for label in range(1, truth.schema.max_code + 1):
        p, t = predicted.labels == label, truth.labels == label
        union = int(np.count_nonzero(p | t))
        out[label] = (int(np.count_nonzero(p & t)) / union) if union else None
    return out


@dataclass(frozen=True)
class JaccardTable:
    """ Mean per-structure Jaccard index over matched frames."""
    schema: MaskSchema
    mean: Dict[str, Optional[float]]
    frames: int
    per_frame: Dict[str, Dict[str, Optional[float]]] = field(
        default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {'schema': self.schema.value, 'frames': self.frames,
                'mean': dict(self.mean),
                'per_frame': {k: dict(v) for k, v in self.per_frame.items()}}


def jaccard_table(predicted: StudyManifest, labeled: StudyManifest,
                  schema: MaskSchema) -> JaccardTable:
    """
    Compares predicted and labeled masks frame by frame.

    Frames are matched by ``(study_id, frame_id)`` over the labeled frames
    that carry a mask of ``schema``; undefined values are left out of the
    means.

    :raises MissingPredictions: a labeled mask has no predicted counterpart
    """
    found: Dict[Tuple[str, str], str] = {}
    for study in predicted.studies:
        for frame in study.frames:
            if schema in frame.masks:
                found[(study.study_id, frame.frame_id)] = frame.masks[schema]
    names = {int(c): c.name for c in schema.labels if int(c)}
    collected: Dict[str, List[float]] = {name: [] for name in names.values()}
    per_frame: Dict[str, Dict[str, Optional[float]]] = {}
    missing = []
    for study in labeled.studies:
        for frame in study.frames:
            if schema not in frame.masks:
                continue
            key = (study.study_id, frame.frame_id)
            if key not in found:
                missing.append('/'.join(key))
                continue
            scores = jaccard_index(
                load_mask(predicted.resolve(found[key]), schema),
                load_mask(labeled.resolve(frame.masks[schema]), schema))
            per_frame['/'.join(key)] = {names[c]: s for c, s in scores.items()}
            for label, score in scores.items():
                if score is not None:
                    collected[names[label]].append(score)
    if missing:
        raise errors.MissingPredictions(
            f'no predicted {schema.value} mask for {", ".join(missing[:5])}'
            + (' ...' if len(missing) > 5 else ''))
    mean = {name: (float(np.mean(v)) if v else None)
            for name, v in collected.items()}
    return JaccardTable(schema, mean, len(per_frame), per_frame)


RATE_NAMES = ('sensitivity', 'specificity', 'accuracy', 'ppv', 'npv')


@dataclass(frozen=True)
class BinaryDiagnosticRates:
    """ 2x2 rates; a field is ``None`` and listed in ``undefined`` when its
    denominator is zero."""
    tp: int
    fn: int
    tn: int
    fp: int
    sensitivity: Optional[float]
    specificity: Optional[float]
    accuracy: Optional[float]
    ppv: Optional[float]
    npv: Optional[float]

    @property
    def undefined(self) -> FrozenSet[str]:
        return frozenset(n for n in RATE_NAMES if getattr(self, n) is None)

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {n: getattr(self, n) for n in RATE_NAMES}
        data.update(tp=self.tp, fn=self.fn, tn=self.tn, fp=self.fp,
                    undefined=sorted(self.undefined))
        return data


def rates_from_counts(tp: int, fn: int, tn: int,
                      fp: int) -> BinaryDiagnosticRates:
    def rate(num: int, den: int) -> Optional[float]:
        return num / den if den else None

    return BinaryDiagnosticRates(
        tp=tp, fn=fn, tn=tn, fp=fp,
        sensitivity=rate(tp, tp + fn),
        specificity=rate(tn, tn + fp),
        accuracy=rate(tp + tn, tp + fn + tn + fp),
        ppv=rate(tp, tp + fp),
        npv=rate(tn, tn + fn),
    )


def diagnostic_rates(cm: ConfusionMatrix,
                     positive: Optional[str] = None) -> BinaryDiagnosticRates:
    """
    Sensitivity, specificity, accuracy, PPV and NPV of a 2x2 matrix.

    :param positive: disease-positive class, the second class by default
    """
    if len(cm.classes) != 2:
        raise errors.ShapeMismatch(
            f'diagnostic rates need a 2x2 matrix, got {len(cm.classes)} '
            'classes')
    positive = cm.classes[1] if positive is None else positive
    if positive not in cm.classes:
        raise errors.UnknownClass(f'{positive!r} not in {list(cm.classes)}')
    negative = cm.classes[1 - cm.classes.index(positive)]
    return rates_from_counts(tp=cm[positive, positive],
                             fn=cm[positive, negative],
                             tn=cm[negative, negative],
                             fp=cm[negative, positive])


@dataclass(frozen=True)
class MwuResult:
    """ ``u_statistic`` counts pairs with a > b, ties as one half."""
    u_statistic: float
    p_two_sided: float
    method: str
    variance: float
    n_a: int
    n_b: int

    def to_dict(self) -> Dict[str, Any]:
        return {'u_statistic': self.u_statistic,
                'p_two_sided': self.p_two_sided, 'method': self.method,
                'variance': self.variance, 'n_a': self.n_a, 'n_b': self.n_b}


@lru_cache(maxsize=None)
def _u_counts(n_a: int, n_b: int) -> Tuple[int, ...]:
    """ Number of orderings giving each U in 0..n_a*n_b."""
    if n_a == 0 or n_b == 0:
        return (1,)
    # the largest value belongs to a (adds n_b) or to b (adds nothing)
    with_a = _u_counts(n_a - 1, n_b)
    with_b = _u_counts(n_a, n_b - 1)
    counts = [0] * (n_a * n_b + 1)
    for u, c in enumerate(with_a):
        counts[u + n_b] += c
    for u, c in enumerate(with_b):
        counts[u] += c
    return tuple(counts)


def exact_p_value(u: float, n_a: int, n_b: int) -> float:
    """ Two-sided p of U under the null, by enumeration."""
    counts = _u_counts(n_a, n_b)
    total = sum(counts)
    below = sum(counts[:int(math.floor(u)) + 1]) / total
    above = sum(counts[int(math.ceil(u)):]) / total
    return min(1.0, 2 * min(below, above))


def mann_whitney_u(sample_a: Sequence[float],
                   sample_b: Sequence[float]) -> MwuResult:
    """
    Mann-Whitney U test with midranks for ties.

    Exact two-sided p for tie-free samples of total size up to 12;
    otherwise the normal approximation with tie-corrected variance and
    continuity correction.

    :raises EmptySample: either sample is empty
    """
    a = np.asarray(sample_a, dtype=np.float64)
    b = np.asarray(sample_b, dtype=np.float64)
    if not len(a) or not len(b):
        raise errors.EmptySample('both samples must be non-empty')
    n_a, n_b = len(a), len(b)
    n = n_a + n_b
    pooled = np.concatenate([a, b])
    ranks = stats.rankdata(pooled)
    u = float(ranks[:n_a].sum() - n_a * (n_a + 1) / 2)
    _, ties = np.unique(pooled, return_counts=True)
    tie_term = float((ties ** 3 - ties).sum())
    variance = n_a * n_b / 12 * ((n + 1) - tie_term / (n * (n - 1)))
    if n <= EXACT_MAX_SIZE and tie_term == 0:
        return MwuResult(u, exact_p_value(u, n_a, n_b), EXACT, variance,
                         n_a, n_b)
    if variance <= 0:
        p = 1.0
    else:
        z = max(0.0, abs(u - n_a * n_b / 2) - 0.5) / math.sqrt(variance)
        p = min(1.0, 2 * float(stats.norm.sf(z)))
    p = max(p, np.finfo(np.float64).tiny)
    return MwuResult(u, p, NORMAL_APPROXIMATION, variance, n_a, n_b)


def compare_measurements(measured: Mapping[str, Sequence[Optional[float]]],
                         reference: Mapping[str, Sequence[Optional[float]]]
                         ) -> Dict[str, MwuResult]:
    """ Mann-Whitney concordance per metric shared by two tables.

    Missing values are dropped; metrics left with an empty side are skipped.
    """
    results = {}
    for metric in sorted(set(measured) & set(reference)):
        a = [v for v in measured[metric] if v is not None]
        b = [v for v in reference[metric] if v is not None]
        if a and b:
            results[metric] = mann_whitney_u(a, b)
    return results
