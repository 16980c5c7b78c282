""" Composite diagnostic score over the five screening views.

Per-frame abnormality probabilities are averaged per view and thresholded
into a five-bit study vector (3VT, 3VV, A5C, A4C, ABDO). Views whose
C-statistic beats a cutoff are kept, and a study is called CHD when the
Manhattan distance of its kept bits from the all-normal origin reaches the
score threshold.
"""
import enum
import logging
from dataclasses import dataclass, field
from typing import (Any, Dict, FrozenSet, List, Mapping, Optional, Sequence,
                    Tuple, Union)

import numpy as np

from chd_screen import errors, evaluation
from chd_screen.masks import LesionClass, StudyManifest, ViewLabel

logger = logging.getLogger(__name__)

NORMAL = 'normal'
CHD = 'chd'
DECISION_CLASSES = (NORMAL, CHD)

BIT_THRESHOLD = 0.5
C_STAT_CUTOFF = 0.60
SCORE_THRESHOLD = 2


class DiagnosticTask(enum.Enum):
    NORMAL_VS_TOF = 'tof'
    NORMAL_VS_HLHS = 'hlhs'
    NORMAL_VS_EITHER = 'either'

    @property
    def lesions(self) -> FrozenSet[LesionClass]:
        """ Lesion classes counted as positive."""
        if self is DiagnosticTask.NORMAL_VS_TOF:
            return frozenset({LesionClass.TOF})
        if self is DiagnosticTask.NORMAL_VS_HLHS:
            return frozenset({LesionClass.HLHS})
        return frozenset({LesionClass.TOF, LesionClass.HLHS})

    def covers(self, lesion: LesionClass) -> bool:
        """ Whether studies of ``lesion`` take part in the task."""
        return lesion is LesionClass.NORMAL or lesion in self.lesions

    def is_positive(self, lesion: LesionClass) -> bool:
        return lesion in self.lesions


@dataclass(frozen=True)
class ViewPredictionSet:
    """ Per-frame abnormality probabilities of one study, grouped by view.

    Views without frames are missing.
    """
    study_id: str
    task: DiagnosticTask
    frames: Mapping[ViewLabel, Tuple[float, ...]] = field(
        default_factory=dict)

    def __post_init__(self) -> None:
        frames = {view: tuple(float(p) for p in self.frames.get(view, ()))
                  for view in ViewLabel}
        for view, values in frames.items():
            bad = [p for p in values if not 0 <= p <= 1]
            if bad:
                raise errors.ProbabilityOutOfRange(
                    f'{self.study_id}/{view.code}: {bad[0]!r}')
        object.__setattr__(self, 'frames', frames)

    @property
    def missing(self) -> FrozenSet[ViewLabel]:
        return frozenset(v for v in ViewLabel if not self.frames[v])


@dataclass(frozen=True)
class StudyBitstring:
    """ Per-view abnormality bits in ``ViewLabel`` order."""
    bits: Tuple[int, ...]
    means: Tuple[Optional[float], ...]
    missing: Tuple[bool, ...]

    def __post_init__(self) -> None:
        n = len(ViewLabel)
        if not len(self.bits) == len(self.means) == len(self.missing) == n:
            raise errors.InvalidParameters(f'bitstring must have {n} views')
        if any(b not in (0, 1) for b in self.bits):
            raise errors.InvalidParameters(f'bits must be 0 or 1: {self.bits}')

    @classmethod
    def from_bits(cls, bits: Union[str, Sequence[int]]) -> 'StudyBitstring':
        """ Bitstring without probabilities, e.g. ``from_bits('11100')``."""
        values = tuple(int(b) for b in bits)
        return cls(values, (None,) * len(values), (False,) * len(values))

    def __str__(self) -> str:
        return ''.join(str(b) for b in self.bits)

    def bit(self, view: ViewLabel) -> int:
        return self.bits[view]

    @property
    def all_missing(self) -> bool:
        return all(self.missing)


@dataclass(frozen=True)
class CompositeDecision:
    selected: Tuple[ViewLabel, ...]
    score: int
    threshold: int
    decision: str
    low_confidence: bool = False

    @property
    def is_chd(self) -> bool:
        return self.decision == CHD


def aggregate_views(predictions: ViewPredictionSet,
                    bit_threshold: float = BIT_THRESHOLD) -> StudyBitstring:
    """
    Averages frame probabilities per view and thresholds the means.

    A view's bit is 1 iff its mean is at least ``bit_threshold``; missing
    views get bit 0 and a missing flag.

    :raises NoPredictions: every view is missing
    """
    if len(predictions.missing) == len(ViewLabel):
        raise errors.NoPredictions(
            f'{predictions.study_id}: no frame predictions')
    bits: List[int] = []
    means: List[Optional[float]] = []
    missing: List[bool] = []
    for view in ViewLabel:
        values = predictions.frames[view]
        if not values:
            bits.append(0)
            means.append(None)
            missing.append(True)
            continue
        mean = float(np.mean(values))
        bits.append(int(mean >= bit_threshold))
        means.append(mean)
        missing.append(False)
    return StudyBitstring(tuple(bits), tuple(means), tuple(missing))


CStats = Mapping[ViewLabel, Optional[float]]
CStatsLike = Union[CStats, Sequence[Optional[float]]]


def _as_c_stats(c_stats: CStatsLike
                ) -> Dict[ViewLabel, Optional[float]]:
    if isinstance(c_stats, Mapping):
        return {view: c_stats.get(view) for view in ViewLabel}
    values = list(c_stats)
    if len(values) != len(ViewLabel):
        raise errors.InvalidParameters(
            f'need {len(ViewLabel)} C-statistics, got {len(values)}')
    return dict(zip(ViewLabel, values))


def select_views(c_stats: CStatsLike,
                 cutoff: float = C_STAT_CUTOFF) -> Tuple[ViewLabel, ...]:
    """
    Views whose C-statistic is strictly above ``cutoff``, in view order.

    Views without a C-statistic are never selected.

    :raises EmptySelection: no view passes
    """
    stats = _as_c_stats(c_stats)
    for view, value in stats.items():
        if value is not None and not 0 <= value <= 1:
            raise errors.InvalidParameters(
                f'C-statistic of {view.code} out of range: {value}')
    selected = tuple(view for view, value in stats.items()
                     if value is not None and value > cutoff)
    if not selected:
        raise errors.EmptySelection(
            f'no view has a C-statistic above {cutoff}')
    return selected


def composite_score(bits: StudyBitstring, selected: Sequence[ViewLabel],
                    threshold: int = SCORE_THRESHOLD) -> CompositeDecision:
    """ Manhattan distance of the selected bits from the origin."""
    selected = tuple(sorted(set(selected)))
    score = sum(bits.bit(v) for v in selected)
    return CompositeDecision(
        selected=selected,
        score=score,
        threshold=threshold,
        decision=CHD if score >= threshold else NORMAL,
        low_confidence=bool(selected) and all(bits.missing[v]
                                              for v in selected),
    )


def _bitstring(predictions: ViewPredictionSet,
               bit_threshold: float) -> StudyBitstring:
    try:
        return aggregate_views(predictions, bit_threshold)
    except errors.NoPredictions:
        n = len(ViewLabel)
        return StudyBitstring((0,) * n, (None,) * n, (True,) * n)


def calibrate_views(predictions: Sequence[ViewPredictionSet],
                    lesions: Mapping[str, LesionClass],
                    task: DiagnosticTask) -> Dict[ViewLabel, Optional[float]]:
    """
    Per-view C-statistic of the study-level mean probability.

    A view is ``None`` when its studies don't cover both classes.
    """
    out: Dict[ViewLabel, Optional[float]] = {}
    for view in ViewLabel:
        scores, labels = [], []
        for p in predictions:
            values = p.frames[view]
            if values:
                scores.append(float(np.mean(values)))
                labels.append(task.is_positive(lesions[p.study_id]))
        try:
            out[view] = evaluation.c_statistic(scores, labels)
        except errors.SingleClass:
            out[view] = None
    return out


def calibration_split(study_ids: Sequence[str],
                      lesions: Mapping[str, LesionClass],
                      task: DiagnosticTask, fraction: float,
                      seed: int) -> Tuple[Tuple[str, ...], Tuple[str, ...]]:
    """ Seeded split into calibration and decision studies, stratified by
    lesion class so every lesion of the task is calibrated on."""
    if not 0 < fraction < 1:
        raise errors.InvalidParameters(
            f'calibration fraction must be in (0, 1), got {fraction}')
    rng = np.random.default_rng(seed)
    calibration: List[str] = []
    for lesion in LesionClass:
        group = sorted(s for s in study_ids if lesions[s] is lesion)
        order = [group[i] for i in rng.permutation(len(group))]
        calibration.extend(order[:int(round(fraction * len(group)))])
    chosen = set(calibration)
    return (tuple(sorted(chosen)),
            tuple(s for s in sorted(study_ids) if s not in chosen))


@dataclass(frozen=True)
class StudyDecision:
    study_id: str
    lesion: LesionClass
    bitstring: StudyBitstring
    decision: CompositeDecision

    def to_dict(self) -> Dict[str, Any]:
        return {
            'study_id': self.study_id,
            'lesion': self.lesion.value,
            'bitstring': str(self.bitstring),
            'means': {v.code: self.bitstring.means[v] for v in ViewLabel},
            'missing': [v.code for v in ViewLabel
                        if self.bitstring.missing[v]],
            'score': self.decision.score,
            'decision': self.decision.decision,
            'low_confidence': self.decision.low_confidence,
        }


@dataclass(frozen=True)
class TaskReport:
    task: DiagnosticTask
    c_stats: Dict[ViewLabel, Optional[float]]
    selected: Tuple[ViewLabel, ...]
    calibration_studies: Tuple[str, ...]
    decisions: Tuple[StudyDecision, ...]
    confusion: evaluation.ConfusionMatrix
    rates: evaluation.BinaryDiagnosticRates
    settings: Dict[str, Any]

    def to_dict(self) -> Dict[str, Any]:
        return {
            'task': self.task.value,
            'settings': dict(self.settings),
            'c_stats': {v.code: self.c_stats[v] for v in ViewLabel},
            'selected_views': [v.code for v in self.selected],
            'calibration_studies': list(self.calibration_studies),
            'studies': [d.to_dict() for d in self.decisions],
            'confusion_matrix': self.confusion.to_dict(),
            'rates': self.rates.to_dict(),
        }


def run_task(manifest: StudyManifest,
             predictions: Mapping[str, ViewPredictionSet],
             task: DiagnosticTask,
             c_stats: Optional[CStatsLike] = None,
             bit_threshold: float = BIT_THRESHOLD,
             cutoff: float = C_STAT_CUTOFF,
             threshold: int = SCORE_THRESHOLD,
             calibration_fraction: float = 0.5,
             seed: int = 0) -> TaskReport:
    """
    Decides every study of the task and rates the decisions.

    Without ``c_stats`` the per-view C-statistics are calibrated on a
    seeded, class-stratified share of the studies, and only the remaining
    studies are decided, so view selection never sees the decided data.

    :param manifest: studies with their lesion labels
    :param predictions: per-study view predictions keyed by study id
    :param task: which lesions count as positive
    :param c_stats: per-view C-statistics from an independent source
    :raises MissingPredictions: a study of the task has no predictions
    :raises EmptySelection: no view passes the C-statistic cutoff
    """
    lesions = {s.study_id: s.lesion for s in manifest.studies}
    study_ids = [s.study_id for s in manifest.studies
                 if task.covers(s.lesion)]
    missing = sorted(s for s in study_ids if s not in predictions)
    if missing:
        raise errors.MissingPredictions(
            f'no predictions for {len(missing)} studies: '
            + ', '.join(missing[:10]) + (' ...' if len(missing) > 10 else ''))

    calibration: Tuple[str, ...] = ()
    if c_stats is None:
        calibration, decided = calibration_split(
            study_ids, lesions, task, calibration_fraction, seed)
        stats = calibrate_views([predictions[s] for s in calibration],
                                lesions, task)
    else:
        decided = tuple(sorted(study_ids))
        stats = _as_c_stats(c_stats)
    selected = select_views(stats, cutoff)
    logger.info('%s: selected views %s', task.value,
                ', '.join(v.code for v in selected))

    decisions = []
    for study_id in decided:
        bits = _bitstring(predictions[study_id], bit_threshold)
        decision = composite_score(bits, selected, threshold)
        if bits.all_missing:
            decision = CompositeDecision(decision.selected, decision.score,
                                         threshold, NORMAL, True)
        decisions.append(StudyDecision(study_id, lesions[study_id], bits,
                                       decision))
    truth = [CHD if task.is_positive(d.lesion) else NORMAL
             for d in decisions]
    called = [d.decision.decision for d in decisions]
    cm = evaluation.confusion_matrix(truth, called, DECISION_CLASSES)
    return TaskReport(
        task=task,
        c_stats=stats,
        selected=selected,
        calibration_studies=calibration,
        decisions=tuple(decisions),
        confusion=cm,
        rates=evaluation.diagnostic_rates(cm, positive=CHD),
        settings={'bit_threshold': bit_threshold, 'c_stat_cutoff': cutoff,
                  'score_threshold': threshold,
                  'calibration_fraction': (calibration_fraction
                                           if c_stats is None else None),
                  'seed': seed},
    )
