""" Fetal cardiac biometrics from label masks.

Cardiothoracic ratio (CTR), cardiac axis (CA), chamber fractional area
change (FAC) and cardiac-cycle frames, plus the anatomic plausibility rule
that excludes grossly mislabeled frames from measurement.
"""
import csv
import io
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from chd_screen import errors, geometry
from chd_screen.masks import (AxisLabel, CardiothoracicLabel, ChamberLabel,
                              LabelMask, MaskSchema)

logger = logging.getLogger(__name__)

MISSING_STRUCTURE = 'missing structure'
FRAGMENTED_STRUCTURE = 'fragmented structure'
HEART_OUTSIDE_THORAX = 'heart outside thorax'
SERIES_TOO_SHORT = 'series too short'

# labels shared by the AXIS and CARDIOTHORACIC schemas
THORAX = int(AxisLabel.THORAX)
HEART = int(AxisLabel.HEART)
assert THORAX == CardiothoracicLabel.THORAX
assert HEART == CardiothoracicLabel.HEART

CHAMBERS = (ChamberLabel.LV, ChamberLabel.RV, ChamberLabel.LA, ChamberLabel.RA)
VENTRICLE_NAMES = frozenset({ChamberLabel.LV.name, ChamberLabel.RV.name})


@dataclass(frozen=True)
class MeasureConfig:
    """ Tunables of the biometric measurements."""
    min_containment: float = 0.95
    smoothing_window: int = 3
    isotropy_threshold: float = geometry.ISOTROPY_THRESHOLD
    # septum within this angle of the midline is signed anteriorly
    parallel_tolerance: float = 5.0
    min_cycle_frames: int = 6


@dataclass(frozen=True)
class AnatomyCheck:
    """ Outcome of the plausibility rule: ``reason`` is set on failure."""
    reason: Optional[str] = None

    @property
    def passed(self) -> bool:
        return self.reason is None

    def __bool__(self) -> bool:
        return self.passed


@dataclass(frozen=True)
class AreaSeries:
    """ Per-frame pixel areas of one chamber."""
    chamber: str
    areas: Tuple[float, ...]
    frame_rate: Optional[float] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, 'areas', tuple(float(a) for a in self.areas))
        if any(a < 0 for a in self.areas):
            raise errors.InvalidParameters('areas must be non-negative')

    def __len__(self) -> int:
        return len(self.areas)

    def to_csv(self) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator='\n')
        writer.writerow(['frame', 'area'])
        for index, value in enumerate(self.areas):
            writer.writerow([index, _number(value)])
        return buffer.getvalue()


@dataclass(frozen=True)
class CardiacCycle:
    systole_frames: Tuple[int, ...]
    diastole_frames: Tuple[int, ...]


@dataclass(frozen=True)
class StudyFrame:
    """ Masks of one A4C frame; any schema may be absent."""
    frame_id: str
    axis: Optional[LabelMask] = None
    cardiothoracic: Optional[LabelMask] = None
    chambers: Optional[LabelMask] = None


@dataclass(frozen=True)
class MetricValidity:
    reason: Optional[str] = None

    @property
    def passed(self) -> bool:
        return self.reason is None


@dataclass(frozen=True)
class FrameMeasurement:
    frame_id: str
    ctr: Optional[float] = None
    ca_degrees: Optional[float] = None
    excluded: Optional[str] = None


@dataclass(frozen=True)
class BiometricReport:
    """ Study-level biometrics; invalid metrics carry a reason, no value."""
    ctr: Optional[float]
    ca_degrees: Optional[float]
    fac: Dict[str, Optional[float]]
    systole_frames: Tuple[int, ...]
    diastole_frames: Tuple[int, ...]
    validity: Dict[str, MetricValidity]
    frames: Tuple[FrameMeasurement, ...] = ()
    area_series: Tuple[AreaSeries, ...] = field(default=())

    @property
    def exclusions(self) -> Dict[str, str]:
        """ Frames left out of CTR/CA averaging, with reasons."""
        return {f.frame_id: f.excluded for f in self.frames
                if f.excluded is not None}

    def to_dict(self) -> Dict[str, Any]:
        return {
            'ctr': self.ctr,
            'ca_degrees': self.ca_degrees,
            'fac': dict(self.fac),
            'systole_frames': list(self.systole_frames),
            'diastole_frames': list(self.diastole_frames),
            'validity': {name: {'passed': v.passed, 'reason': v.reason}
                         for name, v in self.validity.items()},
            'frames': [{'frame_id': f.frame_id, 'ctr': f.ctr,
                        'ca_degrees': f.ca_degrees, 'excluded': f.excluded}
                       for f in self.frames],
            'exclusions': self.exclusions,
        }


def _number(value: float) -> str:
    return str(int(value)) if float(value).is_integer() else repr(value)


def _require_schema(mask: LabelMask, *schemas: MaskSchema) -> None:
    if mask.schema not in schemas:
        names = ', '.join(s.value for s in schemas)
        raise errors.SchemaMismatch(
            f'expected a {names} mask, got {mask.schema.value}')


def validate_anatomy(mask: LabelMask,
                     min_containment: float = 0.95) -> AnatomyCheck:
    """
    Plausibility rule for thorax/heart labeling.

    Passes iff there is exactly one heart and one thorax component and at
    least ``min_containment`` of the heart pixels lie inside the filled outer
    contour of the thorax.
    """
    _require_schema(mask, MaskSchema.AXIS, MaskSchema.CARDIOTHORACIC)
    hearts = geometry.connected_components(mask, HEART)
    thoraces = geometry.connected_components(mask, THORAX)
    if not hearts or not thoraces:
        return AnatomyCheck(MISSING_STRUCTURE)
    if len(hearts) != 1 or len(thoraces) != 1:
        return AnatomyCheck(FRAGMENTED_STRUCTURE)
    inside = geometry.fill_holes(thoraces[0]).raster(mask.shape)
    heart = mask.binary(HEART)
    contained = np.count_nonzero(heart & inside) / np.count_nonzero(heart)
    if contained < min_containment:
        return AnatomyCheck(HEART_OUTSIDE_THORAX)
    return AnatomyCheck()


def _check(mask: LabelMask, config: MeasureConfig) -> None:
    check = validate_anatomy(mask, config.min_containment)
    if not check:
        raise errors.AnatomyInvalid(check.reason or '')


def cardiothoracic_ratio(mask: LabelMask,
                         config: MeasureConfig = MeasureConfig()) -> float:
    """ Heart perimeter over thorax perimeter (largest components)."""
    _check(mask, config)
    heart = geometry.connected_components(mask, HEART)[0]
    thorax = geometry.connected_components(mask, THORAX)[0]
    return geometry.perimeter(heart) / geometry.perimeter(thorax)


def _midline(mask: LabelMask) -> geometry.Ray:
    spines = geometry.connected_components(mask, AxisLabel.SPINE)
    if not spines:
        raise errors.AnatomyInvalid(MISSING_STRUCTURE)
    thorax = geometry.connected_components(mask, THORAX)[0]
    return geometry.Ray.through(geometry.centroid(spines[0]),
                                geometry.centroid(geometry.fill_holes(thorax)))


def cardiac_axis(mask: LabelMask,
                 config: MeasureConfig = MeasureConfig()) -> float:
    """
    Angle between the anteroposterior midline and the septum, degrees.

    The midline runs from the spine centroid through the thorax centroid.
    The septum ray follows the septum's principal axis, signed to point into
    the side of the midline holding the heart centroid; a septum within
    ``parallel_tolerance`` of the midline is signed anteriorly instead.
    """
    _require_schema(mask, MaskSchema.AXIS)
    _check(mask, config)
    midline = _midline(mask)
    septa = geometry.connected_components(mask, AxisLabel.SEPTUM)
    if not septa:
        raise errors.AnatomyInvalid(MISSING_STRUCTURE)
    septum = septa[0]
    direction = geometry.principal_axis(septum, config.isotropy_threshold)

    heart = geometry.centroid(geometry.connected_components(mask, HEART)[0])
    to_heart = (heart[0] - midline.origin[0], heart[1] - midline.origin[1])
    side = geometry.cross(midline.direction, direction)
    tolerance = math.sin(math.radians(config.parallel_tolerance))
    if abs(side) < tolerance:
        dot = (midline.direction[0] * direction[0]
               + midline.direction[1] * direction[1])
        flip = dot < 0
    else:
        flip = side * geometry.cross(midline.direction, to_heart) < 0
    if flip:
        direction = (-direction[0], -direction[1])
    ray = geometry.Ray(geometry.centroid(septum), direction)
    return geometry.angle_between(midline, ray) % 180.0


def smooth(areas: Sequence[float], window: int = 3) -> np.ndarray:
    """ Centered moving average; the window shrinks at the series ends."""
    values = np.asarray(areas, dtype=np.float64)
    half = window // 2
    out = np.empty_like(values)
    for i in range(len(values)):
        out[i] = values[max(0, i - half):i + half + 1].mean()
    return out


def fractional_area_change(series: AreaSeries, window: int = 3) -> float:
    """
    (max area - min area) / max area over a cardiac cycle.

    The smoothed series locates the peak and trough frames; the extremes are
    the raw areas within one frame of them.
    """
    if len(series) < 2:
        raise errors.EmptySeries(
            f'{series.chamber}: need at least 2 frames, got {len(series)}')
    raw = np.asarray(series.areas)
    if raw.max() <= 0:
        raise errors.ZeroArea(f'{series.chamber}: maximum area is zero')
    smoothed = smooth(raw, window)
    peak, trough = int(np.argmax(smoothed)), int(np.argmin(smoothed))
    high = raw[max(0, peak - 1):peak + 2].max()
    low = raw[max(0, trough - 1):trough + 2].min()
    return float(min(1.0, max(0.0, (high - low) / high)))


def detect_cardiac_cycle(series: AreaSeries, window: int = 3,
                         min_frames: int = 6) -> CardiacCycle:
    """
    Systole (local minima) and diastole (local maxima) frames.

    Extrema are taken on the smoothed series, flat runs reporting their
    middle frame; runs touching either end of the series are skipped and
    consecutive extrema of one kind collapse to the most extreme.
    """
    if len(series) < min_frames:
        raise errors.SeriesTooShort(
            f'{series.chamber}: need {min_frames} frames, got {len(series)}')
    smoothed = smooth(series.areas, window)
    # runs of equal values: (start, end) inclusive
    runs: List[Tuple[int, int]] = []
    start = 0
    for i in range(1, len(smoothed) + 1):
        if i == len(smoothed) or not np.isclose(smoothed[i], smoothed[start],
                                                rtol=0, atol=1e-9):
            runs.append((start, i - 1))
            start = i
    extrema: List[Tuple[str, int, float]] = []
    for k in range(1, len(runs) - 1):
        first, last = runs[k]
        value = smoothed[first]
        before, after = smoothed[runs[k - 1][0]], smoothed[runs[k + 1][0]]
        frame = (first + last) // 2
        if before > value and after > value:
            kind = 'min'
        elif before < value and after < value:
            kind = 'max'
        else:
            continue
        if extrema and extrema[-1][0] == kind:
            keep_new = value < extrema[-1][2] if kind == 'min' else (
                value > extrema[-1][2])
            if keep_new:
                extrema[-1] = (kind, frame, value)
            continue
        extrema.append((kind, frame, value))
    systole = tuple(frame for kind, frame, _ in extrema if kind == 'min')
    diastole = tuple(frame for kind, frame, _ in extrema if kind == 'max')
    if not systole or not diastole:
        raise errors.NoCycle(f'{series.chamber}: no full cardiac cycle')
    return CardiacCycle(systole, diastole)


def chamber_area(mask: LabelMask, chamber: int) -> int:
    """ Area of the largest component of a chamber, 0 when absent."""
    regions = geometry.connected_components(mask, chamber)
    return geometry.area(regions[0]) if regions else 0


def _measure_frame(frame: StudyFrame,
                   config: MeasureConfig) -> FrameMeasurement:
    ctr_mask = frame.cardiothoracic or frame.axis
    if ctr_mask is None:
        return FrameMeasurement(frame.frame_id, excluded='no masks')
    check = validate_anatomy(ctr_mask, config.min_containment)
    if frame.axis is not None and frame.axis is not ctr_mask and check:
        check = validate_anatomy(frame.axis, config.min_containment)
    if not check:
        return FrameMeasurement(frame.frame_id, excluded=check.reason)
    ctr = cardiothoracic_ratio(ctr_mask, config)
    ca: Optional[float] = None
    if frame.axis is not None:
        try:
            ca = cardiac_axis(frame.axis, config)
        except (errors.AnatomyInvalid, errors.IsotropicRegion) as exc:
            logger.debug('frame %s: no cardiac axis (%s)', frame.frame_id, exc)
    return FrameMeasurement(frame.frame_id, ctr=ctr, ca_degrees=ca)


def _mean(values: Sequence[Optional[float]]) -> Optional[float]:
    present = [v for v in values if v is not None]
    return float(np.mean(present)) if present else None


def measure_study(frames: Sequence[StudyFrame],
                  config: MeasureConfig = MeasureConfig()) -> BiometricReport:
    """
    Study-level biometrics from a sequence of A4C frames.

    CTR and CA are measured per frame and averaged over frames passing the
    anatomy rule; FAC and the cardiac cycle come from the chamber masks in
    frame order (ventricular area drives the cycle).

    :raises NoValidFrames: no frame passes the anatomy rule
    """
    measured = tuple(_measure_frame(f, config) for f in frames)
    valid = [m for m in measured if m.excluded is None]
    if not valid:
        raise errors.NoValidFrames(
            f'all {len(measured)} frames excluded from measurement')
    for m in measured:
        if m.excluded is not None:
            logger.warning('frame %s excluded: %s', m.frame_id, m.excluded)

    validity: Dict[str, MetricValidity] = {}
    ctr = _mean([m.ctr for m in valid])
    ca = _mean([m.ca_degrees for m in valid])
    validity['ctr'] = MetricValidity()
    validity['ca'] = MetricValidity(None if ca is not None
                                    else 'no measurable septum')

    # study frame number of every chamber mask
    chambered = [(i, f.chambers) for i, f in enumerate(frames)
                 if f.chambers is not None]
    chamber_frames = [i for i, _ in chambered]
    chamber_masks = [m for _, m in chambered]
    series = tuple(
        AreaSeries(c.name, [chamber_area(m, c) for m in chamber_masks])
        for c in CHAMBERS) if chamber_masks else ()
    fac: Dict[str, Optional[float]] = {}
    for s in series or [AreaSeries(c.name, ()) for c in CHAMBERS]:
        name = f'fac_{s.chamber.lower()}'
        if len(s) < 2:
            fac[s.chamber] = None
            validity[name] = MetricValidity(SERIES_TOO_SHORT)
            continue
        try:
            fac[s.chamber] = fractional_area_change(s, config.smoothing_window)
            validity[name] = MetricValidity()
        except errors.ZeroArea as exc:
            fac[s.chamber] = None
            validity[name] = MetricValidity(str(exc))

    systole: Tuple[int, ...] = ()
    diastole: Tuple[int, ...] = ()
    ventricular = AreaSeries('ventricles', [
        sum(areas) for areas in zip(*(s.areas for s in series
                                      if s.chamber in VENTRICLE_NAMES))])
    if len(ventricular) < config.min_cycle_frames:
        validity['cycle'] = MetricValidity(SERIES_TOO_SHORT)
    else:
        try:
            cycle = detect_cardiac_cycle(ventricular, config.smoothing_window,
                                         config.min_cycle_frames)
            systole = tuple(chamber_frames[k] for k in cycle.systole_frames)
            diastole = tuple(chamber_frames[k]
                             for k in cycle.diastole_frames)
            validity['cycle'] = MetricValidity()
        except errors.NoCycle as exc:
            validity['cycle'] = MetricValidity(str(exc))

    return BiometricReport(ctr=ctr, ca_degrees=ca, fac=fac,
                           systole_frames=systole, diastole_frames=diastole,
                           validity=validity, frames=measured,
                           area_series=series)
