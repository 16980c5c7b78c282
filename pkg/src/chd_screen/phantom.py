""" Synthetic phantoms with analytically known geometry.

Phantoms stand in for clinical data as the oracle for every biometric and
pipeline test. Lesion analogs are geometric distortions of the view motifs:
they exercise the per-view diagnostic pipeline and are NOT models of
disease anatomy.
"""
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import (Any, Dict, List, NamedTuple, Optional, Sequence, Tuple,
                    Union)

import numpy as np
from scipy import ndimage

from chd_screen import biometrics, errors
from chd_screen.evaluation import jaccard_index
from chd_screen.geometry import Point
from chd_screen.masks import (AxisLabel, CardiothoracicLabel, ChamberLabel,
                              FrameRecord, GreyImage, LabelMask, LesionClass,
                              MaskSchema, StudyManifest, StudyRecord,
                              ViewLabel, save_image, save_manifest, save_mask)

logger = logging.getLogger(__name__)

CHAMBER_ORDER = (ChamberLabel.LV, ChamberLabel.RV, ChamberLabel.LA,
                 ChamberLabel.RA)
# relative chamber sizes when base areas are derived from the heart size
_DEFAULT_CHAMBER_FACTORS = (1.0, 0.95, 0.85, 0.8)

_INTENSITY = {
    'background': 0.05,
    'thorax': 0.35,
    'heart': 0.55,
    'chamber': 0.12,
    'septum': 0.75,
    'spine': 0.9,
}

_CROSS = ndimage.generate_binary_structure(2, 1)


def rotate(vector: Point, degrees: float) -> Point:
    """ Rotates a vector; positive angles turn anterior toward the heart."""
    t = math.radians(degrees)
    x, y = vector
    return (x * math.cos(t) - y * math.sin(t),
            x * math.sin(t) + y * math.cos(t))


def expected_axis(target_ca: float, parallel_tolerance: float = 5.0) -> float:
    """ Cardiac axis a septum drawn at ``target_ca`` measures as.

    A septum line within the tolerance of the midline is signed anteriorly,
    so targets just below 180 read as their supplement.
    """
    if target_ca > 180 - parallel_tolerance:
        return 180.0 - target_ca
    return float(target_ca)


@dataclass(frozen=True)
class PhantomParams:
    target_ctr: float = 0.52
    target_ca: float = 45.0
    # LV, RV, LA, RA in px²; derived from the heart size when omitted
    chamber_base_areas: Optional[Tuple[float, float, float, float]] = None
    fac_targets: Tuple[float, float, float, float] = (0.5, 0.45, 0.5, 0.45)
    period: int = 20
    n_frames: int = 60
    noise_level: float = 0.0
    seed: int = 0
    frame_shape: Tuple[int, int] = (300, 400)
    # direction of the anterior midline, degrees from image "up"
    orientation: float = 0.0

    def __post_init__(self) -> None:
        problems = []
        if not 0.2 <= self.target_ctr <= 0.9:
            problems.append('target_ctr must be in [0.2, 0.9]')
        if not 0 <= self.target_ca < 180:
            problems.append('target_ca must be in [0, 180)')
        if len(self.fac_targets) != 4 or not all(
                0 <= f <= 0.9 for f in self.fac_targets):
            problems.append('fac_targets must be 4 values in [0, 0.9]')
        if self.chamber_base_areas is not None and (
                len(self.chamber_base_areas) != 4
                or min(self.chamber_base_areas) <= 0):
            problems.append('chamber_base_areas must be 4 positive values')
        if self.period < 6:
            problems.append('period must be at least 6 frames')
        if self.n_frames < 1:
            problems.append('n_frames must be positive')
        if not 0 <= self.noise_level <= 1:
            problems.append('noise_level must be in [0, 1]')
        if min(self.frame_shape) < 32:
            problems.append('frame_shape is too small')
        if problems:
            raise errors.InvalidParameters('; '.join(problems))


@dataclass(frozen=True)
class PhantomTruth:
    """ Analytic ground truth emitted with a phantom study."""
    ctr: float
    ca_degrees: float
    chamber_base_areas: Dict[str, float]
    fac: Dict[str, float]
    period: int
    n_frames: int
    systole_frames: Tuple[int, ...]
    diastole_frames: Tuple[int, ...]
    views: Dict[str, str] = field(default_factory=lambda: {'a4c': 'normal'})

    def chamber_area(self, chamber: str, t: float) -> float:
        """ Raised-cosine area schedule: maximal at t = 0."""
        base, fac = self.chamber_base_areas[chamber], self.fac[chamber]
        return base * (1 - fac * (1 - math.cos(2 * math.pi * t / self.period))
                       / 2)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'ctr': self.ctr,
            'ca_degrees': self.ca_degrees,
            'chamber_base_areas': dict(self.chamber_base_areas),
            'fac': dict(self.fac),
            'period': self.period,
            'n_frames': self.n_frames,
            'systole_frames': list(self.systole_frames),
            'diastole_frames': list(self.diastole_frames),
            'views': dict(self.views),
        }


class PhantomStudy(NamedTuple):
    images: Tuple[GreyImage, ...]
    masks: Dict[MaskSchema, Tuple[LabelMask, ...]]
    truth: PhantomTruth

    def study_frames(self) -> List[biometrics.StudyFrame]:
        """ Frames in the form ``biometrics.measure_study`` consumes."""
        axis = self.masks[MaskSchema.AXIS]
        ctr = self.masks[MaskSchema.CARDIOTHORACIC]
        chambers = self.masks[MaskSchema.CHAMBERS]
        return [biometrics.StudyFrame(f'a4c-{i:02d}', axis[i], ctr[i],
                                      chambers[i])
                for i in range(len(self.images))]


def scripted_cycle(period: int, n_frames: int
                   ) -> Tuple[Tuple[int, ...], Tuple[int, ...]]:
    """ Interior systole (minimum) and diastole (maximum) frames."""
    last = n_frames - 1
    diastole = tuple(k * period for k in range(1, n_frames // period + 1)
                     if k * period < last)
    systole = tuple(int(math.floor(period / 2 + k * period))
                    for k in range(n_frames // period + 1)
                    if 0 < math.floor(period / 2 + k * period) < last)
    return systole, diastole


class _Grid:
    """ Pixel-center coordinates of a frame."""

    def __init__(self, shape: Tuple[int, int]):
        self.shape = shape
        ys, xs = np.mgrid[0:shape[0], 0:shape[1]]
        self.xs = xs.astype(np.float64)
        self.ys = ys.astype(np.float64)

    def ellipse(self, center: Point, u: Point, semi_u: float,
                semi_v: float) -> np.ndarray:
        dx, dy = self.xs - center[0], self.ys - center[1]
        along = dx * u[0] + dy * u[1]
        across = -dx * u[1] + dy * u[0]
        return (along / semi_u) ** 2 + (across / semi_v) ** 2 <= 1.0

    def disk(self, center: Point, radius: float) -> np.ndarray:
        return ((self.xs - center[0]) ** 2
                + (self.ys - center[1]) ** 2) <= radius ** 2

    def blob(self, center: Point, area: float) -> np.ndarray:
        """ The ``round(area)`` pixels nearest to ``center``."""
        count = int(round(area))
        reach = math.sqrt(max(area, 0.0) / math.pi) + 2
        rows = slice(max(0, int(math.floor(center[1] - reach))),
                     min(self.shape[0], int(math.ceil(center[1] + reach)) + 1))
        cols = slice(max(0, int(math.floor(center[0] - reach))),
                     min(self.shape[1], int(math.ceil(center[0] + reach)) + 1))
        distance = ((self.xs[rows, cols] - center[0]) ** 2
                    + (self.ys[rows, cols] - center[1]) ** 2)
        window = np.zeros(distance.shape, dtype=bool)
        window.flat[np.argsort(distance, axis=None, kind='stable')[:count]] = (
            True)
        out = np.zeros(self.shape, dtype=bool)
        out[rows, cols] = window
        return out

    def bar(self, center: Point, direction: Point, length: float,
            width: float) -> np.ndarray:
        dx, dy = self.xs - center[0], self.ys - center[1]
        along = dx * direction[0] + dy * direction[1]
        across = -dx * direction[1] + dy * direction[0]
        return (np.abs(along) <= length / 2) & (np.abs(across) <= width / 2)


@dataclass(frozen=True)
class _Layout:
    center: Point
    anterior: Point
    lateral: Point
    thorax_axes: Tuple[float, float]
    heart_center: Point
    spine_center: Point
    spine_radius: float
    septum_direction: Point
    septum_length: float
    septum_width: float
    chamber_centers: Dict[ChamberLabel, Point]
    base_areas: Dict[ChamberLabel, float]


def _plus(p: Point, q: Point, k: float = 1.0) -> Point:
    return p[0] + k * q[0], p[1] + k * q[1]


def _layout(params: PhantomParams) -> _Layout:
    height, width = params.frame_shape
    center = ((width - 1) / 2, (height - 1) / 2)
    anterior = rotate((0.0, -1.0), params.orientation)
    lateral = rotate(anterior, 90.0)
    semi_a = 0.46 * min(height, width)
    semi_b = 0.85 * semi_a
    s = params.target_ctr
    heart_dir = ((anterior[0] + lateral[0]) / math.sqrt(2),
                 (anterior[1] + lateral[1]) / math.sqrt(2))
    heart_center = _plus(center, heart_dir, 0.5 * (1 - s) * semi_b)
    septum = rotate(anterior, params.target_ca)
    septum_width = max(3.0, 0.06 * s * semi_b)
    heart_minor = s * semi_b

    clearance = septum_width / 2 + 1.5
    fit = (heart_minor - 1.5 - math.sqrt(2) * clearance) / (1 + math.sqrt(2))
    if params.chamber_base_areas is None:
        areas = tuple(math.pi * (0.85 * fit * k) ** 2
                      for k in _DEFAULT_CHAMBER_FACTORS)
    else:
        areas = tuple(params.chamber_base_areas)
    radii = [math.sqrt(a / math.pi) for a in areas]
    offset = math.sqrt(2) * (max(radii) + clearance)
    if fit <= 0 or offset + max(radii) > heart_minor - 1.5:
        raise errors.InfeasibleGeometry(
            'chambers cannot fit inside the heart at the requested areas')
    across = rotate(septum, 90.0)
    centers = {}
    for chamber, (ka, kc) in zip(CHAMBER_ORDER,
                                 ((1, 1), (1, -1), (-1, 1), (-1, -1))):
        direction = ((ka * septum[0] + kc * across[0]) / math.sqrt(2),
                     (ka * septum[1] + kc * across[1]) / math.sqrt(2))
        centers[chamber] = _plus(heart_center, direction, offset)
    return _Layout(
        center=center,
        anterior=anterior,
        lateral=lateral,
        thorax_axes=(semi_a, semi_b),
        heart_center=heart_center,
        spine_center=_plus(center, anterior, -0.8 * semi_b),
        spine_radius=0.07 * semi_b,
        septum_direction=septum,
        septum_length=1.5 * heart_minor,
        septum_width=septum_width,
        chamber_centers=centers,
        base_areas=dict(zip(CHAMBER_ORDER, areas)),
    )


def _touches(a: np.ndarray, b: np.ndarray) -> bool:
    return bool(np.any(a & ndimage.binary_dilation(b, iterations=2)))


def _static_anatomy(grid: _Grid, params: PhantomParams,
                    layout: _Layout) -> Dict[str, np.ndarray]:
    semi_a, semi_b = layout.thorax_axes
    s = params.target_ctr
    thorax = grid.ellipse(layout.center, layout.lateral, semi_a, semi_b)
    heart = grid.ellipse(layout.heart_center, layout.lateral,
                         s * semi_a, s * semi_b)
    spine = grid.disk(layout.spine_center, layout.spine_radius)
    septum = heart & grid.bar(layout.heart_center, layout.septum_direction,
                              layout.septum_length, layout.septum_width)
    if _touches(heart, ~thorax):
        raise errors.InfeasibleGeometry('heart does not fit inside thorax')
    if _touches(heart, spine):
        raise errors.InfeasibleGeometry('heart overlaps the spine')
    return {'thorax': thorax, 'heart': heart, 'spine': spine,
            'septum': septum}


def _chambers_at(grid: _Grid, layout: _Layout, truth: PhantomTruth,
                 t: int) -> np.ndarray:
    labels = np.zeros(grid.shape, dtype=np.uint8)
    for chamber in CHAMBER_ORDER:
        area = truth.chamber_area(chamber.name, t)
        labels[grid.blob(layout.chamber_centers[chamber], area)] = chamber
    return labels


def _speckle(values: np.ndarray, noise_level: float,
             rng: np.random.Generator) -> np.ndarray:
    if noise_level <= 0:
        return values
    noisy = values + rng.normal(0.0, 0.25 * noise_level, size=values.shape)
    return np.clip(noisy, 0.0, 1.0)


def generate_phantom_study(params: PhantomParams) -> PhantomStudy:
    """
    Renders an A4C phantom sequence with masks in all three schemas.

    Thorax, heart, spine and septum are static; the four chambers pulse on
    a raised-cosine area schedule. Output is a pure function of ``params``.

    :raises InfeasibleGeometry: structures can't be placed without overlap
    """
    layout = _layout(params)
    grid = _Grid(params.frame_shape)
    anatomy = _static_anatomy(grid, params, layout)
    systole, diastole = scripted_cycle(params.period, params.n_frames)
    truth = PhantomTruth(
        ctr=params.target_ctr,
        ca_degrees=expected_axis(params.target_ca),
        chamber_base_areas={c.name: layout.base_areas[c]
                            for c in CHAMBER_ORDER},
        fac={c.name: float(f) for c, f in zip(CHAMBER_ORDER,
                                              params.fac_targets)},
        period=params.period,
        n_frames=params.n_frames,
        systole_frames=systole,
        diastole_frames=diastole,
    )

    axis = np.zeros(params.frame_shape, dtype=np.uint8)
    axis[anatomy['thorax']] = AxisLabel.THORAX
    axis[anatomy['heart']] = AxisLabel.HEART
    axis[anatomy['spine']] = AxisLabel.SPINE
    axis[anatomy['septum']] = AxisLabel.SEPTUM
    ctr = np.zeros(params.frame_shape, dtype=np.uint8)
    ctr[anatomy['thorax']] = CardiothoracicLabel.THORAX
    ctr[anatomy['heart']] = CardiothoracicLabel.HEART
    axis_mask = LabelMask(MaskSchema.AXIS, axis)
    ctr_mask = LabelMask(MaskSchema.CARDIOTHORACIC, ctr)

    base = np.full(params.frame_shape, _INTENSITY['background'])
    base[anatomy['thorax']] = _INTENSITY['thorax']
    base[anatomy['heart']] = _INTENSITY['heart']
    base[anatomy['spine']] = _INTENSITY['spine']
    base[anatomy['septum']] = _INTENSITY['septum']

    images: List[GreyImage] = []
    chambers: List[LabelMask] = []
    for t in range(params.n_frames):
        labels = _chambers_at(grid, layout, truth, t)
        values = base.copy()
        values[labels > 0] = _INTENSITY['chamber']
        rng = np.random.default_rng([params.seed, t])
        images.append(GreyImage(_speckle(values, params.noise_level, rng)))
        chambers.append(LabelMask(MaskSchema.CHAMBERS, labels))
    masks = {
        MaskSchema.AXIS: (axis_mask,) * params.n_frames,
        MaskSchema.CARDIOTHORACIC: (ctr_mask,) * params.n_frames,
        MaskSchema.CHAMBERS: tuple(chambers),
    }
    return PhantomStudy(tuple(images), masks, truth)


def _removal_target(target: float, size: int) -> int:
    # removing m and adding m pixels gives J = (n - m) / (n + m)
    return int(round(size * (1 - target) / (1 + target)))


def _perturb_once(labels: np.ndarray, budgets: Dict[int, int],
                  rng: np.random.Generator) -> np.ndarray:
    work = labels.copy()
    for label, budget in budgets.items():
        truth = labels == label
        current = work == label
        need = min(budget, int(np.count_nonzero(current)) - 1)
        removed = np.zeros_like(current)
        while need > 0:
            inner = current & ~ndimage.binary_erosion(current, _CROSS)
            candidates = np.flatnonzero(inner)
            if not len(candidates):
                break
            taken = rng.permutation(candidates)[:need]
            current.flat[taken] = False
            removed.flat[taken] = True
            need -= len(taken)
        if removed.any():
            # removed pixels take the label of the nearest other structure
            _, (rows, cols) = ndimage.distance_transform_edt(
                work == label, return_indices=True)
            work[removed] = work[rows[removed], cols[removed]]
        grown = work == label
        need = budget
        while need > 0:
            ring = ndimage.binary_dilation(grown, _CROSS) & ~grown & ~truth
            candidates = np.flatnonzero(ring)
            if not len(candidates):
                break
            taken = rng.permutation(candidates)[:need]
            grown.flat[taken] = True
            work.flat[taken] = label
            need -= len(taken)
    return work


def perturb_mask(mask: LabelMask, target_jaccard: float, seed: int,
                 labels: Optional[Sequence[int]] = None,
                 tolerance: float = 0.05,
                 max_iterations: int = 25) -> LabelMask:
    """
    Simulates segmentation error with seeded boundary erosion/dilation.

    Each perturbed structure loses and gains pixels along its boundary until
    its Jaccard index against the input lies within ``tolerance`` of the
    target.

    :param mask: labeled mask to perturb
    :param target_jaccard: per-structure Jaccard index to reach, in (0, 1]
    :param seed: noise seed
    :param labels: structures to perturb; every non-background structure
        present by default
    :raises TargetUnreachable: no attempt reached the target
    """
    if not 0 < target_jaccard <= 1:
        raise errors.InvalidParameters('target_jaccard must be in (0, 1]')
    if target_jaccard == 1:
        return LabelMask(mask.schema, mask.labels)
    if labels is None:
        labels = [c for c in range(1, mask.schema.max_code + 1)
                  if np.any(mask.labels == c)]
    sizes = {int(c): int(np.count_nonzero(mask.labels == c)) for c in labels}
    budgets = {c: _removal_target(target_jaccard, n)
               for c, n in sizes.items() if n}
    rng = np.random.default_rng(seed)
    scores: Dict[int, Optional[float]] = {}
    for attempt in range(max_iterations):
        candidate = mask.with_labels(_perturb_once(mask.labels, budgets, rng))
        scores = {c: s for c, s in jaccard_index(candidate, mask).items()
                  if c in budgets}
        misses = {c: s for c, s in scores.items()
                  if s is None or abs(s - target_jaccard) > tolerance}
        if not misses:
            return candidate
        for c, achieved in misses.items():
            wanted = (1 - target_jaccard) / (1 + target_jaccard)
            got = (1 - achieved) / (1 + achieved) if achieved else 1.0
            scale = wanted / got if got > 0 else 2.0
            budgets[c] = max(1, int(round(budgets[c] * scale)))
        logger.debug('perturb attempt %d missed %s', attempt, misses)
    raise errors.TargetUnreachable(
        f'Jaccard {target_jaccard} not reached: {scores}')


@dataclass(frozen=True)
class ViewMotifParams:
    """ Synthetic five-view corpus settings."""
    image_shape: Tuple[int, int] = (300, 400)
    frames_per_view: int = 2
    a4c_frames: int = 12
    a4c_period: int = 6
    # inter-study jitter of the motif placement
    shift_jitter: float = 0.03
    scale_jitter: float = 0.05
    rotation_jitter: float = 5.0
    lesion_severity: float = 1.0
    noise_level: float = 0.1
    seed: int = 0


# (kind, geometry..., intensity); coordinates in motif units, y down
Primitive = Tuple[Any, ...]


def _scaled(base: float, factor: float, severity: float) -> float:
    return base * (1 + (factor - 1) * severity)


# body tissue level of each still plane
_VIEW_BODY = {
    ViewLabel.THREE_VT: 0.35,
    ViewLabel.THREE_VV: 0.27,
    ViewLabel.A5C: 0.43,
    ViewLabel.ABDO: 0.5,
}


def view_motif(view: ViewLabel, lesion: LesionClass,
               severity: float = 1.0) -> List[Primitive]:
    """ Primitive shapes of a still view, distorted for lesion analogs.

    Each plane has its own body level and landmarks several pixels wide
    at model resolution. TOF analogs swap great-vessel sizes and override
    the outflow; HLHS analogs shrink the aorta and the left ventricle.
    ABDO ignores the lesion.
    """
    if view is ViewLabel.A4C:
        raise errors.InvalidParameters(
            f'{view.name} is rendered by generate_phantom_study')
    tof = lesion is LesionClass.TOF
    hlhs = lesion is LesionClass.HLHS
    dark = _INTENSITY['chamber']
    body = _VIEW_BODY[view]
    chest = ('ellipse', (0.0, 0.0), 1.3, 1.1, 0.0, body)
    spine = ('disk', (0.0, 0.85), 0.13, _INTENSITY['spine'])
    if view is ViewLabel.THREE_VT or view is ViewLabel.THREE_VV:
        pa_r, ao_r, arch_w, duct_w = 0.24, 0.2, 0.14, 0.15
        if tof:
            pa_r, ao_r = _scaled(pa_r, 0.5, severity), _scaled(ao_r, 1.5,
                                                               severity)
            duct_w = _scaled(duct_w, 0.3, severity)
        if hlhs:
            ao_r, pa_r = _scaled(ao_r, 0.35, severity), _scaled(pa_r, 1.25,
                                                                severity)
            arch_w = _scaled(arch_w, 0.3, severity)
        if view is ViewLabel.THREE_VT:
            return [chest, spine,
                    ('bar', (-0.45, -0.25), (-0.1, 0.35), duct_w, dark),
                    ('bar', (-0.05, -0.2), (-0.1, 0.35), arch_w, dark),
                    ('disk', (-0.45, -0.25), pa_r, dark),
                    ('disk', (-0.05, -0.2), ao_r, dark),
                    ('disk', (0.35, -0.15), 0.13, dark),
                    ('disk', (0.2, 0.2), 0.14, 0.65)]
        return [chest, spine,
                ('bar', (-0.4, -0.45), (-0.8, -0.05), 0.14, dark),
                ('disk', (-0.4, -0.45), pa_r * 1.1, dark),
                ('disk', (0.0, -0.15), ao_r, dark),
                ('disk', (0.35, 0.1), 0.13, dark)]
    if view is ViewLabel.A5C:
        lv_r, out_w = 0.24, 0.16
        out_from, out_to = (0.15, -0.15), (0.05, -0.8)
        if tof:
            out_w = _scaled(out_w, 2.2, severity)
            out_from, out_to = (0.0, -0.15), (-0.1, -0.85)
        if hlhs:
            lv_r = _scaled(lv_r, 0.35, severity)
            out_w = _scaled(out_w, 0.35, severity)
        return [chest, spine,
                ('ellipse', (0.1, -0.15), 0.8, 0.62, -40.0,
                 _INTENSITY['heart']),
                ('disk', (0.4, -0.3), lv_r, dark),
                ('disk', (-0.1, -0.5), 0.21, dark),
                ('disk', (0.35, 0.15), 0.17, dark),
                ('disk', (-0.2, -0.05), 0.16, dark),
                ('bar', out_from, out_to, out_w, dark)]
    return [('ellipse', (0.0, 0.0), 1.2, 1.05, 0.0, body),
            ('disk', (-0.4, -0.15), 0.32, 0.07),
            ('disk', (0.15, 0.55), 0.09, 0.07),
            ('disk', (0.4, 0.35), 0.1, 0.1),
            ('disk', (0.0, 0.82), 0.13, _INTENSITY['spine']),
            ('bar', (0.05, -1.0), (0.05, -0.3), 0.12, dark)]


def render_view_frame(view: ViewLabel, lesion: LesionClass,
                      motifs: ViewMotifParams,
                      rng: np.random.Generator) -> GreyImage:
    """ Renders one jittered, speckled still frame of a view motif."""
    height, width = motifs.image_shape
    scale = 0.25 * min(height, width) * (
        1 + rng.uniform(-motifs.scale_jitter, motifs.scale_jitter))
    angle = math.radians(rng.uniform(-motifs.rotation_jitter,
                                     motifs.rotation_jitter))
    shift_x = rng.uniform(-motifs.shift_jitter, motifs.shift_jitter) * width
    shift_y = rng.uniform(-motifs.shift_jitter, motifs.shift_jitter) * height
    grid = _Grid(motifs.image_shape)
    # pixel centers mapped back into motif units
    dx = grid.xs - (width - 1) / 2 - shift_x
    dy = grid.ys - (height - 1) / 2 - shift_y
    mx = (dx * math.cos(angle) + dy * math.sin(angle)) / scale
    my = (-dx * math.sin(angle) + dy * math.cos(angle)) / scale

    values = np.full(motifs.image_shape, _INTENSITY['background'])
    for primitive in view_motif(view, lesion, motifs.lesion_severity):
        kind = primitive[0]
        if kind == 'disk':
            (cx, cy), radius, level = primitive[1:]
            inside = (mx - cx) ** 2 + (my - cy) ** 2 <= radius ** 2
        elif kind == 'ellipse':
            (cx, cy), semi_x, semi_y, tilt, level = primitive[1:]
            t = math.radians(tilt)
            u = (mx - cx) * math.cos(t) + (my - cy) * math.sin(t)
            v = -(mx - cx) * math.sin(t) + (my - cy) * math.cos(t)
            inside = (u / semi_x) ** 2 + (v / semi_y) ** 2 <= 1
        else:
            (x0, y0), (x1, y1), bar_width, level = primitive[1:]
            length = math.hypot(x1 - x0, y1 - y0)
            ux, uy = (x1 - x0) / length, (y1 - y0) / length
            px, py = mx - (x0 + x1) / 2, my - (y0 + y1) / 2
            inside = ((np.abs(px * ux + py * uy) <= length / 2)
                      & (np.abs(-px * uy + py * ux) <= bar_width / 2))
        values[inside] = level
    return GreyImage(_speckle(values, motifs.noise_level, rng))


def lesion_counts(n_studies: int,
                  lesion_mix: Sequence[float]) -> Dict[LesionClass, int]:
    """ Largest-remainder apportionment of studies to lesion classes."""
    if len(lesion_mix) != 3 or min(lesion_mix) < 0 or sum(lesion_mix) <= 0:
        raise errors.InvalidParameters(
            'lesion_mix must be 3 non-negative fractions')
    total = float(sum(lesion_mix))
    quotas = [n_studies * f / total for f in lesion_mix]
    counts = [int(math.floor(q)) for q in quotas]
    order = sorted(range(3), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[:n_studies - sum(counts)]:
        counts[i] += 1
    return dict(zip(LesionClass, counts))


def a4c_params(lesion: LesionClass, motifs: ViewMotifParams,
               rng: np.random.Generator, seed: int) -> PhantomParams:
    """ Per-study A4C phantom parameters; lesions shift axis or LV size."""
    ctr = rng.uniform(0.45, 0.6)
    ca = rng.uniform(35.0, 55.0)
    f = rng.uniform(0.35, 0.55, size=4)
    fac = (float(f[0]), float(f[1]), float(f[2]), float(f[3]))
    orientation = rng.uniform(-motifs.rotation_jitter, motifs.rotation_jitter)
    params = PhantomParams(
        target_ctr=ctr, target_ca=ca, fac_targets=fac,
        period=motifs.a4c_period, n_frames=motifs.a4c_frames,
        noise_level=motifs.noise_level, seed=seed,
        frame_shape=motifs.image_shape, orientation=orientation)
    if lesion is LesionClass.TOF:
        params = replace(params, target_ca=ca + 22.0 * motifs.lesion_severity)
    elif lesion is LesionClass.HLHS:
        lv, rv, la, ra = generate_default_areas(params)
        lv *= 1 - 0.75 * motifs.lesion_severity
        params = replace(params, chamber_base_areas=(lv, rv, la, ra))
    return params


def generate_default_areas(params: PhantomParams
                           ) -> Tuple[float, float, float, float]:
    """ Chamber base areas the layout derives from the heart size."""
    base = replace(params, chamber_base_areas=None)
    layout = _layout(base)
    lv, rv, la, ra = (layout.base_areas[c] for c in CHAMBER_ORDER)
    return lv, rv, la, ra


def _relative(path: Path, root: Path) -> str:
    return path.relative_to(root).as_posix()


def _write_json(path: Path, data: Any) -> None:
    try:
        path.write_text(json.dumps(data, indent=2) + '\n', encoding='utf-8')
    except OSError as exc:
        raise errors.IOFailure(f'{path}: {exc.strerror or exc}') from exc


def _write_study(index: int, lesion: LesionClass, motifs: ViewMotifParams,
                 seed: int, out_dir: Path) -> StudyRecord:
    study_id = f'S{index:04d}'
    study_dir = out_dir / study_id
    try:
        study_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise errors.IOFailure(f'{study_dir}: {exc.strerror or exc}') from exc
    frames: List[FrameRecord] = []
    study_rng = np.random.default_rng([seed, index])
    params = a4c_params(lesion, motifs, study_rng, seed=seed * 100003 + index)
    study = generate_phantom_study(params)
    axis_path = study_dir / 'axis.mask'
    ctr_path = study_dir / 'ctr.mask'
    save_mask(study.masks[MaskSchema.AXIS][0], axis_path)
    save_mask(study.masks[MaskSchema.CARDIOTHORACIC][0], ctr_path)

    for view in ViewLabel:
        if view is ViewLabel.A4C:
            for t, image in enumerate(study.images):
                frame_id = f'{view.code}-{t:02d}'
                image_path = study_dir / f'{frame_id}.img'
                chambers_path = study_dir / f'{frame_id}.chambers.mask'
                save_image(image, image_path)
                save_mask(study.masks[MaskSchema.CHAMBERS][t], chambers_path)
                frames.append(FrameRecord(frame_id, view, _relative(
                    image_path, out_dir), {
                    MaskSchema.AXIS: _relative(axis_path, out_dir),
                    MaskSchema.CARDIOTHORACIC: _relative(ctr_path, out_dir),
                    MaskSchema.CHAMBERS: _relative(chambers_path, out_dir),
                }))
            continue
        for k in range(motifs.frames_per_view):
            rng = np.random.default_rng([seed, index, int(view) + 1, k])
            image = render_view_frame(view, lesion, motifs, rng)
            frame_id = f'{view.code}-{k:02d}'
            image_path = study_dir / f'{frame_id}.img'
            save_image(image, image_path)
            frames.append(FrameRecord(frame_id, view,
                                      _relative(image_path, out_dir)))

    distorted = lesion.value
    truth = replace(study.truth, views={
        v.code: 'normal' if v is ViewLabel.ABDO else distorted
        for v in ViewLabel})
    _write_json(study_dir / 'truth.json', truth.to_dict())
    return StudyRecord(study_id, lesion, tuple(frames))


def generate_view_dataset(n_studies: int, motifs: ViewMotifParams,
                          lesion_mix: Sequence[float],
                          out_dir: Union[str, Path],
                          seed: Optional[int] = None,
                          threads: int = 1) -> StudyManifest:
    """
    Writes a synthetic five-view corpus with a manifest.

    Each study holds still frames of 3VT, 3VV, A5C and ABDO plus an A4C
    phantom sequence with masks in all three schemas and a ``truth.json``.
    Every study draws from its own random streams derived from
    ``(seed, study index)``, so thread count never changes the output.

    :param n_studies: number of studies, at least 2
    :param motifs: rendering settings
    :param lesion_mix: fractions of normal, TOF and HLHS studies
    :param out_dir: output directory
    :param seed: overrides ``motifs.seed``
    :param threads: worker threads
    """
    if n_studies < 2:
        raise errors.InvalidParameters('n_studies must be at least 2')
    seed = motifs.seed if seed is None else seed
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise errors.IOFailure(f'{out}: {exc.strerror or exc}') from exc
    counts = lesion_counts(n_studies, lesion_mix)
    lesions = [lesion for lesion in LesionClass
               for _ in range(counts[lesion])]
    order = np.random.default_rng([seed]).permutation(n_studies)
    assigned = [lesions[i] for i in order]

    def write(index: int) -> StudyRecord:
        return _write_study(index, assigned[index], motifs, seed, out)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        studies = tuple(pool.map(write, range(n_studies)))
    manifest = StudyManifest(studies, out)
    save_manifest(manifest, out / 'manifest.json')
    logger.info('wrote %d phantom studies to %s', n_studies, out)
    return manifest
