""" Reference image classifier and prediction files.

Images are cropped, box-downsampled and min-max normalized, then fed to a
softmax model (linear, or one tanh hidden layer) trained with mini-batch
SGD. The model is a stand-in: prediction CSV files let any external model
feed ``diagnosis`` instead.
"""
import csv
import io
import json
import logging
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import (Any, Callable, Dict, Iterable, List, Mapping, NamedTuple,
                    Optional, Sequence, Tuple, Union)

import numpy as np
from scipy import ndimage

from chd_screen import errors
from chd_screen.diagnosis import DiagnosticTask, ViewPredictionSet
from chd_screen.masks import (GreyImage, LesionClass, StudyManifest, ViewLabel,
                              load_image)

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

MODEL_MAGIC = b'FSMODEL1'
MODEL_VERSION = 1

LINEAR = 'linear'
HIDDEN = 'hidden'

MINMAX = 'minmax'
NO_NORMALIZATION = 'none'

VIEW_CLASSES = tuple(v.code for v in ViewLabel)
LESION_CLASSES = ('normal', 'chd')

VIEW_HEADER = ('study_id', 'frame_id', 'view') + tuple(
    f'p_{code}' for code in VIEW_CLASSES)
LESION_HEADER = ('study_id', 'frame_id', 'view', 'task', 'p_abnormal')


@dataclass(frozen=True)
class PreprocessConfig:
    """ Crop, box-mean downsample and normalization of source frames.

    Shapes are (rows, columns); ``crop_offset`` defaults to a centered crop.
    """
    source_shape: Tuple[int, int] = (300, 400)
    crop_shape: Tuple[int, int] = (180, 240)
    crop_offset: Optional[Tuple[int, int]] = None
    output_shape: Tuple[int, int] = (60, 80)
    normalization: str = MINMAX

    def __post_init__(self) -> None:
        row, col = self.offset
        if (row < 0 or col < 0
                or row + self.crop_shape[0] > self.source_shape[0]
                or col + self.crop_shape[1] > self.source_shape[1]):
            raise errors.InvalidParameters(
                f'crop {self.crop_shape} at {self.offset} does not fit '
                f'{self.source_shape}')
        if any(c % o for c, o in zip(self.crop_shape, self.output_shape)):
            raise errors.InvalidParameters(
                f'output {self.output_shape} does not divide crop '
                f'{self.crop_shape}')
        if self.normalization not in (MINMAX, NO_NORMALIZATION):
            raise errors.InvalidParameters(
                f'unknown normalization {self.normalization!r}')

    @property
    def offset(self) -> Tuple[int, int]:
        if self.crop_offset is not None:
            return self.crop_offset
        return ((self.source_shape[0] - self.crop_shape[0]) // 2,
                (self.source_shape[1] - self.crop_shape[1]) // 2)

    @property
    def factor(self) -> Tuple[int, int]:
        return (self.crop_shape[0] // self.output_shape[0],
                self.crop_shape[1] // self.output_shape[1])

    def to_dict(self) -> Dict[str, Any]:
        return {
            'source_shape': list(self.source_shape),
            'crop_shape': list(self.crop_shape),
            'crop_offset': (None if self.crop_offset is None
                            else list(self.crop_offset)),
            'output_shape': list(self.output_shape),
            'normalization': self.normalization,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> 'PreprocessConfig':
        offset = data.get('crop_offset')
        return cls(
            source_shape=_pair(data['source_shape']),
            crop_shape=_pair(data['crop_shape']),
            crop_offset=None if offset is None else _pair(offset),
            output_shape=_pair(data['output_shape']),
            normalization=str(data.get('normalization', MINMAX)),
        )


def _pair(value: Sequence[Any]) -> Tuple[int, int]:
    first, second = value
    return int(first), int(second)


def preprocess(image: GreyImage,
               config: PreprocessConfig = PreprocessConfig()) -> GreyImage:
    """
    Crops, box-mean downsamples and min-max normalizes a source frame.

    A constant image normalizes to all zeros.

    :raises DimensionMismatch: the image is not ``config.source_shape``
    """
    if image.shape != config.source_shape:
        raise errors.DimensionMismatch(
            f'expected a {config.source_shape} image, got {image.shape}')
    row, col = config.offset
    crop = image.values[row:row + config.crop_shape[0],
                        col:col + config.crop_shape[1]]
    (out_rows, out_cols), (k_rows, k_cols) = config.output_shape, config.factor
    small = crop.reshape(out_rows, k_rows, out_cols, k_cols).mean(axis=(1, 3))
    if config.normalization == MINMAX:
        low, high = float(small.min()), float(small.max())
        if high - low <= 1e-12:
            small = np.zeros_like(small)
        else:
            small = (small - low) / (high - low)
    return GreyImage(np.clip(small, 0.0, 1.0))


@dataclass(frozen=True)
class AugmentationConfig:
    """ Ranges of the random affine augmentation.

    Rotation and shear are in degrees, shifts are fractions of the image
    size, zoom draws each axis scale from ``1 ± zoom``.
    """
    rotation_range: float = 10.0
    width_shift: float = 0.3
    height_shift: float = 0.3
    horizontal_flip: bool = True
    vertical_flip: bool = True
    shear: float = 0.01
    zoom: float = 0.05
    seed: int = 0

    def __post_init__(self) -> None:
        ranges = (self.rotation_range, self.width_shift, self.height_shift,
                  self.shear, self.zoom)
        if min(ranges) < 0:
            raise errors.InvalidParameters(
                'augmentation ranges must be non-negative')
        if self.zoom >= 1:
            raise errors.InvalidParameters('zoom must be below 1')

    @classmethod
    def identity(cls) -> 'AugmentationConfig':
        return cls(0.0, 0.0, 0.0, False, False, 0.0, 0.0)


def augmentation_matrix(shape: Tuple[int, int], config: AugmentationConfig,
                        rng: np.random.Generator
                        ) -> Tuple[np.ndarray, bool, bool]:
    """
    Draws one affine transform, as a homogeneous matrix mapping output
    (row, col) coordinates to input coordinates, plus the flips.
    """
    def uniform(limit: float) -> float:
        return float(rng.uniform(-limit, limit)) if limit > 0 else 0.0

    theta = math.radians(uniform(config.rotation_range))
    shift_rows = uniform(config.height_shift) * shape[0]
    shift_cols = uniform(config.width_shift) * shape[1]
    shear = math.radians(uniform(config.shear))
    zoom_rows = 1 + uniform(config.zoom)
    zoom_cols = 1 + uniform(config.zoom)
    flip_h = config.horizontal_flip and bool(rng.random() < 0.5)
    flip_v = config.vertical_flip and bool(rng.random() < 0.5)

    rotation = np.array([[math.cos(theta), -math.sin(theta), 0],
                         [math.sin(theta), math.cos(theta), 0],
                         [0, 0, 1]])
    shift = np.array([[1, 0, shift_rows], [0, 1, shift_cols], [0, 0, 1]])
    shearing = np.array([[1, -math.sin(shear), 0],
                         [0, math.cos(shear), 0],
                         [0, 0, 1]])
    zoom = np.diag([zoom_rows, zoom_cols, 1.0])
    matrix = rotation @ shift @ shearing @ zoom
    center = np.array([(shape[0] - 1) / 2, (shape[1] - 1) / 2])
    to_center = np.eye(3)
    to_center[:2, 2] = center
    from_center = np.eye(3)
    from_center[:2, 2] = -center
    return to_center @ matrix @ from_center, flip_h, flip_v


def augment(image: GreyImage, config: AugmentationConfig,
            draw_seed: int) -> GreyImage:
    """
    Applies one random affine transform with bilinear resampling.

    Pixels mapped from outside the image are 0. The output depends only on
    ``(image, config, draw_seed)``.
    """
    rng = np.random.default_rng([config.seed, draw_seed])
    matrix, flip_h, flip_v = augmentation_matrix(image.shape, config, rng)
    values = ndimage.affine_transform(
        image.values, matrix[:2, :2], offset=matrix[:2, 2],
        output_shape=image.shape, order=1, mode='constant', cval=0.0)
    if flip_h:
        values = values[:, ::-1]
    if flip_v:
        values = values[::-1, :]
    return GreyImage(np.clip(values, 0.0, 1.0))


@dataclass(frozen=True)
class Architecture:
    kind: str = LINEAR
    hidden: int = 0

    def __post_init__(self) -> None:
        if self.kind not in (LINEAR, HIDDEN):
            raise errors.InvalidParameters(
                f'unknown architecture {self.kind!r}')
        if (self.kind == HIDDEN) != (self.hidden > 0):
            raise errors.InvalidParameters(
                'hidden width must be positive exactly for hidden models')

    @classmethod
    def parse(cls, text: str) -> 'Architecture':
        """ ``linear`` or ``hidden:<width>``."""
        if text == LINEAR:
            return cls()
        kind, _, width = text.partition(':')
        if kind != HIDDEN or not width.isdigit():
            raise errors.InvalidParameters(f'bad architecture {text!r}')
        return cls(HIDDEN, int(width))

    def __str__(self) -> str:
        return LINEAR if self.kind == LINEAR else f'{HIDDEN}:{self.hidden}'


@dataclass(frozen=True, eq=False)
class ModelParams:
    """ Weights of a softmax classifier over flattened preprocessed images.

    ``weights`` holds ``(W, b)`` for linear models and ``(W1, b1, W2, b2)``
    for hidden-layer models.
    """
    classes: Tuple[str, ...]
    architecture: Architecture
    weights: Tuple[np.ndarray, ...]
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)

    def __post_init__(self) -> None:
        weights = tuple(np.array(w, dtype=np.float64) for w in self.weights)
        expected = 2 if self.architecture.kind == LINEAR else 4
        if len(weights) != expected:
            raise errors.InvalidParameters(
                f'{self.architecture} needs {expected} arrays')
        if not all(np.isfinite(w).all() for w in weights):
            raise errors.InvalidParameters('weights must be finite')
        if weights[-1].shape != (len(self.classes),):
            raise errors.InvalidParameters(
                'output dimension must equal the class count')
        object.__setattr__(self, 'classes', tuple(self.classes))
        object.__setattr__(self, 'weights', weights)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ModelParams):
            return NotImplemented
        return (self.classes == other.classes
                and self.architecture == other.architecture
                and self.preprocess == other.preprocess
                and all(np.array_equal(a, b)
                        for a, b in zip(self.weights, other.weights)))

    @property
    def input_size(self) -> int:
        return int(self.weights[0].shape[0])

    @property
    def n_params(self) -> int:
        return sum(w.size for w in self.weights)

    def flat(self) -> np.ndarray:
        return np.concatenate([w.ravel() for w in self.weights])

    def with_flat(self, vector: np.ndarray) -> 'ModelParams':
        arrays, start = [], 0
        for w in self.weights:
            arrays.append(vector[start:start + w.size].reshape(w.shape))
            start += w.size
        return ModelParams(self.classes, self.architecture, tuple(arrays),
                           self.preprocess)


def init_model(classes: Sequence[str], architecture: Architecture,
               preprocess: PreprocessConfig = PreprocessConfig(),
               seed: int = 0, scale: float = 0.01) -> ModelParams:
    """ Small random weights, zero biases."""
    rng = np.random.default_rng(seed)
    size = preprocess.output_shape[0] * preprocess.output_shape[1]
    n = len(classes)
    if architecture.kind == LINEAR:
        weights: Tuple[np.ndarray, ...] = (
            rng.normal(0.0, scale, (size, n)), np.zeros(n))
    else:
        h = architecture.hidden
        weights = (rng.normal(0.0, scale, (size, h)), np.zeros(h),
                   rng.normal(0.0, 1 / math.sqrt(h), (h, n)), np.zeros(n))
    return ModelParams(tuple(classes), architecture, weights, preprocess)


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def _forward(model: ModelParams, x: np.ndarray
             ) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    if model.architecture.kind == LINEAR:
        w, b = model.weights
        return softmax(x @ w + b), None
    w1, b1, w2, b2 = model.weights
    hidden = np.tanh(x @ w1 + b1)
    return softmax(hidden @ w2 + b2), hidden


def loss(model: ModelParams, x: np.ndarray, y: np.ndarray,
         l2: float = 0.0) -> float:
    """ Mean cross-entropy plus ``l2 / 2`` times the squared weights."""
    probabilities, _ = _forward(model, x)
    picked = probabilities[np.arange(len(y)), y]
    penalty = sum(float((w ** 2).sum()) for w in model.weights[::2])
    return float(-np.log(np.maximum(picked, 1e-300)).mean()
                 + 0.5 * l2 * penalty)


def gradients(model: ModelParams, x: np.ndarray, y: np.ndarray,
              l2: float = 0.0) -> Tuple[np.ndarray, ...]:
    """ Analytic gradients of ``loss`` for every weight array."""
    probabilities, hidden = _forward(model, x)
    delta = probabilities.copy()
    delta[np.arange(len(y)), y] -= 1
    delta /= len(y)
    if hidden is None:
        w, _ = model.weights
        return x.T @ delta + l2 * w, delta.sum(axis=0)
    w1, _, w2, _ = model.weights
    back = (delta @ w2.T) * (1 - hidden ** 2)
    return (x.T @ back + l2 * w1, back.sum(axis=0),
            hidden.T @ delta + l2 * w2, delta.sum(axis=0))


GradientFn = Callable[[ModelParams, np.ndarray, np.ndarray],
                      Tuple[np.ndarray, ...]]


def gradient_check(model: ModelParams, x: np.ndarray, y: np.ndarray,
                   gradient_fn: Optional[GradientFn] = None,
                   n_params: int = 100, step: float = 1e-5,
                   l2: float = 0.0, seed: int = 0) -> float:
    """
    Largest relative error of analytic against central-difference gradients.

    :param gradient_fn: analytic gradients to check, ``gradients`` by default
    :param n_params: parameters sampled (all of them if fewer)
    """
    if not len(y):
        raise errors.InvalidParameters('gradient check needs a batch')
    def default(m: ModelParams, xs: np.ndarray,
                ys: np.ndarray) -> Tuple[np.ndarray, ...]:
        return gradients(m, xs, ys, l2)

    check = gradient_fn or default
    analytic = np.concatenate([g.ravel() for g in check(model, x, y)])
    base = model.flat()
    rng = np.random.default_rng(seed)
    picked = rng.choice(base.size, size=min(n_params, base.size),
                        replace=False)
    worst = 0.0
    for index in picked:
        plus, minus = base.copy(), base.copy()
        plus[index] += step
        minus[index] -= step
        numeric = (loss(model.with_flat(plus), x, y, l2)
                   - loss(model.with_flat(minus), x, y, l2)) / (2 * step)
        a = float(analytic[index])
        error = abs(a - numeric) / max(abs(a), abs(numeric), 1e-4)
        worst = max(worst, error)
    return worst


def predict_batch(model: ModelParams, x: np.ndarray) -> np.ndarray:
    if x.ndim != 2 or x.shape[1] != model.input_size:
        raise errors.DimensionMismatch(
            f'model takes {model.input_size} inputs, got {x.shape}')
    probabilities, _ = _forward(model, x)
    return probabilities


def predict(model: ModelParams, image: GreyImage) -> np.ndarray:
    """
    Class probabilities of one preprocessed image.

    :raises DimensionMismatch: the image is not the model input size
    """
    if image.shape != model.preprocess.output_shape:
        raise errors.DimensionMismatch(
            f'model takes {model.preprocess.output_shape} images, '
            f'got {image.shape}')
    return predict_batch(model, image.values.reshape(1, -1))[0]


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.005
    batch_size: int = 32
    epochs: int = 150
    l2: float = 1e-4
    seed: int = 0
    # 'weighted': per-class sampling weights; 'none': plain shuffling
    balance: str = 'weighted'
    augment: bool = True
    augmentation: AugmentationConfig = field(
        default_factory=AugmentationConfig)

    def __post_init__(self) -> None:
        if (self.learning_rate <= 0 or self.batch_size <= 0
                or self.epochs <= 0):
            raise errors.InvalidParameters(
                'learning rate, batch size and epochs must be positive')
        if self.l2 < 0:
            raise errors.InvalidParameters('l2 must be non-negative')
        if self.balance not in ('weighted', 'none'):
            raise errors.InvalidParameters(
                f'unknown balancing {self.balance!r}')

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


class TrainResult(NamedTuple):
    model: ModelParams
    history: Tuple[float, ...]
    accuracy: float

    def history_csv(self) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator='\n')
        writer.writerow(['epoch', 'loss'])
        for epoch, value in enumerate(self.history, start=1):
            writer.writerow([epoch, repr(value)])
        return buffer.getvalue()


def _sample_order(y: np.ndarray, balance: str,
                  rng: np.random.Generator) -> np.ndarray:
    if balance == 'none':
        return rng.permutation(len(y))
    counts = np.bincount(y)
    weights = 1.0 / counts[y]
    return rng.choice(len(y), size=len(y), replace=True,
                      p=weights / weights.sum())


def train(x: np.ndarray, y: np.ndarray, classes: Sequence[str],
          architecture: Architecture = Architecture(),
          config: TrainConfig = TrainConfig(),
          preprocess: PreprocessConfig = PreprocessConfig()) -> TrainResult:
    """
    Mini-batch SGD on softmax cross-entropy.

    Each epoch draws its sample order from the seeded stream, with
    per-class sampling weights when balancing; augmentation, on unless
    ``config.augment`` is cleared, transforms each drawn image on the fly.

    :param x: flattened preprocessed images, one per row
    :param y: class indices into ``classes``
    :raises SingleClassData: fewer than two classes present
    :return: model, per-epoch training loss and final training accuracy
    """
    y = np.asarray(y, dtype=np.int64)
    if len(np.unique(y)) < 2:
        raise errors.SingleClassData('training data holds a single class')
    model = init_model(classes, architecture, preprocess, config.seed)
    if x.shape[1] != model.input_size:
        raise errors.DimensionMismatch(
            f'model takes {model.input_size} inputs, got {x.shape}')
    rng = np.random.default_rng([config.seed, 1])
    shape = preprocess.output_shape
    history: List[float] = []
    for epoch in range(config.epochs):
        order = _sample_order(y, config.balance, rng)
        draws = rng.integers(0, 2 ** 32, size=len(order))
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            xb = x[batch]
            if config.augment:
                xb = np.stack([
                    augment(GreyImage(row.reshape(shape)), config.augmentation,
                            int(draw)).values.ravel()
                    for row, draw in zip(xb, draws[start:start + len(batch)])])
            grads = gradients(model, xb, y[batch], config.l2)
            model = ModelParams(
                model.classes, model.architecture,
                tuple(w - config.learning_rate * g
                      for w, g in zip(model.weights, grads)),
                model.preprocess)
        history.append(loss(model, x, y, config.l2))
        logger.debug('epoch %d loss %.6f', epoch + 1, history[-1])
    accuracy = float((predict_batch(model, x).argmax(axis=1) == y).mean())
    logger.info('trained %s model on %d images: loss %.4f, accuracy %.4f',
                architecture, len(y), history[-1], accuracy)
    return TrainResult(model, tuple(history), accuracy)


def shuffle_labels(y: Sequence[int], seed: int) -> np.ndarray:
    """ Randomly permuted labels for the chance-level control."""
    return np.random.default_rng(seed).permutation(np.asarray(y))


def save_model(model: ModelParams, path: PathLike) -> None:
    """ ``FSMODEL1``, descriptor length, JSON descriptor, float64 weights."""
    descriptor = {
        'version': MODEL_VERSION,
        'classes': list(model.classes),
        'architecture': str(model.architecture),
        'shapes': [list(w.shape) for w in model.weights],
        'preprocess': model.preprocess.to_dict(),
    }
    header = json.dumps(descriptor, sort_keys=True).encode('utf-8')
    payload = b''.join(w.astype('<f8').tobytes() for w in model.weights)
    data = MODEL_MAGIC + struct.pack('<I', len(header)) + header + payload
    try:
        Path(path).write_bytes(data)
    except OSError as exc:
        raise errors.IOFailure(f'{path}: {exc.strerror or exc}') from exc


def load_model(path: PathLike) -> ModelParams:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise errors.IOFailure(f'{path}: {exc.strerror or exc}') from exc
    if not data.startswith(MODEL_MAGIC) or len(data) < len(MODEL_MAGIC) + 4:
        raise errors.MalformedFile(f'{path}: not a model file')
    start = len(MODEL_MAGIC)
    (size,) = struct.unpack('<I', data[start:start + 4])
    try:
        descriptor = json.loads(data[start + 4:start + 4 + size])
        if descriptor['version'] != MODEL_VERSION:
            raise ValueError(f'unsupported version {descriptor["version"]}')
        offset = start + 4 + size
        arrays = []
        for shape in descriptor['shapes']:
            count = int(np.prod(shape))
            chunk = data[offset:offset + 8 * count]
            if len(chunk) != 8 * count:
                raise ValueError('truncated weights')
            arrays.append(np.frombuffer(chunk, dtype='<f8').reshape(shape))
            offset += 8 * count
        if offset != len(data):
            raise ValueError('trailing bytes')
        return ModelParams(tuple(descriptor['classes']),
                           Architecture.parse(descriptor['architecture']),
                           tuple(arrays),
                           PreprocessConfig.from_dict(
                               descriptor['preprocess']))
    except (ValueError, KeyError, TypeError,
            errors.ValidationError) as exc:
        raise errors.MalformedFile(f'{path}: {exc}') from exc


class Examples(NamedTuple):
    """ Preprocessed frames of a manifest, flattened one per row."""
    x: np.ndarray
    views: Tuple[ViewLabel, ...]
    lesions: Tuple[LesionClass, ...]
    keys: Tuple[Tuple[str, str], ...]


def load_examples(manifest: StudyManifest,
                  preprocess_config: PreprocessConfig = PreprocessConfig(),
                  views: Optional[Iterable[ViewLabel]] = None,
                  threads: int = 1) -> Examples:
    """ Loads and preprocesses frames in manifest order."""
    wanted = set(ViewLabel if views is None else views)
    records = [(study, frame) for study in manifest.studies
               for frame in study.frames if frame.view in wanted]

    def load(path: str) -> np.ndarray:
        image = preprocess(load_image(manifest.resolve(path)),
                           preprocess_config)
        return image.values.ravel()

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        rows = list(pool.map(load, [f.image for _, f in records]))
    rows_out, cols_out = preprocess_config.output_shape
    size = rows_out * cols_out
    x = np.stack(rows) if rows else np.zeros((0, size))
    return Examples(x, tuple(f.view for _, f in records),
                    tuple(s.lesion for s, _ in records),
                    tuple((s.study_id, f.frame_id) for s, f in records))


def view_targets(examples: Examples) -> np.ndarray:
    return np.array([int(v) for v in examples.views], dtype=np.int64)


@dataclass(frozen=True)
class FramePrediction:
    """ One CSV row: five view probabilities, or ``(p_abnormal,)`` with a
    task."""
    study_id: str
    frame_id: str
    view: ViewLabel
    probabilities: Tuple[float, ...]
    task: Optional[DiagnosticTask] = None


@dataclass(frozen=True)
class PredictionTable:
    kind: str  # 'view' or 'lesion'
    rows: Tuple[FramePrediction, ...]

    def view_sets(self, task: DiagnosticTask) -> Dict[str, ViewPredictionSet]:
        """ Lesion predictions of ``task`` grouped per study."""
        grouped: Dict[str, Dict[ViewLabel, List[float]]] = {}
        for row in self.rows:
            if row.task is not task:
                continue
            views = grouped.setdefault(row.study_id, {})
            views.setdefault(row.view, []).append(row.probabilities[0])
        return {study_id: ViewPredictionSet(study_id, task, {
                    v: tuple(p) for v, p in views.items()})
                for study_id, views in grouped.items()}

    @property
    def tasks(self) -> Tuple[DiagnosticTask, ...]:
        return tuple(t for t in DiagnosticTask
                     if any(r.task is t for r in self.rows))


def _probability(text: str, where: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise errors.MalformedFile(f'{where}: not a number {text!r}') from None
    if not 0 <= value <= 1:
        raise errors.ProbabilityOutOfRange(f'{where}: {value!r}')
    return value


def import_predictions(path: PathLike) -> PredictionTable:
    """
    Reads a view or lesion prediction CSV.

    :raises MalformedFile: unknown header or bad row
    :raises ProbabilityOutOfRange: a probability outside [0, 1]
    """
    try:
        text = Path(path).read_text(encoding='utf-8')
    except OSError as exc:
        raise errors.IOFailure(f'{path}: {exc.strerror or exc}') from exc
    except UnicodeDecodeError as exc:
        raise errors.MalformedFile(f'{path}: {exc}') from exc
    reader = csv.reader(io.StringIO(text))
    header = tuple(next(reader, ()))
    if header == VIEW_HEADER:
        kind = 'view'
    elif header == LESION_HEADER:
        kind = 'lesion'
    else:
        raise errors.MalformedFile(f'{path}: unknown header {header}')
    rows = []
    for number, row in enumerate(reader, start=2):
        where = f'{path}:{number}'
        if not row:
            continue
        if len(row) != len(header):
            raise errors.MalformedFile(
                f'{where}: expected {len(header)} fields, got {len(row)}')
        try:
            view = ViewLabel.from_code(row[2])
            task = DiagnosticTask(row[3]) if kind == 'lesion' else None
        except ValueError as exc:
            raise errors.MalformedFile(f'{where}: {exc}') from None
        values = row[4:] if kind == 'lesion' else row[3:]
        rows.append(FramePrediction(
            row[0], row[1], view,
            tuple(_probability(v, where) for v in values), task))
    return PredictionTable(kind, tuple(rows))


def export_predictions(table: PredictionTable, path: PathLike) -> None:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow(VIEW_HEADER if table.kind == 'view' else LESION_HEADER)
    for row in table.rows:
        probabilities = [repr(float(p)) for p in row.probabilities]
        if table.kind == 'view':
            writer.writerow([row.study_id, row.frame_id, row.view.code,
                             *probabilities])
        else:
            task = row.task.value if row.task is not None else ''
            writer.writerow([row.study_id, row.frame_id, row.view.code, task,
                             *probabilities])
    try:
        Path(path).write_text(buffer.getvalue(), encoding='utf-8')
    except OSError as exc:
        raise errors.IOFailure(f'{path}: {exc.strerror or exc}') from exc


def predict_views(model: ModelParams, examples: Examples) -> PredictionTable:
    probabilities = predict_batch(model, examples.x)
    return PredictionTable('view', tuple(
        FramePrediction(study, frame, view, tuple(float(p) for p in row))
        for (study, frame), view, row in zip(examples.keys, examples.views,
                                             probabilities)))


@dataclass(frozen=True)
class LesionModelSet:
    """ One binary normal-vs-lesion model per view for a task."""
    task: DiagnosticTask
    models: Mapping[ViewLabel, ModelParams]

    def predict(self, examples: Examples) -> PredictionTable:
        """ ``p_abnormal`` for every frame whose view has a model."""
        rows: List[FramePrediction] = []
        for index, view in enumerate(examples.views):
            model = self.models.get(view)
            if model is None:
                continue
            p = predict_batch(model, examples.x[index:index + 1])[0]
            rows.append(FramePrediction(
                examples.keys[index][0], examples.keys[index][1], view,
                (float(p[LESION_CLASSES.index('chd')]),), self.task))
        return PredictionTable('lesion', tuple(rows))


def lesion_targets(examples: Examples, task: DiagnosticTask
                   ) -> Tuple[np.ndarray, np.ndarray]:
    """ Row mask of studies in the task and their 0/1 targets."""
    keep = np.array([task.covers(lesion) for lesion in examples.lesions],
                    dtype=bool)
    y = np.array([int(task.is_positive(lesion))
                  for lesion in examples.lesions], dtype=np.int64)
    return keep, y


def train_lesion_models(examples: Examples, task: DiagnosticTask,
                        architecture: Architecture = Architecture(),
                        config: TrainConfig = TrainConfig(),
                        preprocess_config: PreprocessConfig = (
                            PreprocessConfig()),
                        shuffle: bool = False
                        ) -> Tuple[LesionModelSet,
                                   Dict[ViewLabel, TrainResult]]:
    """
    Trains a normal-vs-lesion model for each view present in ``examples``.

    :param shuffle: permute labels per view (chance-level control)
    """
    keep, y = lesion_targets(examples, task)
    views = np.array([int(v) for v in examples.views])
    models: Dict[ViewLabel, ModelParams] = {}
    results: Dict[ViewLabel, TrainResult] = {}
    for view in ViewLabel:
        rows = keep & (views == int(view))
        if not rows.any():
            continue
        targets = y[rows]
        if shuffle:
            targets = shuffle_labels(targets, config.seed + int(view))
        result = train(examples.x[rows], targets, LESION_CLASSES,
                       architecture, config, preprocess_config)
        models[view] = result.model
        results[view] = result
    return LesionModelSet(task, models), results
