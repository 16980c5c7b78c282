""" Label schemas, raster files, study manifests and study-level splits.

Every other module consumes the types defined here. All of them are immutable
after construction; raster arrays are stored read-only.
"""
import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import (Any, Dict, FrozenSet, Iterable, List, Mapping, Tuple,
                    Type, Union)

import numpy as np

from chd_screen import errors

PathLike = Union[str, Path]

MASK_MAGIC = 'FSMASK'
IMAGE_MAGIC = 'FSIMG'


class ViewLabel(enum.IntEnum):
    """ Five canonical screening views; ordinals fix bitstring positions."""
    THREE_VT = 0
    THREE_VV = 1
    A5C = 2
    A4C = 3
    ABDO = 4

    @property
    def code(self) -> str:
        """ Manifest/CSV spelling of the view."""
        return _VIEW_CODES[self]

    @classmethod
    def from_code(cls, code: str) -> 'ViewLabel':
        try:
            return _VIEW_BY_CODE[code]
        except KeyError:
            raise ValueError(f'unknown view {code!r}') from None


_VIEW_CODES = {
    ViewLabel.THREE_VT: '3vt',
    ViewLabel.THREE_VV: '3vv',
    ViewLabel.A5C: 'a5c',
    ViewLabel.A4C: 'a4c',
    ViewLabel.ABDO: 'abdo',
}
_VIEW_BY_CODE = {v: k for k, v in _VIEW_CODES.items()}


class LesionClass(enum.Enum):
    NORMAL = 'normal'
    TOF = 'tof'
    HLHS = 'hlhs'


class AxisLabel(enum.IntEnum):
    BACKGROUND = 0
    THORAX = 1
    HEART = 2
    SPINE = 3
    SEPTUM = 4


class CardiothoracicLabel(enum.IntEnum):
    BACKGROUND = 0
    THORAX = 1
    HEART = 2


class ChamberLabel(enum.IntEnum):
    BACKGROUND = 0
    LV = 1
    RV = 2
    LA = 3
    RA = 4


class MaskSchema(enum.Enum):
    """ Label schema of a mask; the value is the file header name."""
    AXIS = 'AXIS'
    CARDIOTHORACIC = 'CTR'
    CHAMBERS = 'CHAMBERS'

    @property
    def labels(self) -> Type[enum.IntEnum]:
        return _SCHEMA_LABELS[self]

    @property
    def max_code(self) -> int:
        return max(int(code) for code in self.labels)

    @property
    def manifest_key(self) -> str:
        """ Frame field holding a mask path of this schema."""
        return _MANIFEST_KEYS[self]


_SCHEMA_LABELS: Dict[MaskSchema, Type[enum.IntEnum]] = {
    MaskSchema.AXIS: AxisLabel,
    MaskSchema.CARDIOTHORACIC: CardiothoracicLabel,
    MaskSchema.CHAMBERS: ChamberLabel,
}
_MANIFEST_KEYS = {
    MaskSchema.AXIS: 'mask_axis',
    MaskSchema.CARDIOTHORACIC: 'mask_ctr',
    MaskSchema.CHAMBERS: 'mask_chambers',
}


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class LabelMask:
    """ Single-channel raster of structure labels under one schema."""
    schema: MaskSchema
    labels: np.ndarray

    def __post_init__(self) -> None:
        raw = np.asarray(self.labels)
        if raw.ndim != 2 or 0 in raw.shape:
            raise errors.InvalidParameters(
                f'mask must be a non-empty 2-d grid, got shape {raw.shape}')
        if raw.dtype.kind not in 'iub':
            raise errors.InvalidLabel(f'non-integer label codes ({raw.dtype})')
        low, high = int(raw.min()), int(raw.max())
        if low < 0 or high > self.schema.max_code:
            bad = low if low < 0 else high
            raise errors.InvalidLabel(
                f'code {bad} is not valid for schema {self.schema.value}')
        object.__setattr__(self, 'labels', _frozen(raw.astype(np.uint8)))

    @property
    def height(self) -> int:
        return int(self.labels.shape[0])

    @property
    def width(self) -> int:
        return int(self.labels.shape[1])

    @property
    def shape(self) -> Tuple[int, int]:
        return self.height, self.width

    def binary(self, label: int) -> np.ndarray:
        """ Boolean raster of one label."""
        return self.labels == label

    def with_labels(self, labels: np.ndarray) -> 'LabelMask':
        """ New mask of the same schema."""
        return LabelMask(self.schema, labels)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LabelMask):
            return NotImplemented
        return (self.schema is other.schema
                and np.array_equal(self.labels, other.labels))


@dataclass(frozen=True, eq=False)
class GreyImage:
    """ Greyscale raster with intensities in [0, 1]."""
    values: np.ndarray

    def __post_init__(self) -> None:
        raw = np.asarray(self.values, dtype=np.float64)
        if raw.ndim != 2 or 0 in raw.shape:
            raise errors.InvalidParameters(
                f'image must be a non-empty 2-d grid, got shape {raw.shape}')
        if not np.all(np.isfinite(raw)) or raw.min() < 0 or raw.max() > 1:
            raise errors.InvalidParameters('intensities must lie in [0, 1]')
        object.__setattr__(self, 'values', _frozen(raw))

    @property
    def height(self) -> int:
        return int(self.values.shape[0])

    @property
    def width(self) -> int:
        return int(self.values.shape[1])

    @property
    def shape(self) -> Tuple[int, int]:
        return self.height, self.width

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, GreyImage):
            return NotImplemented
        return np.array_equal(self.values, other.values)


def _read_bytes(path: PathLike) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise errors.IOFailure(f'{path}: {exc.strerror or exc}') from exc


def _write_bytes(path: PathLike, data: bytes) -> None:
    try:
        Path(path).write_bytes(data)
    except OSError as exc:
        raise errors.IOFailure(f'{path}: {exc.strerror or exc}') from exc


def _parse_raster(path: PathLike, magic: str, n_fields: int
                  ) -> Tuple[List[str], int, int, bytes]:
    """ Splits a raster file into header fields, dimensions and payload."""
    data = _read_bytes(path)
    end = data.find(b'\n')
    if end < 0:
        raise errors.MalformedFile(f'{path}: missing header line')
    try:
        fields = data[:end].decode('ascii').split(' ')
    except UnicodeDecodeError:
        raise errors.MalformedFile(f'{path}: non-ascii header') from None
    if len(fields) != n_fields or fields[0] != magic:
        raise errors.MalformedFile(f'{path}: expected {magic} header')
    try:
        width, height = int(fields[-2]), int(fields[-1])
    except ValueError:
        raise errors.MalformedFile(f'{path}: bad dimensions') from None
    if width <= 0 or height <= 0:
        raise errors.MalformedFile(f'{path}: bad dimensions')
    payload = data[end + 1:]
    if len(payload) != width * height:
        raise errors.MalformedFile(
            f'{path}: payload has {len(payload)} cells, '
            f'header declares {width * height}')
    return fields, width, height, payload


def load_mask(path: PathLike, schema: MaskSchema) -> LabelMask:
    """ Reads an ``FSMASK`` raster and validates its codes against schema."""
    fields, width, height, payload = _parse_raster(path, MASK_MAGIC, 4)
    if fields[1] != schema.value:
        raise errors.MalformedFile(
            f'{path}: declares schema {fields[1]}, expected {schema.value}')
    labels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width)
    return LabelMask(schema, labels)


def save_mask(mask: LabelMask, path: PathLike) -> None:
    header = f'{MASK_MAGIC} {mask.schema.value} {mask.width} {mask.height}\n'
    _write_bytes(path, header.encode('ascii') + mask.labels.tobytes())


def load_image(path: PathLike) -> GreyImage:
    _, width, height, payload = _parse_raster(path, IMAGE_MAGIC, 3)
    values = np.frombuffer(payload, dtype=np.uint8).reshape(height, width)
    return GreyImage(values / 255.0)


def save_image(image: GreyImage, path: PathLike) -> None:
    """ Writes an ``FSIMG`` raster, quantizing intensities to 0..255."""
    header = f'{IMAGE_MAGIC} {image.width} {image.height}\n'
    payload = np.rint(image.values * 255).astype(np.uint8).tobytes()
    _write_bytes(path, header.encode('ascii') + payload)


@dataclass(frozen=True)
class FrameRecord:
    frame_id: str
    view: ViewLabel
    image: str
    masks: Mapping[MaskSchema, str] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, str]:
        data = {
            'frame_id': self.frame_id,
            'view': self.view.code,
            'image': self.image,
        }
        for schema in MaskSchema:
            if schema in self.masks:
                data[schema.manifest_key] = self.masks[schema]
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> 'FrameRecord':
        masks = {schema: str(data[schema.manifest_key])
                 for schema in MaskSchema if schema.manifest_key in data}
        return cls(frame_id=str(data['frame_id']),
                   view=ViewLabel.from_code(data['view']),
                   image=str(data['image']),
                   masks=masks)


@dataclass(frozen=True)
class StudyRecord:
    study_id: str
    lesion: LesionClass
    frames: Tuple[FrameRecord, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, 'frames', tuple(self.frames))
        ids = [f.frame_id for f in self.frames]
        if len(set(ids)) != len(ids):
            raise errors.InvalidParameters(
                f'duplicate frame ids in study {self.study_id}')

    @property
    def image_count(self) -> int:
        return len(self.frames)

    def frames_of(self, view: ViewLabel) -> Tuple[FrameRecord, ...]:
        return tuple(f for f in self.frames if f.view is view)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'study_id': self.study_id,
            'lesion': self.lesion.value,
            'frames': [f.to_dict() for f in self.frames],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> 'StudyRecord':
        return cls(study_id=str(data['study_id']),
                   lesion=LesionClass(data['lesion']),
                   frames=tuple(FrameRecord.from_dict(f)
                                for f in data['frames']))


@dataclass(frozen=True)
class StudyManifest:
    """ Studies with their frames; paths are relative to ``root``."""
    studies: Tuple[StudyRecord, ...]
    root: Path = Path('.')

    def __post_init__(self) -> None:
        object.__setattr__(self, 'studies', tuple(self.studies))
        ids = [s.study_id for s in self.studies]
        if len(set(ids)) != len(ids):
            raise errors.InvalidParameters('duplicate study ids in manifest')

    @property
    def study_ids(self) -> Tuple[str, ...]:
        return tuple(s.study_id for s in self.studies)

    @property
    def image_count(self) -> int:
        return sum(s.image_count for s in self.studies)

    def study(self, study_id: str) -> StudyRecord:
        for study in self.studies:
            if study.study_id == study_id:
                return study
        raise KeyError(study_id)

    def subset(self, study_ids: Iterable[str]) -> 'StudyManifest':
        """ Manifest restricted to the given studies, keeping file order."""
        wanted = set(study_ids)
        return StudyManifest(
            tuple(s for s in self.studies if s.study_id in wanted), self.root)

    def resolve(self, relative: str) -> Path:
        return self.root / relative

    def to_json(self) -> List[Dict[str, Any]]:
        return [s.to_dict() for s in self.studies]


def load_manifest(path: PathLike) -> StudyManifest:
    path = Path(path)
    try:
        data = json.loads(_read_bytes(path).decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise errors.MalformedFile(f'{path}: {exc}') from exc
    if not isinstance(data, list):
        raise errors.MalformedFile(f'{path}: top level must be an array')
    try:
        studies = tuple(StudyRecord.from_dict(s) for s in data)
        return StudyManifest(studies, path.parent)
    except (KeyError, TypeError, ValueError, errors.ValidationError) as exc:
        raise errors.MalformedFile(f'{path}: {exc!r}') from exc


def save_manifest(manifest: StudyManifest, path: PathLike) -> None:
    text = json.dumps(manifest.to_json(), indent=2) + '\n'
    _write_bytes(path, text.encode('utf-8'))


@dataclass(frozen=True)
class DatasetSplit:
    """ Partition of study ids into training and holdout sides."""
    train: FrozenSet[str]
    test: FrozenSet[str]
    seed: int
    target_ratio: float
    achieved_ratio: float

    def __post_init__(self) -> None:
        object.__setattr__(self, 'train', frozenset(self.train))
        object.__setattr__(self, 'test', frozenset(self.test))
        if self.train & self.test:
            raise errors.InvalidParameters('split sides overlap')

    def to_dict(self) -> Dict[str, Any]:
        return {
            'seed': self.seed,
            'target_ratio': self.target_ratio,
            'achieved_ratio': self.achieved_ratio,
            'train': sorted(self.train),
            'test': sorted(self.test),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> 'DatasetSplit':
        return cls(train=frozenset(data['train']),
                   test=frozenset(data['test']),
                   seed=int(data['seed']),
                   target_ratio=float(data['target_ratio']),
                   achieved_ratio=float(data['achieved_ratio']))


def save_split(split: DatasetSplit, path: PathLike) -> None:
    text = json.dumps(split.to_dict(), indent=2) + '\n'
    _write_bytes(path, text.encode('utf-8'))


def load_split(path: PathLike) -> DatasetSplit:
    try:
        return DatasetSplit.from_dict(
            json.loads(_read_bytes(path).decode('utf-8')))
    except (UnicodeDecodeError, ValueError, KeyError, TypeError,
            errors.ValidationError) as exc:
        raise errors.MalformedFile(f'{path}: {exc!r}') from exc


def split_by_study(manifest: StudyManifest, ratio: float,
                   seed: int) -> DatasetSplit:
    """
    Splits studies into train/test sides with a greedy image-count fill.

    Studies are grouped by lesion class and shuffled with the seed; each class
    fills its holdout side greedily toward ``(1 - ratio)`` of its images, so
    the classes stay stratified and no study contributes to both sides.

    :param manifest: studies to split
    :param ratio: target fraction of images on the training side
    :param seed: shuffle seed
    :return: study-level partition
    """
    if not 0 < ratio < 1:
        raise errors.InvalidParameters(f'ratio must be in (0, 1), got {ratio}')
    if len(manifest.studies) < 2:
        raise errors.TooFewStudies(
            f'need at least 2 studies, got {len(manifest.studies)}')
    rng = np.random.default_rng(seed)
    test: List[StudyRecord] = []
    for lesion in LesionClass:
        group = sorted((s for s in manifest.studies if s.lesion is lesion),
                       key=lambda s: s.study_id)
        if not group:
            continue
        order = [group[i] for i in rng.permutation(len(group))]
        target = (1 - ratio) * sum(s.image_count for s in group)
        held: List[StudyRecord] = []
        count = 0
        for study in order:
            if abs(count + study.image_count - target) < abs(count - target):
                held.append(study)
                count += study.image_count
        if len(group) >= 2:
            # each class with two studies shows up on both sides
            if not held:
                held.append(order[0])
            elif len(held) == len(group):
                held.pop()
        test.extend(held)

    test_ids = frozenset(s.study_id for s in test)
    train_ids = frozenset(manifest.study_ids) - test_ids
    total = manifest.image_count
    if total:
        train_images = sum(s.image_count for s in manifest.studies
                           if s.study_id in train_ids)
        achieved = train_images / total
    else:
        achieved = len(train_ids) / len(manifest.studies)
    return DatasetSplit(train=train_ids, test=test_ids, seed=seed,
                        target_ratio=ratio, achieved_ratio=achieved)


def split_manifest(manifest: StudyManifest, split: DatasetSplit
                   ) -> Tuple[StudyManifest, StudyManifest]:
    """ Training and holdout manifests of a split."""
    return manifest.subset(split.train), manifest.subset(split.test)
