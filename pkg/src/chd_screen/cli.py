""" ``chd-screen`` command line.

Exit codes: 0 success, 2 bad arguments, 3 unreadable or unwritable input
or output, 4 validation failure. Diagnostics go to stderr; stdout only
carries the paths of written artifacts.
"""
import argparse
import csv
import io
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import (Any, Callable, Dict, List, Mapping, Optional, Sequence,
                    Tuple)

import numpy as np

from chd_screen import (biometrics, classifier, config, diagnosis, errors,
                        evaluation, masks, phantom)
from chd_screen.masks import (LabelMask, MaskSchema, StudyManifest,
                              StudyRecord, ViewLabel)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2

SUMMARY_FIELDS = ('study_id', 'ctr', 'ca', 'fac_lv', 'fac_rv', 'fac_la',
                  'fac_ra', 'status')
RATE_FIELDS = ('task', 'sensitivity', 'specificity', 'accuracy', 'ppv',
               'npv', 'selected_views', 'studies')

Command = Callable[[config.RunConfig], List[Path]]


def _at_least(minimum: int) -> Callable[[str], int]:
    def parse(text: str) -> int:
        try:
            value = int(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f'{text!r} is not an integer')
        if value < minimum:
            raise argparse.ArgumentTypeError(f'must be at least {minimum}')
        return value
    return parse


def _fractions(count: Optional[int]) -> Callable[[str], Tuple[float, ...]]:
    def parse(text: str) -> Tuple[float, ...]:
        try:
            values = tuple(float(v) for v in text.split(','))
        except ValueError:
            raise argparse.ArgumentTypeError(f'bad number list {text!r}')
        if count is not None and len(values) != count:
            raise argparse.ArgumentTypeError(f'need {count} values')
        if any(not 0 <= v <= 1 for v in values):
            raise argparse.ArgumentTypeError('values must be in [0, 1]')
        return values
    return parse


def _fraction(text: str) -> float:
    (value,) = _fractions(1)(text)
    return value


def _shape(text: str) -> Tuple[int, int]:
    """ ``ROWSxCOLS``, e.g. ``300x400``."""
    try:
        rows, cols = (int(v) for v in text.lower().split('x'))
    except ValueError:
        raise argparse.ArgumentTypeError(f'bad shape {text!r}') from None
    if rows <= 0 or cols <= 0:
        raise argparse.ArgumentTypeError('shape must be positive')
    return rows, cols


def _as_shape(value: Any) -> Tuple[int, int]:
    rows, cols = value
    return int(rows), int(cols)


def _make_dir(path: Path) -> Path:
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise errors.IOFailure(f'{path}: {exc.strerror or exc}') from exc
    return path


def _write_text(path: Path, text: str) -> Path:
    _make_dir(path.parent)
    try:
        path.write_text(text, encoding='utf-8')
    except OSError as exc:
        raise errors.IOFailure(f'{path}: {exc.strerror or exc}') from exc
    return path


def _write_json(path: Path, data: Any) -> Path:
    return _write_text(path, json.dumps(data, indent=2, sort_keys=True)
                       + '\n')


def _csv(rows: Sequence[Sequence[Any]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerows(rows)
    return buffer.getvalue()


def _cell(value: Any) -> str:
    if value is None:
        return ''
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _scope(run: config.RunConfig) -> StudyManifest:
    """ Manifest restricted to the split side named by ``--side``."""
    manifest = masks.load_manifest(run['manifest'])
    if run.get('split') is None:
        return manifest
    split = masks.load_split(run['split'])
    train, test = masks.split_manifest(manifest, split)
    return train if run.get('side', 'test') == 'train' else test


# phantom

PHANTOM_DEFAULTS: Dict[str, Any] = {
    'studies': 20,
    'lesion_mix': (0.72, 0.13, 0.15),
    'image_shape': (300, 400),
    'frames_per_view': 2,
    'a4c_frames': 12,
    'a4c_period': 6,
    'noise': 0.1,
    'severity': 1.0,
}


def cmd_phantom(run: config.RunConfig) -> List[Path]:
    motifs = phantom.ViewMotifParams(
        image_shape=_as_shape(run['image_shape']),
        frames_per_view=run['frames_per_view'],
        a4c_frames=run['a4c_frames'],
        a4c_period=run['a4c_period'],
        lesion_severity=run['severity'],
        noise_level=run['noise'],
        seed=run.seed,
    )
    phantom.generate_view_dataset(run['studies'], motifs, run['lesion_mix'],
                                  run.out, threads=run.threads)
    return [run.out / 'manifest.json']


# measure

MEASURE_DEFAULTS: Dict[str, Any] = {
    'manifest': None,
    'schemas': ('AXIS', 'CTR', 'CHAMBERS'),
    'min_containment': 0.95,
}


class _MaskCache:
    """ Loads each mask file of a study once."""

    def __init__(self, manifest: StudyManifest,
                 schemas: Sequence[MaskSchema]):
        self.manifest = manifest
        self.schemas = set(schemas)
        self.loaded: Dict[Tuple[str, MaskSchema], LabelMask] = {}

    def get(self, frame: masks.FrameRecord,
            schema: MaskSchema) -> Optional[LabelMask]:
        path = frame.masks.get(schema)
        if path is None or schema not in self.schemas:
            return None
        key = (path, schema)
        if key not in self.loaded:
            self.loaded[key] = masks.load_mask(self.manifest.resolve(path),
                                               schema)
        return self.loaded[key]


MeasureOutcome = Tuple[str, Optional[biometrics.BiometricReport], str]


def _measure_one(manifest: StudyManifest, study: StudyRecord,
                 schemas: Sequence[MaskSchema],
                 measure_config: biometrics.MeasureConfig) -> MeasureOutcome:
    cache = _MaskCache(manifest, schemas)
    try:
        frames = [biometrics.StudyFrame(
            frame.frame_id,
            axis=cache.get(frame, MaskSchema.AXIS),
            cardiothoracic=cache.get(frame, MaskSchema.CARDIOTHORACIC),
            chambers=cache.get(frame, MaskSchema.CHAMBERS))
            for frame in study.frames_of(ViewLabel.A4C)]
        if all(f.axis is None and f.cardiothoracic is None
               and f.chambers is None for f in frames):
            return study.study_id, None, 'no masks'
        report = biometrics.measure_study(frames, measure_config)
    except (errors.InputError, errors.ValidationError) as exc:
        logger.warning('%s: %s', study.study_id, exc)
        return study.study_id, None, str(exc)
    return study.study_id, report, 'ok'


def cmd_measure(run: config.RunConfig) -> List[Path]:
    try:
        schemas = [MaskSchema(name) for name in run['schemas']]
    except ValueError:
        raise errors.UsageError(
            '--schemas: expected AXIS, CTR or CHAMBERS, got '
            f'{", ".join(run["schemas"])}') from None
    manifest = masks.load_manifest(run['manifest'])
    measure_config = biometrics.MeasureConfig(
        min_containment=run['min_containment'])

    def measure(study: StudyRecord) -> MeasureOutcome:
        return _measure_one(manifest, study, schemas, measure_config)

    with ThreadPoolExecutor(max_workers=max(1, run.threads)) as pool:
        outcomes = list(pool.map(measure, manifest.studies))

    written = []
    rows: List[List[str]] = [list(SUMMARY_FIELDS)]
    for study_id, report, status in outcomes:
        data: Dict[str, Any] = {'study_id': study_id, 'status': status}
        if report is None:
            rows.append([study_id] + [''] * 6 + [status])
        else:
            data.update(report.to_dict())
            fac = report.fac
            rows.append([study_id, _cell(report.ctr),
                         _cell(report.ca_degrees)]
                        + [_cell(fac.get(c)) for c in ('LV', 'RV', 'LA', 'RA')]
                        + [status])
            for series in report.area_series:
                written.append(_write_text(
                    run.out / 'series' / f'{study_id}-{series.chamber}.csv',
                    series.to_csv()))
        written.append(_write_json(run.out / 'reports' / f'{study_id}.json',
                                   data))
    written.insert(0, _write_text(run.out / 'summary.csv', _csv(rows)))
    return written


def read_summary(path: Path) -> Dict[str, List[Optional[float]]]:
    """ Metric columns of a ``measure`` summary CSV."""
    try:
        text = path.read_text(encoding='utf-8')
    except OSError as exc:
        raise errors.IOFailure(f'{path}: {exc.strerror or exc}') from exc
    reader = csv.DictReader(io.StringIO(text))
    metrics = [f for f in SUMMARY_FIELDS if f not in ('study_id', 'status')]
    if reader.fieldnames is None or not set(metrics) <= set(
            reader.fieldnames):
        raise errors.MalformedFile(f'{path}: not a measurement summary')
    table: Dict[str, List[Optional[float]]] = {m: [] for m in metrics}
    for row in reader:
        for metric in metrics:
            cell = row[metric]
            try:
                table[metric].append(float(cell) if cell else None)
            except ValueError:
                raise errors.MalformedFile(
                    f'{path}: bad {metric} value {cell!r}') from None
    return table


# train / predict

TRAIN_DEFAULTS: Dict[str, Any] = {
    'manifest': None,
    'split': None,
    'ratio': 0.8,
    'task': 'view',
    'arch': 'linear',
    'epochs': 150,
    'learning_rate': 0.005,
    'batch_size': 32,
    'l2': 1e-4,
    'balance': 'weighted',
    'augment': True,
    'shuffle_labels': False,
    'source_shape': (300, 400),
    'crop_shape': (180, 240),
    'output_shape': (60, 80),
}


def _train_config(run: config.RunConfig) -> classifier.TrainConfig:
    return classifier.TrainConfig(
        learning_rate=run['learning_rate'], batch_size=run['batch_size'],
        epochs=run['epochs'], l2=run['l2'], seed=run.seed,
        balance=run['balance'], augment=run['augment'],
        augmentation=classifier.AugmentationConfig(seed=run.seed))


def _architecture(run: config.RunConfig) -> classifier.Architecture:
    try:
        return classifier.Architecture.parse(run['arch'])
    except errors.InvalidParameters as exc:
        raise errors.UsageError(f'--arch: {exc}') from None


def _lesion_task(value: str) -> diagnosis.DiagnosticTask:
    try:
        return diagnosis.DiagnosticTask(value)
    except ValueError:
        raise errors.UsageError(f'--task: unknown task {value!r}') from None


def _model_path(directory: Path, task: str,
                view: Optional[ViewLabel] = None) -> Path:
    name = task if view is None else f'{task}-{view.code}'
    return directory / f'{name}.model'


def cmd_train(run: config.RunConfig) -> List[Path]:
    task = run['task']
    lesion_task = None if task == 'view' else _lesion_task(task)
    architecture = _architecture(run)
    manifest = masks.load_manifest(run['manifest'])
    _make_dir(run.out)
    written = []
    if run['split'] is None:
        split = masks.split_by_study(manifest, run['ratio'], run.seed)
        split_path = run.out / 'split.json'
        masks.save_split(split, split_path)
        written.append(split_path)
    else:
        split = masks.load_split(run['split'])
    train_manifest, _ = masks.split_manifest(manifest, split)
    train_config = _train_config(run)
    preprocess = classifier.PreprocessConfig(
        source_shape=_as_shape(run['source_shape']),
        crop_shape=_as_shape(run['crop_shape']),
        output_shape=_as_shape(run['output_shape']))

    if lesion_task is None:
        examples = classifier.load_examples(train_manifest, preprocess,
                                            threads=run.threads)
        y = classifier.view_targets(examples)
        if run['shuffle_labels']:
            y = classifier.shuffle_labels(y, run.seed)
        result = classifier.train(examples.x, y, classifier.VIEW_CLASSES,
                                  architecture, train_config, preprocess)
        path = _model_path(run.out, task)
        classifier.save_model(result.model, path)
        written += [path, _write_text(run.out / f'{task}-loss.csv',
                                      result.history_csv())]
        return written

    examples = classifier.load_examples(train_manifest, preprocess,
                                        threads=run.threads)
    model_set, results = classifier.train_lesion_models(
        examples, lesion_task, architecture, train_config, preprocess,
        shuffle=run['shuffle_labels'])
    for view, model in model_set.models.items():
        path = _model_path(run.out, task, view)
        classifier.save_model(model, path)
        written += [path, _write_text(
            run.out / f'{task}-{view.code}-loss.csv',
            results[view].history_csv())]
    return written


PREDICT_DEFAULTS: Dict[str, Any] = {
    'manifest': None,
    'split': None,
    'side': 'test',
    'models': None,
    'task': 'view',
}


def cmd_predict(run: config.RunConfig) -> List[Path]:
    manifest = _scope(run)
    directory = Path(run['models'])
    task = run['task']
    if task == 'view':
        model = classifier.load_model(_model_path(directory, task))
        examples = classifier.load_examples(manifest, model.preprocess,
                                            threads=run.threads)
        table = classifier.predict_views(model, examples)
    else:
        lesion_task = _lesion_task(task)
        models = {view: classifier.load_model(path)
                  for view in ViewLabel
                  for path in [_model_path(directory, task, view)]
                  if path.exists()}
        if not models:
            raise errors.IOFailure(f'{directory}: no {task} models')
        model_set = classifier.LesionModelSet(lesion_task, models)
        preprocess = next(iter(models.values())).preprocess
        examples = classifier.load_examples(manifest, preprocess,
                                            views=models,
                                            threads=run.threads)
        table = model_set.predict(examples)
    path = _make_dir(run.out) / f'{task}-predictions.csv'
    classifier.export_predictions(table, path)
    return [path]


# evaluate

EVALUATE_DEFAULTS: Dict[str, Any] = {
    'manifest': None,
    'split': None,
    'side': 'test',
    'predictions': None,
    'predicted_manifest': None,
    'measurements': None,
    'reference': None,
}


def _check_coverage(manifest: StudyManifest,
                    table: classifier.PredictionTable) -> None:
    predicted = {row.study_id for row in table.rows}
    missing = sorted(set(manifest.study_ids) - predicted)
    if missing:
        raise errors.MissingPredictions(
            f'no predictions for studies: {", ".join(missing)}')
    extra = sorted(predicted - set(manifest.study_ids))
    if extra:
        raise errors.MissingPredictions(
            f'studies missing from the manifest: {", ".join(extra)}')


def _evaluate_views(manifest: StudyManifest,
                    table: classifier.PredictionTable) -> Dict[str, Any]:
    truth = {(s.study_id, f.frame_id): f.view
             for s in manifest.studies for f in s.frames}
    labels, predictions = [], []
    for row in table.rows:
        key = (row.study_id, row.frame_id)
        if key not in truth:
            raise errors.MissingPredictions(f'unknown frame {"/".join(key)}')
        labels.append(truth[key].code)
        predictions.append(
            classifier.VIEW_CLASSES[int(np.argmax(row.probabilities))])
    cm = evaluation.confusion_matrix(labels, predictions,
                                     classifier.VIEW_CLASSES)
    return {
        'confusion_matrix': cm.to_dict(),
        'f_score': evaluation.f_score(cm, evaluation.MACRO).to_dict(),
    }


def _evaluate_lesions(manifest: StudyManifest,
                      table: classifier.PredictionTable,
                      out: Path) -> Tuple[Dict[str, Any], List[Path]]:
    lesions = {s.study_id: s.lesion for s in manifest.studies}
    results: Dict[str, Any] = {}
    written = []
    for task in table.tasks:
        per_view: Dict[str, Any] = {}
        sets = table.view_sets(task)
        for view in ViewLabel:
            scores, labels = [], []
            for study_id, predictions in sorted(sets.items()):
                if not task.covers(lesions[study_id]):
                    continue
                values = predictions.frames[view]
                if values:
                    scores.append(float(np.mean(values)))
                    labels.append(task.is_positive(lesions[study_id]))
            try:
                roc = evaluation.roc_curve(scores, labels)
            except errors.SingleClass:
                per_view[view.code] = {'c_statistic': None,
                                       'studies': len(scores)}
                continue
            per_view[view.code] = {
                'c_statistic': evaluation.c_statistic(scores, labels),
                'auc': roc.auc,
                'studies': len(scores),
            }
            written.append(_write_text(
                out / f'roc-{task.value}-{view.code}.csv', roc.to_csv()))
        results[task.value] = per_view
    return results, written


def cmd_evaluate(run: config.RunConfig) -> List[Path]:
    if not any(run.get(k) for k in ('predictions', 'predicted_manifest',
                                    'measurements')):
        raise errors.UsageError(
            'nothing to evaluate: give --predictions, --predicted-manifest '
            'or --measurements')
    metrics: Dict[str, Any] = {}
    written: List[Path] = []
    if run.get('predictions'):
        manifest = _scope(run)
        table = classifier.import_predictions(run['predictions'])
        _check_coverage(manifest, table)
        if table.kind == 'view':
            metrics['views'] = _evaluate_views(manifest, table)
        else:
            metrics['lesions'], roc_files = _evaluate_lesions(
                manifest, table, run.out)
            written += roc_files
    if run.get('predicted_manifest'):
        labeled = _scope(run)
        predicted = masks.load_manifest(run['predicted_manifest'])
        metrics['jaccard'] = {
            schema.value: evaluation.jaccard_table(
                predicted, labeled, schema).to_dict()
            for schema in MaskSchema
            if any(schema in f.masks for s in labeled.studies
                   for f in s.frames)}
    if run.get('measurements'):
        if not run.get('reference'):
            raise errors.UsageError('--measurements needs --reference')
        comparison = evaluation.compare_measurements(
            read_summary(Path(run['measurements'])),
            read_summary(Path(run['reference'])))
        metrics['concordance'] = {k: v.to_dict()
                                  for k, v in comparison.items()}
    written.insert(0, _write_json(run.out / 'metrics.json', metrics))
    return written


# diagnose / report

DIAGNOSE_DEFAULTS: Dict[str, Any] = {
    'manifest': None,
    'split': None,
    'side': 'test',
    'predictions': None,
    'task': None,
    'c_stats': None,
    'bit_threshold': diagnosis.BIT_THRESHOLD,
    'cutoff': diagnosis.C_STAT_CUTOFF,
    'score_threshold': diagnosis.SCORE_THRESHOLD,
    'calibration_fraction': 0.5,
}


def cmd_diagnose(run: config.RunConfig) -> List[Path]:
    manifest = _scope(run)
    table = classifier.import_predictions(run['predictions'])
    if table.kind != 'lesion':
        raise errors.InvalidParameters('diagnose needs lesion predictions')
    tasks = ([_lesion_task(run['task'])] if run.get('task')
             else list(table.tasks))
    if not tasks:
        raise errors.NoPredictions('prediction file holds no rows')
    written = []
    for task in tasks:
        report = diagnosis.run_task(
            manifest, table.view_sets(task), task,
            c_stats=run.get('c_stats'),
            bit_threshold=run['bit_threshold'],
            cutoff=run['cutoff'],
            threshold=run['score_threshold'],
            calibration_fraction=run['calibration_fraction'],
            seed=run.seed)
        written.append(_write_json(
            run.out / f'diagnosis-{task.value}.json', report.to_dict()))
    return written


REPORT_DEFAULTS: Dict[str, Any] = {
    'inputs': None,
}


def _load_json(path: Path) -> Any:
    try:
        return json.loads(path.read_text(encoding='utf-8'))
    except OSError as exc:
        raise errors.IOFailure(f'{path}: {exc.strerror or exc}') from exc
    except ValueError as exc:
        raise errors.MalformedFile(f'{path}: {exc}') from exc


def cmd_report(run: config.RunConfig) -> List[Path]:
    source = Path(run.get('inputs') or run.out)
    reports = sorted(source.glob('diagnosis-*.json'))
    if not reports:
        raise errors.IOFailure(f'{source}: no diagnosis reports')
    rows: List[List[str]] = [list(RATE_FIELDS)]
    summary: Dict[str, Any] = {}
    written = []
    for path in reports:
        data = _load_json(path)
        try:
            task, rates = data['task'], data['rates']
            studies = data['studies']
            rows.append([task] + [_cell(rates[k]) for k in RATE_FIELDS[1:6]]
                        + [' '.join(data['selected_views']),
                           str(len(studies))])
            scores = [['study_id', 'lesion', 'bitstring', 'score',
                       'decision']] + [
                [s['study_id'], s['lesion'], s['bitstring'],
                 str(s['score']), s['decision']] for s in studies]
        except (KeyError, TypeError) as exc:
            raise errors.MalformedFile(f'{path}: {exc!r}') from exc
        summary[task] = {k: rates[k] for k in RATE_FIELDS[1:6]}
        written.append(_write_text(run.out / f'scores-{task}.csv',
                                   _csv(scores)))
    metrics_path = source / 'metrics.json'
    if metrics_path.exists():
        metrics = _load_json(metrics_path)
        views = metrics.get('views') if isinstance(metrics, dict) else None
        if views:
            summary['view_f_score'] = views['f_score']['value']
    written.insert(0, _write_text(run.out / 'rates.csv', _csv(rows)))
    written.insert(1, _write_json(run.out / 'report.json', summary))
    return written


COMMANDS: Dict[str, Tuple[Command, Dict[str, Any]]] = {
    'phantom': (cmd_phantom, PHANTOM_DEFAULTS),
    'measure': (cmd_measure, MEASURE_DEFAULTS),
    'train': (cmd_train, TRAIN_DEFAULTS),
    'predict': (cmd_predict, PREDICT_DEFAULTS),
    'evaluate': (cmd_evaluate, EVALUATE_DEFAULTS),
    'diagnose': (cmd_diagnose, DIAGNOSE_DEFAULTS),
    'report': (cmd_report, REPORT_DEFAULTS),
}

REQUIRED: Mapping[str, Tuple[str, ...]] = {
    'measure': ('manifest',),
    'train': ('manifest',),
    'predict': ('manifest', 'models'),
    'evaluate': ('manifest',),
    'diagnose': ('manifest', 'predictions'),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--seed', type=int, help='global random seed')
    common.add_argument('--config', type=Path, help='TOML config file')
    common.add_argument('--out', type=Path, help='output directory')
    common.add_argument('--threads', type=_at_least(1),
                        help='worker threads')
    common.add_argument('-v', '--verbose', action='store_true',
                        help='debug logging')

    parser = argparse.ArgumentParser(
        prog='chd-screen',
        description='Fetal CHD screening engine: phantoms, biometrics, '
                    'view classification and composite diagnosis.')
    parser.add_argument('--version', action='version',
                        version=config.package_version())
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('phantom', parents=[common],
                       help='generate a synthetic five-view corpus')
    p.add_argument('--studies', type=_at_least(2))
    p.add_argument('--lesion-mix', type=_fractions(3),
                   help='normal,tof,hlhs fractions')
    p.add_argument('--image-shape', type=_shape, help='ROWSxCOLS')
    p.add_argument('--frames-per-view', type=_at_least(1))
    p.add_argument('--a4c-frames', type=_at_least(1))
    p.add_argument('--a4c-period', type=_at_least(6))
    p.add_argument('--noise', type=_fraction)
    p.add_argument('--severity', type=_fraction)

    p = sub.add_parser('measure', parents=[common],
                       help='biometrics from A4C masks')
    p.add_argument('--manifest', type=Path)
    p.add_argument('--schemas', type=lambda s: tuple(s.upper().split(',')),
                   help='comma-separated: AXIS,CTR,CHAMBERS')
    p.add_argument('--min-containment', type=_fraction)

    p = sub.add_parser('train', parents=[common],
                       help='train view or lesion classifiers')
    p.add_argument('--manifest', type=Path)
    p.add_argument('--split', type=Path)
    p.add_argument('--ratio', type=_fraction)
    p.add_argument('--task', choices=['view', 'tof', 'hlhs', 'either'])
    p.add_argument('--arch', help='linear or hidden:<width>')
    p.add_argument('--epochs', type=_at_least(1))
    p.add_argument('--learning-rate', type=float)
    p.add_argument('--batch-size', type=_at_least(1))
    p.add_argument('--l2', type=float)
    p.add_argument('--balance', choices=['weighted', 'none'])
    p.add_argument('--no-augment', dest='augment', action='store_false',
                   default=None, help='train on the unaugmented images')
    p.add_argument('--shuffle-labels', action='store_true', default=None)
    p.add_argument('--source-shape', type=_shape)
    p.add_argument('--crop-shape', type=_shape)
    p.add_argument('--output-shape', type=_shape)

    for name, help_text in (('predict', 'predict with trained models'),
                            ('evaluate', 'evaluation statistics'),
                            ('diagnose', 'composite diagnosis per task')):
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.add_argument('--manifest', type=Path)
        p.add_argument('--split', type=Path)
        p.add_argument('--side', choices=['train', 'test'])
        if name == 'predict':
            p.add_argument('--models', type=Path)
            p.add_argument('--task',
                           choices=['view', 'tof', 'hlhs', 'either'])
        elif name == 'evaluate':
            p.add_argument('--predictions', type=Path)
            p.add_argument('--predicted-manifest', type=Path)
            p.add_argument('--measurements', type=Path)
            p.add_argument('--reference', type=Path)
        else:
            p.add_argument('--predictions', type=Path)
            p.add_argument('--task', choices=['tof', 'hlhs', 'either'])
            p.add_argument('--c-stats', type=_fractions(len(ViewLabel)),
                           help='3vt,3vv,a5c,a4c,abdo C-statistics')
            p.add_argument('--bit-threshold', type=_fraction)
            p.add_argument('--cutoff', type=_fraction)
            p.add_argument('--score-threshold', type=_at_least(1))
            p.add_argument('--calibration-fraction', type=_fraction)

    p = sub.add_parser('report', parents=[common],
                       help='plot-ready tables from diagnosis reports')
    p.add_argument('--inputs', type=Path,
                   help='directory holding diagnosis-*.json')
    return parser


def _flags(args: argparse.Namespace) -> Dict[str, Any]:
    skip = {'command', 'config', 'verbose'}
    flags = {k: v for k, v in vars(args).items() if k not in skip}
    return {k: str(v) if isinstance(v, Path) and k != 'out' else v
            for k, v in flags.items()}


def run_command(args: argparse.Namespace) -> List[Path]:
    command, defaults = COMMANDS[args.command]
    run = config.resolve(args.command, defaults, _flags(args), args.config)
    missing = [k for k in REQUIRED.get(args.command, ()) if run.get(k) is None]
    if missing:
        raise errors.UsageError(
            'missing ' + ', '.join('--' + k.replace('_', '-')
                                   for k in missing))
    written = command(run)
    written.append(run.write())
    return written


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse already printed usage, help or the version
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        stream=sys.stderr,
        format='%(levelname)s %(name)s: %(message)s')
    try:
        written = run_command(args)
    except errors.ScreeningError as exc:
        if isinstance(exc, errors.UsageError):
            parser.print_usage(sys.stderr)
        logger.error('%s', exc)
        return exc.exit_code
    for path in written:
        print(path)
    return EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
