import itertools
import math
from unittest import TestCase

import numpy as np
from scipy import stats
from sklearn import metrics as sk_metrics

from chd_screen import errors, evaluation, masks
from chd_screen.masks import (FrameRecord, LabelMask, LesionClass,
                              MaskSchema, StudyManifest, StudyRecord,
                              ViewLabel)
from test_masks import TempDirMixin


def expand(counts: dict) -> tuple:
    """ (labels, predictions) lists from ``{(actual, predicted): n}``."""
    labels, predictions = [], []
    for (actual, predicted), n in counts.items():
        labels += [actual] * n
        predictions += [predicted] * n
    return labels, predictions


def brute_force_p(u: float, n_a: int, n_b: int) -> float:
    """ Two-sided p of U over every assignment of ranks 1..n to sample a."""
    n = n_a + n_b
    values = []
    for chosen in itertools.combinations(range(1, n + 1), n_a):
        values.append(sum(chosen) - n_a * (n_a + 1) / 2)
    below = sum(v <= u for v in values) / len(values)
    above = sum(v >= u for v in values) / len(values)
    return min(1.0, 2 * min(below, above))


class ConfusionMatrixTestCase(TestCase):
    def test_counts(self) -> None:
        labels, predictions = expand({('A', 'A'): 8, ('A', 'B'): 2,
                                      ('B', 'A'): 1, ('B', 'B'): 9})
        cm = evaluation.confusion_matrix(labels, predictions, ['A', 'B'])
        self.assertEqual(cm['A', 'B'], 2)
        self.assertEqual(cm.total, 20)
        self.assertEqual(cm.support, {'A': 10, 'B': 10})
        self.assertAlmostEqual(cm.overall_accuracy, 0.85)
        self.assertEqual(cm.per_class_accuracy, {'A': 0.8, 'B': 0.9})
        self.assertAlmostEqual(cm.average_accuracy, 0.85)

    def test_matches_sklearn(self) -> None:
        rng = np.random.default_rng(0)
        labels = rng.integers(0, 5, 200).tolist()
        predictions = rng.integers(0, 5, 200).tolist()
        cm = evaluation.confusion_matrix(labels, predictions, range(5))
        np.testing.assert_array_equal(
            cm.counts, sk_metrics.confusion_matrix(labels, predictions,
                                                   labels=list(range(5))))

    def test_errors(self) -> None:
        with self.assertRaises(errors.LengthMismatch):
            evaluation.confusion_matrix(['A'], [], ['A'])
        with self.assertRaises(errors.UnknownClass):
            evaluation.confusion_matrix(['A'], ['C'], ['A', 'B'])

    def test_absent_class(self) -> None:
        """ A class without samples has undefined accuracy."""
        cm = evaluation.confusion_matrix(['A'], ['A'], ['A', 'B'])
        self.assertIsNone(cm.per_class_accuracy['B'])
        self.assertEqual(cm.average_accuracy, 1.0)


class FScoreTestCase(TestCase):
    def setUp(self) -> None:
        super().setUp()
        self.labels, self.predictions = expand({
            ('A', 'A'): 8, ('A', 'B'): 2, ('B', 'A'): 1, ('B', 'B'): 9})
        self.cm = evaluation.confusion_matrix(self.labels, self.predictions,
                                              ['A', 'B'])

    def test_fixture(self) -> None:
        """ F_A 0.842, F_B 0.857, macro 0.850."""
        score = evaluation.f_score(self.cm)
        self.assertAlmostEqual(score.f['A'], 0.842, delta=0.0005)
        self.assertAlmostEqual(score.f['B'], 0.857, delta=0.0005)
        self.assertAlmostEqual(score.value, 0.850, delta=0.0005)
        self.assertEqual(score.averaging, evaluation.MACRO)

    def test_matches_sklearn(self) -> None:
        score = evaluation.f_score(self.cm, evaluation.WEIGHTED)
        self.assertAlmostEqual(score.macro, sk_metrics.f1_score(
            self.labels, self.predictions, average='macro'))
        self.assertAlmostEqual(score.value, sk_metrics.f1_score(
            self.labels, self.predictions, average='weighted'))

    def test_perfect(self) -> None:
        cm = evaluation.confusion_matrix(list('abcde'), list('abcde'),
                                         list('abcde'))
        self.assertEqual(evaluation.f_score(cm).value, 1.0)

    def test_never_predicted(self) -> None:
        """ A class with zero precision and recall scores zero."""
        cm = evaluation.confusion_matrix(['A', 'B'], ['A', 'A'], ['A', 'B'])
        score = evaluation.f_score(cm)
        self.assertEqual(score.f['B'], 0.0)
        self.assertAlmostEqual(score.f['A'], 2 / 3)

    def test_relabeling(self) -> None:
        """ Renaming classes consistently keeps the scores."""
        rename = {'A': 'B', 'B': 'A'}
        cm = evaluation.confusion_matrix(
            [rename[v] for v in self.labels],
            [rename[v] for v in self.predictions], ['B', 'A'])
        self.assertAlmostEqual(evaluation.f_score(cm).value,
                               evaluation.f_score(self.cm).value)

    def test_errors(self) -> None:
        with self.assertRaises(errors.EmptyMatrix):
            evaluation.f_score(evaluation.confusion_matrix([], [], ['A']))
        with self.assertRaises(errors.InvalidParameters):
            evaluation.f_score(self.cm, 'micro')


class RocTestCase(TestCase):
    scores = [0.35, 0.8, 0.1, 0.4]
    labels = [1, 1, 0, 0]

    def test_fixture(self) -> None:
        """ Three of four pairs are concordant."""
        curve = evaluation.roc_curve(self.scores, self.labels)
        self.assertAlmostEqual(curve.auc, 0.75)
        self.assertAlmostEqual(
            evaluation.c_statistic(self.scores, self.labels), 0.75)
        self.assertEqual((curve.fpr[0], curve.tpr[0]), (0.0, 0.0))
        self.assertEqual((curve.fpr[-1], curve.tpr[-1]), (1.0, 1.0))
        self.assertTrue(math.isinf(curve.thresholds[0]))

    def test_matches_sklearn(self) -> None:
        rng = np.random.default_rng(1)
        scores = rng.random(100)
        labels = rng.random(100) < scores
        self.assertAlmostEqual(
            evaluation.roc_curve(scores, labels).auc,
            sk_metrics.roc_auc_score(labels, scores))

    def test_auc_identity(self) -> None:
        """ Rank C-statistic equals the trapezoidal area on tie-free sets."""
        rng = np.random.default_rng(2)
        for trial in range(1000):
            n_pos, n_neg = rng.integers(1, 30, 2)
            scores = rng.random(n_pos + n_neg)
            labels = [True] * n_pos + [False] * n_neg
            self.assertAlmostEqual(
                evaluation.c_statistic(scores, labels),
                evaluation.roc_curve(scores, labels).auc, delta=1e-9,
                msg=f'trial {trial}')

    def test_ties(self) -> None:
        """ A tied positive-negative pair counts one half."""
        self.assertEqual(evaluation.c_statistic([0.5, 0.5], [1, 0]), 0.5)
        self.assertEqual(evaluation.roc_curve([0.5, 0.5], [1, 0]).auc, 0.5)

    def test_uninformative(self) -> None:
        """ Constant scores carry no ranking information."""
        self.assertEqual(
            evaluation.c_statistic([0.3] * 6, [1, 0, 1, 0, 0, 1]), 0.5)

    def test_single_class(self) -> None:
        with self.assertRaises(errors.SingleClass):
            evaluation.c_statistic([0.1, 0.2], [1, 1])
        with self.assertRaises(errors.SingleClass):
            evaluation.roc_curve([0.1, 0.2], [0, 0])
        with self.assertRaises(errors.LengthMismatch):
            evaluation.roc_curve([0.1], [0, 1])

    def test_csv(self) -> None:
        curve = evaluation.roc_curve(self.scores, self.labels)
        lines = curve.to_csv().splitlines()
        self.assertEqual(lines[0], 'fpr,tpr,threshold')
        self.assertEqual(len(lines), 1 + len(curve.fpr))
        self.assertIsNone(curve.to_dict()['thresholds'][0])


class JaccardTestCase(TestCase):
    @staticmethod
    def block(col: int) -> LabelMask:
        labels = np.zeros((6, 6), dtype=np.uint8)
        labels[1:3, col:col + 2] = 2
        return LabelMask(MaskSchema.AXIS, labels)

    def test_shifted_block(self) -> None:
        """ A 2x2 block shifted by a column overlaps 2 of 6 pixels."""
        scores = evaluation.jaccard_index(self.block(2), self.block(1))
        self.assertEqual(scores[2], 1 / 3)

    def test_identical_and_disjoint(self) -> None:
        self.assertEqual(evaluation.jaccard_index(self.block(1),
                                                  self.block(1))[2], 1.0)
        self.assertEqual(evaluation.jaccard_index(self.block(0),
                                                  self.block(3))[2], 0.0)

    def test_absent_undefined(self) -> None:
        """ Labels missing from both masks are undefined, not perfect."""
        scores = evaluation.jaccard_index(self.block(1), self.block(1))
        self.assertEqual(sorted(scores), [1, 2, 3, 4])
        self.assertIsNone(scores[1])
        self.assertIsNone(scores[4])

    def test_mismatch(self) -> None:
        other = LabelMask(MaskSchema.CHAMBERS, self.block(1).labels)
        with self.assertRaises(errors.SchemaMismatch):
            evaluation.jaccard_index(other, self.block(1))
        with self.assertRaises(errors.ShapeMismatch):
            evaluation.jaccard_index(
                LabelMask(MaskSchema.AXIS, np.zeros((5, 6), np.uint8)),
                self.block(1))


class JaccardTableTestCase(TempDirMixin, TestCase):
    def manifest(self, name: str, cols: dict) -> StudyManifest:
        """ One-study manifest whose frames carry shifted heart blocks."""
        frames = []
        for frame_id, col in cols.items():
            labels = np.zeros((6, 6), dtype=np.uint8)
            labels[1:3, col:col + 2] = 2
            path = f'{name}-{frame_id}.mask'
            masks.save_mask(LabelMask(MaskSchema.AXIS, labels),
                            self.tmp / path)
            frames.append(FrameRecord(frame_id, ViewLabel.A4C, 'x.img',
                                      {MaskSchema.AXIS: path}))
        study = StudyRecord('S1', LesionClass.NORMAL, tuple(frames))
        return StudyManifest((study,), self.tmp)

    def test_mean(self) -> None:
        labeled = self.manifest('truth', {'f0': 1, 'f1': 1})
        predicted = self.manifest('pred', {'f0': 1, 'f1': 2})
        table = evaluation.jaccard_table(predicted, labeled, MaskSchema.AXIS)
        self.assertEqual(table.frames, 2)
        self.assertAlmostEqual(table.mean['HEART'], (1 + 1 / 3) / 2)
        self.assertIsNone(table.mean['THORAX'])
        self.assertEqual(table.per_frame['S1/f1']['HEART'], 1 / 3)

    def test_missing_prediction(self) -> None:
        labeled = self.manifest('truth', {'f0': 1, 'f1': 1})
        predicted = self.manifest('pred', {'f0': 1})
        with self.assertRaises(errors.MissingPredictions):
            evaluation.jaccard_table(predicted, labeled, MaskSchema.AXIS)


class DiagnosticRatesTestCase(TestCase):
    def test_hlhs_fixture(self) -> None:
        rates = evaluation.rates_from_counts(tp=9, fn=0, tn=27, fp=3)
        self.assertEqual(rates.sensitivity, 1.0)
        self.assertAlmostEqual(rates.specificity, 0.90)
        self.assertAlmostEqual(rates.ppv, 0.75)
        self.assertEqual(rates.npv, 1.0)
        self.assertAlmostEqual(rates.accuracy, 36 / 39)

    def test_tof_fixture(self) -> None:
        rates = evaluation.rates_from_counts(tp=3, fn=1, tn=19, fp=6)
        self.assertAlmostEqual(rates.sensitivity, 0.75)
        self.assertAlmostEqual(rates.specificity, 0.76)

    def test_undefined(self) -> None:
        """ Zero denominators are flagged, never defaulted."""
        rates = evaluation.rates_from_counts(tp=0, fn=0, tn=5, fp=0)
        self.assertIsNone(rates.sensitivity)
        self.assertIsNone(rates.ppv)
        self.assertEqual(rates.undefined, {'sensitivity', 'ppv'})
        self.assertEqual(rates.to_dict()['undefined'], ['ppv', 'sensitivity'])

    def test_from_matrix(self) -> None:
        labels, predictions = expand({
            ('normal', 'normal'): 19, ('normal', 'tof'): 6,
            ('tof', 'normal'): 1, ('tof', 'tof'): 3})
        cm = evaluation.confusion_matrix(labels, predictions,
                                         ['normal', 'tof'])
        rates = evaluation.diagnostic_rates(cm)
        self.assertEqual((rates.tp, rates.fn, rates.tn, rates.fp),
                         (3, 1, 19, 6))
        flipped = evaluation.diagnostic_rates(cm, positive='normal')
        self.assertEqual(flipped.sensitivity, rates.specificity)

    def test_errors(self) -> None:
        cm = evaluation.confusion_matrix(['a'], ['a'], ['a', 'b', 'c'])
        with self.assertRaises(errors.ShapeMismatch):
            evaluation.diagnostic_rates(cm)
        cm = evaluation.confusion_matrix(['a'], ['a'], ['a', 'b'])
        with self.assertRaises(errors.UnknownClass):
            evaluation.diagnostic_rates(cm, positive='c')


class MannWhitneyTestCase(TestCase):
    def test_fixture(self) -> None:
        """ Complete separation of 3 vs 3 gives U=0, p=0.1."""
        result = evaluation.mann_whitney_u([1, 2, 3], [4, 5, 6])
        self.assertEqual(result.u_statistic, 0)
        self.assertAlmostEqual(result.p_two_sided, 0.1)
        self.assertEqual(result.method, evaluation.EXACT)

    def test_identical(self) -> None:
        result = evaluation.mann_whitney_u([1, 2, 3], [1, 2, 3])
        self.assertGreaterEqual(result.p_two_sided, 0.99)
        self.assertEqual(result.method, evaluation.NORMAL_APPROXIMATION)

    def test_exact_brute_force(self) -> None:
        """ Exact p matches enumeration for every size up to 10."""
        for n_a in range(1, 10):
            for n_b in range(1, 11 - n_a):
                for u in range(n_a * n_b + 1):
                    with self.subTest(n_a=n_a, n_b=n_b, u=u):
                        self.assertAlmostEqual(
                            evaluation.exact_p_value(u, n_a, n_b),
                            brute_force_p(u, n_a, n_b), places=12)

    def test_exact_normal_agreement(self) -> None:
        """ At the exact-mode boundary the two p-values are close."""
        for u in range(37):
            z = max(0.0, abs(u - 18) - 0.5) / math.sqrt(6 * 6 * 13 / 12)
            normal = min(1.0, 2 * float(stats.norm.sf(z)))
            with self.subTest(u=u):
                self.assertAlmostEqual(evaluation.exact_p_value(u, 6, 6),
                                       normal, delta=0.03)

    def test_auc_bridge(self) -> None:
        """ U over n_a * n_b is the C-statistic of sample a as positives."""
        rng = np.random.default_rng(3)
        a, b = rng.random(40), rng.random(25)
        result = evaluation.mann_whitney_u(a, b)
        c = evaluation.c_statistic(np.concatenate([a, b]),
                                   [1] * 40 + [0] * 25)
        self.assertAlmostEqual(result.u_statistic / (40 * 25), c, delta=1e-9)

    def test_matches_scipy(self) -> None:
        """ The large-sample path agrees with scipy's corrected test."""
        rng = np.random.default_rng(4)
        a = rng.integers(0, 10, 30).astype(float)
        b = rng.integers(2, 12, 35).astype(float)
        result = evaluation.mann_whitney_u(a, b)
        expected = stats.mannwhitneyu(a, b, alternative='two-sided',
                                      use_continuity=True,
                                      method='asymptotic')
        self.assertAlmostEqual(result.u_statistic, float(expected.statistic))
        self.assertAlmostEqual(result.p_two_sided, float(expected.pvalue),
                               places=9)

    def test_null_calibration(self) -> None:
        """ About one null trial in twenty falls below 0.05."""
        rng = np.random.default_rng(5)
        trials = 2000
        rejected = sum(
            evaluation.mann_whitney_u(rng.normal(size=50),
                                      rng.normal(size=50)).p_two_sided < 0.05
            for _ in range(trials))
        self.assertGreaterEqual(rejected / trials, 0.035)
        self.assertLessEqual(rejected / trials, 0.065)

    def test_empty(self) -> None:
        with self.assertRaises(errors.EmptySample):
            evaluation.mann_whitney_u([], [1.0])

    def test_compare_measurements(self) -> None:
        """ Metrics are compared when both tables hold values."""
        measured = {'ctr': [0.5, 0.52, None, 0.49], 'ca': [None, None],
                    'fac_lv': [0.3]}
        reference = {'ctr': [0.51, 0.5, 0.53], 'ca': [45.0]}
        results = evaluation.compare_measurements(measured, reference)
        self.assertEqual(list(results), ['ctr'])
        self.assertEqual((results['ctr'].n_a, results['ctr'].n_b), (3, 3))
