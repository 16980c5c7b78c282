import math
from typing import Any, List
from unittest import TestCase

import numpy as np

from chd_screen import biometrics, errors, phantom
from chd_screen.biometrics import AreaSeries, MeasureConfig, StudyFrame
from chd_screen.masks import (AxisLabel, CardiothoracicLabel, LabelMask,
                              MaskSchema)


def disk(radius: float, shape: tuple = (121, 121),
         center: tuple = (60.0, 60.0)) -> np.ndarray:
    ys, xs = np.mgrid[0:shape[0], 0:shape[1]]
    return (xs - center[0]) ** 2 + (ys - center[1]) ** 2 <= radius ** 2


def concentric(heart: float, thorax: float,
               shape: tuple = (121, 121)) -> LabelMask:
    center = ((shape[1] - 1) / 2, (shape[0] - 1) / 2)
    labels = np.zeros(shape, dtype=np.uint8)
    labels[disk(thorax, shape, center)] = CardiothoracicLabel.THORAX
    labels[disk(heart, shape, center)] = CardiothoracicLabel.HEART
    return LabelMask(MaskSchema.CARDIOTHORACIC, labels)


def phantom_axis(**kwargs: Any) -> LabelMask:
    params = phantom.PhantomParams(n_frames=1, period=6, **kwargs)
    return phantom.generate_phantom_study(params).masks[MaskSchema.AXIS][0]


def misplaced(mask: LabelMask) -> LabelMask:
    """ Same mask with the heart moved into the image corner."""
    labels = mask.labels.copy()
    labels[labels == AxisLabel.HEART] = AxisLabel.THORAX
    labels[0:20, 0:20] = AxisLabel.HEART
    return mask.with_labels(labels)


def sinusoid(n_frames: int, period: int = 20) -> AreaSeries:
    return AreaSeries('LV', [100 - 20 * math.sin(2 * math.pi * t / period)
                             for t in range(n_frames)])


class ValidateAnatomyTestCase(TestCase):
    def test_phantom_passes(self) -> None:
        check = biometrics.validate_anatomy(phantom_axis())
        self.assertTrue(check.passed)
        self.assertIsNone(check.reason)

    def test_heart_outside(self) -> None:
        """ A heart block outside the thorax block fails the rule."""
        labels = np.zeros((40, 80), dtype=np.uint8)
        labels[5:35, 5:35] = CardiothoracicLabel.THORAX
        labels[10:30, 45:75] = CardiothoracicLabel.HEART
        check = biometrics.validate_anatomy(
            LabelMask(MaskSchema.CARDIOTHORACIC, labels))
        self.assertFalse(check)
        self.assertEqual(check.reason, biometrics.HEART_OUTSIDE_THORAX)

    def test_missing_heart(self) -> None:
        labels = np.zeros((20, 20), dtype=np.uint8)
        labels[2:18, 2:18] = CardiothoracicLabel.THORAX
        check = biometrics.validate_anatomy(
            LabelMask(MaskSchema.CARDIOTHORACIC, labels))
        self.assertEqual(check.reason, biometrics.MISSING_STRUCTURE)

    def test_fragmented_heart(self) -> None:
        labels = np.zeros((40, 40), dtype=np.uint8)
        labels[2:38, 2:38] = CardiothoracicLabel.THORAX
        labels[8:14, 8:14] = CardiothoracicLabel.HEART
        labels[24:30, 24:30] = CardiothoracicLabel.HEART
        check = biometrics.validate_anatomy(
            LabelMask(MaskSchema.CARDIOTHORACIC, labels))
        self.assertEqual(check.reason, biometrics.FRAGMENTED_STRUCTURE)

    def test_schema(self) -> None:
        """ Chamber masks carry no thorax to check against."""
        mask = LabelMask(MaskSchema.CHAMBERS, np.zeros((4, 4), np.uint8))
        with self.assertRaises(errors.SchemaMismatch):
            biometrics.validate_anatomy(mask)


class CardiothoracicRatioTestCase(TestCase):
    def test_concentric_disks(self) -> None:
        """ Disks of radius 25 and 50 give a ratio of one half."""
        ratio = biometrics.cardiothoracic_ratio(concentric(25, 50))
        self.assertAlmostEqual(ratio, 0.50, delta=0.02)

    def test_phantom(self) -> None:
        ratio = biometrics.cardiothoracic_ratio(phantom_axis(seed=7))
        self.assertAlmostEqual(ratio, 0.52, delta=0.02)

    def test_scale_invariance(self) -> None:
        """ Scaling the whole mask barely moves the ratio."""
        base = biometrics.cardiothoracic_ratio(
            concentric(14, 28, shape=(61, 61)))
        for k in (1.5, 2):
            with self.subTest(scale=k):
                size = int(round(61 * k))
                scaled = concentric(14 * k, 28 * k, shape=(size, size))
                self.assertAlmostEqual(
                    biometrics.cardiothoracic_ratio(scaled), base,
                    delta=0.02)

    def test_invalid_anatomy(self) -> None:
        with self.assertRaises(errors.AnatomyInvalid):
            biometrics.cardiothoracic_ratio(misplaced(phantom_axis()))


class CardiacAxisTestCase(TestCase):
    def test_normal_axis(self) -> None:
        """ A septum at 45 degrees to the midline measures 45."""
        ca = biometrics.cardiac_axis(phantom_axis(target_ca=45.0, seed=7))
        self.assertAlmostEqual(ca, 45.0, delta=2.0)

    def test_parallel(self) -> None:
        """ A septum along the midline measures about zero."""
        ca = biometrics.cardiac_axis(phantom_axis(target_ca=0.0))
        self.assertAlmostEqual(ca, 0.0, delta=2.0)

    def test_normal_band(self) -> None:
        for target in range(25, 75, 10):
            with self.subTest(target=target):
                ca = biometrics.cardiac_axis(
                    phantom_axis(target_ca=float(target)))
                self.assertAlmostEqual(ca, target, delta=2.0)

    def test_rotation(self) -> None:
        """ Turning the whole frame leaves the axis unchanged."""
        for orientation in (20.0, 90.0):
            with self.subTest(orientation=orientation):
                ca = biometrics.cardiac_axis(
                    phantom_axis(target_ca=45.0, orientation=orientation))
                self.assertAlmostEqual(ca, 45.0, delta=2.0)

    def test_range(self) -> None:
        ca = biometrics.cardiac_axis(phantom_axis(target_ca=120.0))
        self.assertGreaterEqual(ca, 0.0)
        self.assertLess(ca, 180.0)

    def test_missing_septum(self) -> None:
        mask = phantom_axis()
        labels = mask.labels.copy()
        labels[labels == AxisLabel.SEPTUM] = AxisLabel.HEART
        with self.assertRaises(errors.AnatomyInvalid):
            biometrics.cardiac_axis(mask.with_labels(labels))

    def test_schema(self) -> None:
        with self.assertRaises(errors.SchemaMismatch):
            biometrics.cardiac_axis(concentric(25, 50))


class FractionalAreaChangeTestCase(TestCase):
    def test_formula(self) -> None:
        series = AreaSeries('LV', [100, 80, 60, 80, 100])
        self.assertEqual(biometrics.fractional_area_change(series), 0.40)

    def test_constant(self) -> None:
        series = AreaSeries('LV', [50, 50, 50])
        self.assertEqual(biometrics.fractional_area_change(series), 0.0)

    def test_sinusoid(self) -> None:
        """ Areas between 80 and 120 change by a third."""
        fac = biometrics.fractional_area_change(sinusoid(40))
        self.assertAlmostEqual(fac, 1 / 3, delta=0.02)

    def test_bounds(self) -> None:
        rng = np.random.default_rng(5)
        for _ in range(50):
            series = AreaSeries('RV', rng.integers(1, 500, size=12))
            fac = biometrics.fractional_area_change(series)
            self.assertGreaterEqual(fac, 0.0)
            self.assertLessEqual(fac, 1.0)

    def test_errors(self) -> None:
        with self.assertRaises(errors.EmptySeries):
            biometrics.fractional_area_change(AreaSeries('LV', [10]))
        with self.assertRaises(errors.ZeroArea):
            biometrics.fractional_area_change(AreaSeries('LV', [0, 0, 0]))
        with self.assertRaises(errors.InvalidParameters):
            AreaSeries('LV', [10, -1])

    def test_csv(self) -> None:
        series = AreaSeries('LA', [3, 2.5])
        self.assertEqual(series.to_csv(), 'frame,area\n0,3\n1,2.5\n')


class CardiacCycleTestCase(TestCase):
    def test_sinusoid(self) -> None:
        """ Period 20 over 60 frames gives minima at 5, 25 and 45."""
        cycle = biometrics.detect_cardiac_cycle(sinusoid(60))
        self.assertEqual(len(cycle.systole_frames), 3)
        for found, expected in zip(cycle.systole_frames, (5, 25, 45)):
            self.assertLessEqual(abs(found - expected), 1)
        for found, expected in zip(cycle.diastole_frames, (15, 35, 55)):
            self.assertLessEqual(abs(found - expected), 1)

    def test_monotone(self) -> None:
        with self.assertRaises(errors.NoCycle):
            biometrics.detect_cardiac_cycle(AreaSeries('LV', range(1, 11)))

    def test_too_short(self) -> None:
        with self.assertRaises(errors.SeriesTooShort):
            biometrics.detect_cardiac_cycle(AreaSeries('LV', [1, 2, 1, 2, 1]))

    def test_alternation(self) -> None:
        """ Minima and maxima alternate on arbitrary series."""
        rng = np.random.default_rng(11)
        for _ in range(50):
            series = AreaSeries('LV', rng.integers(50, 100, size=30))
            try:
                cycle = biometrics.detect_cardiac_cycle(series)
            except errors.NoCycle:
                continue
            events = sorted([(f, 'S') for f in cycle.systole_frames]
                            + [(f, 'D') for f in cycle.diastole_frames])
            kinds = [kind for _, kind in events]
            for a, b in zip(kinds, kinds[1:]):
                self.assertNotEqual(a, b)


class MeasureStudyTestCase(TestCase):
    study: phantom.PhantomStudy

    @classmethod
    def setUpClass(cls) -> None:
        super().setUpClass()
        cls.study = phantom.generate_phantom_study(
            phantom.PhantomParams(n_frames=10, period=6, seed=3))

    def frames(self, corrupted: tuple = ()) -> List[StudyFrame]:
        frames = self.study.study_frames()
        for index in corrupted:
            frame = frames[index]
            assert frame.axis is not None and frame.cardiothoracic is not None
            frames[index] = StudyFrame(
                frame.frame_id, misplaced(frame.axis),
                misplaced(frame.cardiothoracic), frame.chambers)
        return frames

    def test_exclusions(self) -> None:
        """ Corrupted frames are listed and left out of the means."""
        report = biometrics.measure_study(self.frames(corrupted=(2, 7)))
        self.assertEqual(set(report.exclusions), {'a4c-02', 'a4c-07'})
        self.assertEqual(set(report.exclusions.values()),
                         {biometrics.HEART_OUTSIDE_THORAX})
        valid = [f for f in report.frames if f.excluded is None]
        self.assertEqual(len(valid), 8)
        assert report.ctr is not None
        self.assertAlmostEqual(report.ctr, 0.52, delta=0.02)

    def test_report(self) -> None:
        report = biometrics.measure_study(self.frames())
        assert report.ca_degrees is not None
        self.assertAlmostEqual(report.ca_degrees, 45.0, delta=2.0)
        self.assertEqual(set(report.fac), {'LV', 'RV', 'LA', 'RA'})
        for value in report.fac.values():
            assert value is not None
            self.assertTrue(0 <= value <= 1)
        self.assertEqual(len(report.area_series), 4)
        data = report.to_dict()
        self.assertEqual(data['exclusions'], {})
        self.assertTrue(data['validity']['ctr']['passed'])

    def test_single_frame(self) -> None:
        """ One frame has CTR and CA but no FAC."""
        report = biometrics.measure_study(self.frames()[:1])
        self.assertIsNotNone(report.ctr)
        self.assertIsNotNone(report.ca_degrees)
        self.assertIsNone(report.fac['LV'])
        self.assertEqual(report.validity['fac_lv'].reason,
                         biometrics.SERIES_TOO_SHORT)
        self.assertEqual(report.validity['cycle'].reason,
                         biometrics.SERIES_TOO_SHORT)

    def test_all_invalid(self) -> None:
        with self.assertRaises(errors.NoValidFrames):
            biometrics.measure_study(self.frames(corrupted=tuple(range(10))))

    def test_no_masks(self) -> None:
        with self.assertRaises(errors.NoValidFrames):
            biometrics.measure_study([StudyFrame('a4c-00')])

    def test_containment_threshold(self) -> None:
        """ The containment share is configurable."""
        frames = self.frames()[:2]
        report = biometrics.measure_study(
            frames, MeasureConfig(min_containment=1.0))
        self.assertFalse(report.exclusions)

    def test_cycle_frame_numbers(self) -> None:
        """ Cycle frames count every study frame, with or without chambers."""
        base = biometrics.measure_study(self.frames())
        self.assertTrue(base.systole_frames and base.diastole_frames)
        leading = [StudyFrame(f'extra-{i}', f.axis, f.cardiothoracic)
                   for i, f in enumerate(self.frames()[:2])]
        report = biometrics.measure_study(leading + self.frames())
        self.assertEqual(report.systole_frames,
                         tuple(k + 2 for k in base.systole_frames))
        self.assertEqual(report.diastole_frames,
                         tuple(k + 2 for k in base.diastole_frames))
