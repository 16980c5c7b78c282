""" Reusable oracle tests for segmentation models, built on phantoms.

Combine ``PhantomBaseTestCase`` with the oracle suites and override
``segment`` to check a segmentation model against analytic ground truth::

    class MyModelTestCase(tests.SegmentationOracleTests,
                          tests.BiometricOracleTests,
                          tests.PhantomBaseTestCase):
        def segment(self, index, image, schema):
            return my_model(image, schema)
"""
from typing import TYPE_CHECKING, ClassVar, Dict, List, Tuple
from unittest import TestCase

from chd_screen import biometrics, evaluation, phantom
from chd_screen.masks import GreyImage, LabelMask, MaskSchema

SCHEMAS = (MaskSchema.AXIS, MaskSchema.CARDIOTHORACIC, MaskSchema.CHAMBERS)


class PhantomBaseTestCase(TestCase):
    """ Base class for phantom oracle tests."""
    params: ClassVar[phantom.PhantomParams] = phantom.PhantomParams(
        n_frames=40)
    measure_config: ClassVar[biometrics.MeasureConfig] = (
        biometrics.MeasureConfig())
    study: ClassVar[phantom.PhantomStudy]

    _segmented: Dict[Tuple[int, MaskSchema], LabelMask]

    @classmethod
    def setUpClass(cls) -> None:
        super().setUpClass()
        cls.study = phantom.generate_phantom_study(cls.params)

    def setUp(self) -> None:
        super().setUp()
        self._segmented = {}

    def segment(self, index: int, image: GreyImage,
                schema: MaskSchema) -> LabelMask:
        """
        Mask predicted for phantom frame ``index``.

        :param index: frame number within the phantom sequence
        :param image: phantom frame
        :param schema: label schema the returned mask must carry
        """
        raise NotImplementedError()

    def segmented(self, index: int, schema: MaskSchema) -> LabelMask:
        """ ``segment`` result, computed once per test."""
        key = (index, schema)
        if key not in self._segmented:
            mask = self.segment(index, self.study.images[index], schema)
            self.assertIs(mask.schema, schema)
            self.assertEqual(mask.shape, self.study.images[index].shape)
            self._segmented[key] = mask
        return self._segmented[key]

    def segmented_frames(self) -> List[biometrics.StudyFrame]:
        return [biometrics.StudyFrame(f'a4c-{i:02d}',
                                      *(self.segmented(i, s) for s in SCHEMAS))
                for i in range(len(self.study.images))]

    def measure(self) -> biometrics.BiometricReport:
        return biometrics.measure_study(self.segmented_frames(),
                                        self.measure_config)


if TYPE_CHECKING:  # pragma: no cover
    OracleTestsTarget = PhantomBaseTestCase
else:
    OracleTestsTarget = object


# noinspection PyAbstractClass
class BiometricOracleTests(OracleTestsTarget):
    """ Biometrics measured on segmented frames match the phantom truth."""
    ctr_tolerance: ClassVar[float] = 0.02
    ca_tolerance: ClassVar[float] = 2.0
    fac_tolerance: ClassVar[float] = 0.02
    # frames a detected systole/diastole may be off by
    cycle_tolerance: ClassVar[int] = 1

    def test_cardiothoracic_ratio(self) -> None:
        """ CTR is close to the phantom target."""
        report = self.measure()
        assert report.ctr is not None
        self.assertAlmostEqual(report.ctr, self.study.truth.ctr,
                               delta=self.ctr_tolerance)

    def test_cardiac_axis(self) -> None:
        """ Cardiac axis is close to the drawn septum angle."""
        report = self.measure()
        self.assertIsNotNone(report.ca_degrees)
        assert report.ca_degrees is not None
        self.assertAlmostEqual(report.ca_degrees, self.study.truth.ca_degrees,
                               delta=self.ca_tolerance)

    def test_fractional_area_change(self) -> None:
        """ FAC of every chamber is close to its scripted value."""
        report = self.measure()
        for chamber, expected in self.study.truth.fac.items():
            with self.subTest(chamber=chamber):
                value = report.fac[chamber]
                self.assertIsNotNone(value)
                assert value is not None
                self.assertAlmostEqual(value, expected,
                                       delta=self.fac_tolerance)

    def assert_frames_near(self, detected: Tuple[int, ...],
                           expected: Tuple[int, ...]) -> None:
        self.assertTrue(detected, 'no frames detected')
        for frame in detected:
            nearest = min(abs(frame - e) for e in expected)
            self.assertLessEqual(nearest, self.cycle_tolerance,
                                 f'frame {frame} is off the cycle {expected}')

    def test_cardiac_cycle(self) -> None:
        """ Systole and diastole land on the scripted cycle."""
        report = self.measure()
        truth = self.study.truth
        self.assertTrue(report.validity['cycle'].passed)
        self.assert_frames_near(report.systole_frames, truth.systole_frames)
        self.assert_frames_near(report.diastole_frames, truth.diastole_frames)

    def test_no_frames_excluded(self) -> None:
        """ Every segmented frame passes the anatomy rule."""
        report = self.measure()
        self.assertFalse(report.exclusions)


# noinspection PyAbstractClass
class SegmentationOracleTests(OracleTestsTarget):
    """ Segmented masks overlap the phantom masks well enough."""
    min_jaccard: ClassVar[float] = 0.9
    # every n-th frame is compared
    frame_step: ClassVar[int] = 5

    def assert_overlap(self, schema: MaskSchema) -> None:
        truth_masks = self.study.masks[schema]
        for index in range(0, len(truth_masks), self.frame_step):
            scores = evaluation.jaccard_index(self.segmented(index, schema),
                                              truth_masks[index])
            for label, score in scores.items():
                if score is None:
                    continue
                with self.subTest(frame=index, label=label):
                    self.assertGreaterEqual(score, self.min_jaccard)

    def test_axis_overlap(self) -> None:
        """ Thorax, heart, spine and septum overlap the phantom."""
        self.assert_overlap(MaskSchema.AXIS)

    def test_cardiothoracic_overlap(self) -> None:
        """ Thorax and heart overlap the phantom."""
        self.assert_overlap(MaskSchema.CARDIOTHORACIC)

    def test_chambers_overlap(self) -> None:
        """ The four chambers overlap the phantom."""
        self.assert_overlap(MaskSchema.CHAMBERS)
