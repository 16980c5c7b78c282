import math
from unittest import TestCase

import numpy as np

from chd_screen import errors, geometry
from chd_screen.geometry import Ray
from chd_screen.masks import LabelMask, MaskSchema


def mask_of(pixels: np.ndarray, label: int = 2,
            schema: MaskSchema = MaskSchema.AXIS) -> LabelMask:
    return LabelMask(schema, np.where(pixels, label, 0).astype(np.uint8))


def disk(radius: float, shape: tuple = (101, 101),
         center: tuple = (50.0, 50.0)) -> np.ndarray:
    ys, xs = np.mgrid[0:shape[0], 0:shape[1]]
    return (xs - center[0]) ** 2 + (ys - center[1]) ** 2 <= radius ** 2


def bar(degrees: float, length: float = 60, width: float = 8,
        shape: tuple = (101, 101)) -> np.ndarray:
    """ Rectangle turned ``degrees`` from the y axis toward +x."""
    ys, xs = np.mgrid[0:shape[0], 0:shape[1]]
    t = math.radians(degrees)
    direction = (math.sin(t), math.cos(t))
    dx, dy = xs - 50.0, ys - 50.0
    along = dx * direction[0] + dy * direction[1]
    across = -dx * direction[1] + dy * direction[0]
    return (np.abs(along) <= length / 2) & (np.abs(across) <= width / 2)


def region_of(pixels: np.ndarray) -> geometry.Region:
    (region,) = geometry.connected_components(mask_of(pixels), 2)
    return region


def axis_degrees(direction: geometry.Point) -> float:
    """ Orientation of an undirected axis from the y axis, in [0, 180)."""
    return math.degrees(math.atan2(direction[0], direction[1])) % 180


class ConnectedComponentsTestCase(TestCase):
    def test_two_blocks(self) -> None:
        """ Two disjoint 3x3 blocks are two 9-pixel regions."""
        pixels = np.zeros((10, 10), dtype=bool)
        pixels[1:4, 1:4] = True
        pixels[6:9, 5:8] = True
        regions = geometry.connected_components(mask_of(pixels), 2)
        self.assertEqual([geometry.area(r) for r in regions], [9, 9])

    def test_largest_first(self) -> None:
        pixels = np.zeros((10, 10), dtype=bool)
        pixels[0, 0] = True
        pixels[5:9, 5:9] = True
        regions = geometry.connected_components(mask_of(pixels), 2)
        self.assertEqual([geometry.area(r) for r in regions], [16, 1])
        self.assertEqual(regions[0].bbox, (5, 5, 9, 9))

    def test_diagonal_connectivity(self) -> None:
        """ Diagonal neighbours belong to one component."""
        pixels = np.eye(5, dtype=bool)
        self.assertEqual(len(geometry.connected_components(
            mask_of(pixels), 2)), 1)

    def test_absent_label(self) -> None:
        mask = mask_of(np.zeros((4, 4), dtype=bool))
        self.assertEqual(geometry.connected_components(mask, 3), [])

    def test_invalid_label(self) -> None:
        mask = mask_of(np.zeros((4, 4), dtype=bool),
                       schema=MaskSchema.CARDIOTHORACIC, label=1)
        with self.assertRaises(errors.InvalidLabel):
            geometry.connected_components(mask, 4)


class AreaPerimeterTestCase(TestCase):
    def test_square(self) -> None:
        """ A filled 10x10 square has area 100 and perimeter 36."""
        pixels = np.zeros((14, 14), dtype=bool)
        pixels[2:12, 2:12] = True
        region = region_of(pixels)
        self.assertEqual(geometry.area(region), 100)
        self.assertEqual(geometry.perimeter(region), 36.0)

    def test_line(self) -> None:
        """ A 1x5 line is walked out and back."""
        pixels = np.zeros((3, 9), dtype=bool)
        pixels[1, 2:7] = True
        self.assertEqual(geometry.perimeter(region_of(pixels)), 8.0)

    def test_single_pixel(self) -> None:
        pixels = np.zeros((3, 3), dtype=bool)
        pixels[1, 1] = True
        region = region_of(pixels)
        self.assertEqual(geometry.area(region), 1)
        with self.assertRaises(errors.DegenerateRegion):
            geometry.perimeter(region)

    def test_disk(self) -> None:
        """ A rasterized disk approximates the analytic area and length."""
        region = region_of(disk(30))
        self.assertAlmostEqual(geometry.area(region) / (math.pi * 900), 1,
                               delta=0.02)
        self.assertAlmostEqual(geometry.perimeter(region) / (2 * math.pi * 30),
                               1, delta=0.05)

    def test_holes_ignored(self) -> None:
        """ Interior voids don't change the outer perimeter."""
        pixels = np.zeros((14, 14), dtype=bool)
        pixels[2:12, 2:12] = True
        solid = geometry.perimeter(region_of(pixels))
        pixels[5:8, 5:8] = False
        self.assertEqual(geometry.perimeter(region_of(pixels)), solid)

    def test_scale(self) -> None:
        """ Doubling the radius doubles length and quadruples area."""
        small = region_of(disk(20, shape=(121, 121), center=(60, 60)))
        large = region_of(disk(40, shape=(121, 121), center=(60, 60)))
        self.assertAlmostEqual(
            geometry.perimeter(large) / geometry.perimeter(small), 2,
            delta=0.06)
        self.assertAlmostEqual(geometry.area(large) / geometry.area(small),
                               4, delta=0.12)

    def test_translation(self) -> None:
        """ Integer shifts keep area and perimeter, and move the centroid."""
        pixels = bar(30, shape=(121, 121))
        moved = np.roll(np.roll(pixels, 7, axis=0), 5, axis=1)
        a, b = region_of(pixels), region_of(moved)
        self.assertEqual(geometry.area(a), geometry.area(b))
        self.assertEqual(geometry.perimeter(a), geometry.perimeter(b))
        (ax, ay), (bx, by) = geometry.centroid(a), geometry.centroid(b)
        self.assertAlmostEqual(bx - ax, 5)
        self.assertAlmostEqual(by - ay, 7)


class CentroidAxisTestCase(TestCase):
    def test_square_centroid(self) -> None:
        pixels = np.zeros((12, 12), dtype=bool)
        pixels[0:10, 0:10] = True
        self.assertEqual(geometry.centroid(region_of(pixels)), (4.5, 4.5))

    def test_pixel_centroid(self) -> None:
        """ Points are (x, y): column first."""
        pixels = np.zeros((10, 10), dtype=bool)
        pixels[7, 3] = True
        self.assertEqual(geometry.centroid(region_of(pixels)), (3.0, 7.0))

    def test_rectangle_axis(self) -> None:
        """ A 40 wide, 10 high rectangle lies along x."""
        pixels = np.zeros((20, 50), dtype=bool)
        pixels[5:15, 5:45] = True
        x, y = geometry.principal_axis(region_of(pixels))
        self.assertAlmostEqual(x, 1.0)
        self.assertAlmostEqual(y, 0.0)

    def test_disk_isotropic(self) -> None:
        with self.assertRaises(errors.IsotropicRegion):
            geometry.principal_axis(region_of(disk(20)))

    def test_canonical_sign(self) -> None:
        """ The reported axis has a non-negative y component."""
        for degrees in (10, 80, 100, 170):
            with self.subTest(degrees=degrees):
                _, y = geometry.principal_axis(region_of(bar(degrees)))
                self.assertGreaterEqual(y, 0)

    def test_rotation(self) -> None:
        """ Rotating a bar rotates its axis by the same angle."""
        for degrees in range(0, 180, 15):
            with self.subTest(degrees=degrees):
                found = axis_degrees(
                    geometry.principal_axis(region_of(bar(degrees))))
                error = abs(found - degrees) % 180
                self.assertLessEqual(min(error, 180 - error), 2.0)


class AngleTestCase(TestCase):
    def test_angles(self) -> None:
        origin = (0.0, 0.0)
        x = Ray(origin, (1.0, 0.0))
        s = 1 / math.sqrt(2)
        self.assertAlmostEqual(
            geometry.angle_between(x, Ray(origin, (0.0, 1.0))), 90.0)
        self.assertAlmostEqual(
            geometry.angle_between(x, Ray(origin, (s, s))), 45.0)
        self.assertEqual(geometry.angle_between(x, x), 0.0)

    def test_unit_direction(self) -> None:
        with self.assertRaises(errors.InvalidParameters):
            Ray((0.0, 0.0), (1.0, 1.0))

    def test_through(self) -> None:
        ray = Ray.through((1.0, 1.0), (4.0, 5.0))
        self.assertAlmostEqual(ray.direction[0], 0.6)
        self.assertAlmostEqual(ray.direction[1], 0.8)
        with self.assertRaises(errors.DegenerateRegion):
            Ray.through((1.0, 1.0), (1.0, 1.0))
