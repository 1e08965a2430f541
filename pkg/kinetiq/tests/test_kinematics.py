import unittest
import tempfile
import os

import numpy as np

from kinetiq.autodiff import functional as F
from kinetiq.errors import InvalidInputError, InvalidPlacementError
from kinetiq.model import *
from kinetiq.tests.mocks import analytic_gradient, numerical_gradient


class TestBody(unittest.TestCase):
    def test_template(self):
        template = load_template()
        self.assertEqual(template.total_height, 1.8)
        self.assertAlmostEqual(float(np.sum(template.mass)), 1.)
        self.assertAlmostEqual(template.segment('thigh_l')['length'], 0.245 * 1.8)

    def test_template_with_leading_comments(self):
        with open(template_path()) as f:
            lines = f.readlines()
        self.assertTrue(lines[0].startswith('#'))
        rows = [line for line in lines if not line.startswith('#')]
        with tempfile.TemporaryDirectory() as folder:
            path = os.path.join(folder, 'template.txt')
            with open(path, 'w') as f:
                f.write('# custom template\n# reference_height: 2.0\n# reference_mass: 80\n')
                f.writelines(rows)
            body = load_template(path)
            self.assertEqual((body.total_height, body.total_mass), (2., 80.))
            self.assertAlmostEqual(float(np.sum(body.mass)), 1.)
            self.assertAlmostEqual(body.segment('foot_r')['length'], 0.152 * 2.)

            with open(path, 'w') as f:
                f.write('# reference_height: 1.8\n# reference_mass: 75\n')
                f.writelines(rows[:1] + rows[2:] + rows[1:2])
            with self.assertRaises(InvalidInputError):
                load_template(path)

    def test_scaling(self):
        template = load_template()
        body = scale_body(1.6, 60.)
        np.testing.assert_allclose(body.length, template.length * 1.6 / 1.8)
        np.testing.assert_allclose(body.mass, template.mass)
        np.testing.assert_allclose(
            body.inertia, template.inertia * (60. / 75.) * (1.6 / 1.8) ** 2)

    def test_scaling_out_of_range(self):
        with self.assertRaises(InvalidInputError):
            scale_body(0.9, 70.)
        with self.assertRaises(InvalidInputError):
            scale_body(1.8, 250.)

    def test_invalid_constants(self):
        template = load_template()
        with self.assertRaises(InvalidInputError):
            BodyConstants(mass=-template.mass, length=template.length,
                          com_offset=template.com_offset, inertia=template.inertia,
                          total_height=1.8, total_mass=75.)

    def test_dict_round_trip(self):
        body = scale_body(1.7, 65.)
        restored = BodyConstants.from_dict(body.to_dict())
        np.testing.assert_allclose(restored.as_vector(), body.as_vector())

    def test_mirrored_template_is_symmetric(self):
        body = load_template()
        np.testing.assert_allclose(body.mirrored().as_vector(), body.as_vector())


class TestPlacement(unittest.TestCase):
    def setUp(self):
        self.body = scale_body(1.75, 70.)

    def test_default_placement(self):
        placement = default_placement(self.body, ['pelvis', 'foot_r'])
        self.assertEqual(placement.parents, ('trunk', 'foot_r'))
        self.assertEqual(placement.index('foot_r'), 1)
        np.testing.assert_allclose(placement.mounting_angle, 0.)

    def test_unknown_sensor(self):
        with self.assertRaises(InvalidPlacementError):
            default_placement(self.body, ['pelvis', 'wrist'])

    def test_one_sensor_per_segment(self):
        with self.assertRaises(InvalidPlacementError):
            ImuPlacement(sensors=('a', 'b'), parents=('trunk', 'trunk'),
                         d_x=np.zeros(2), d_y=np.zeros(2),
                         mounting_angle=np.zeros(2))

    def test_unknown_parent(self):
        with self.assertRaises(InvalidPlacementError):
            ImuPlacement(sensors=('a',), parents=('arm',), d_x=np.zeros(1),
                         d_y=np.zeros(1), mounting_angle=np.zeros(1))

    def test_shape_mismatch(self):
        with self.assertRaises(InvalidPlacementError):
            ImuPlacement(sensors=('pelvis',), parents=('trunk',),
                         d_x=np.zeros(2), d_y=np.zeros(1),
                         mounting_angle=np.zeros(1))

    def test_subset_and_mirror(self):
        placement = default_placement(self.body)
        subset = placement.subset(['foot_l', 'pelvis'])
        self.assertEqual(subset.sensors, ('foot_l', 'pelvis'))
        self.assertEqual(subset.d_x[0], placement.d_x[placement.index('foot_l')])
        self.assertEqual(subset.mirrored().sensors, ('foot_r', 'pelvis'))


class TestForwardKinematics(unittest.TestCase):
    def setUp(self):
        self.body = scale_body(1.8, 75.)
        self.thigh = self.body.segment('thigh_l')['length']
        self.shank = self.body.segment('shank_l')['length']

    def test_zero_configuration(self):
        state = GeneralizedState.zeros()
        state.q[1] = 1.
        points = forward_kinematics(state, self.body)
        self.assertAlmostEqual(float(points['knee_l'].x), 0.)
        self.assertAlmostEqual(float(points['knee_l'].y), 1. - self.thigh)
        self.assertAlmostEqual(float(points['ankle_r'].y), 1. - self.thigh - self.shank)
        heel, toe = self.body.foot_offsets('l')
        self.assertAlmostEqual(float(points['toe_l'].x), toe)
        self.assertAlmostEqual(float(points['heel_l'].x), heel)

    def test_hip_flexion(self):
        state = GeneralizedState.zeros()
        state.q[DOFS.index('hip_l')] = np.pi / 2
        points = forward_kinematics(state, self.body)
        self.assertAlmostEqual(float(points['knee_l'].x), self.thigh)
        self.assertAlmostEqual(float(points['knee_l'].y), 0.)
        self.assertAlmostEqual(float(points['knee_r'].x), 0.)
        self.assertAlmostEqual(float(points['ankle_l'].alpha), np.pi / 2)

    def test_rotating_point_acceleration(self):
        parent = PointKinematics(0., 0., 0., 0., 0., 0., 0., 2., 0.)
        point = propagate_point(parent, 0.5, 0.)
        # Centripetal acceleration ω² r towards the centre
        self.assertAlmostEqual(point.xddot, -4 * 0.5)
        self.assertAlmostEqual(point.ydot, 2 * 0.5)

    def test_batched_state(self):
        rng = np.random.default_rng(0)
        q = rng.normal(scale=0.3, size=(2, 5, N_DOFS))
        state = GeneralizedState(q, np.zeros_like(q), np.zeros_like(q))
        points = forward_kinematics(state, self.body)
        self.assertEqual(np.shape(points['toe_r'].x), (2, 5))
        single = forward_kinematics(GeneralizedState(q[1, 3], np.zeros(N_DOFS),
                                                     np.zeros(N_DOFS)), self.body)
        self.assertAlmostEqual(float(points['toe_r'].y[1, 3]), float(single['toe_r'].y))

    def test_invalid_state_shape(self):
        with self.assertRaises(InvalidInputError):
            GeneralizedState(np.zeros(8), np.zeros(8), np.zeros(8))
        with self.assertRaises(InvalidInputError):
            GeneralizedState(np.zeros(9), np.zeros(9), np.zeros(9), tau=np.zeros(5))

    def test_mirrored_points(self):
        rng = np.random.default_rng(1)
        state = GeneralizedState(rng.normal(scale=0.3, size=N_DOFS),
                                 np.zeros(N_DOFS), np.zeros(N_DOFS))
        points = mirror_points(forward_kinematics(state.mirrored(), self.body))
        original = forward_kinematics(state, self.body)
        for name in ['knee_l', 'toe_r', 'com_shank_l']:
            self.assertAlmostEqual(float(points[name].x), float(original[name].x))
            self.assertAlmostEqual(float(points[name].y), float(original[name].y))

    def test_velocity_is_position_derivative(self):
        rng = np.random.default_rng(2)
        q = rng.normal(scale=0.3, size=N_DOFS)
        qdot = rng.normal(size=N_DOFS)
        h = 1e-6
        plus = forward_kinematics(GeneralizedState(q + h * qdot, qdot, np.zeros(N_DOFS)),
                                  self.body)
        minus = forward_kinematics(GeneralizedState(q - h * qdot, qdot, np.zeros(N_DOFS)),
                                   self.body)
        points = forward_kinematics(GeneralizedState(q, qdot, np.zeros(N_DOFS)), self.body)
        for name in ['toe_l', 'com_foot_r', 'knee_r']:
            self.assertAlmostEqual(float(points[name].xdot),
                                   float((plus[name].x - minus[name].x) / (2 * h)), places=5)
            self.assertAlmostEqual(float(points[name].ydot),
                                   float((plus[name].y - minus[name].y) / (2 * h)), places=5)


class TestVirtualImu(unittest.TestCase):
    def setUp(self):
        self.body = scale_body(1.75, 70.)
        self.placement = default_placement(self.body)

    def test_static_reads_gravity(self):
        state = GeneralizedState.zeros()
        points = forward_kinematics(state, self.body, self.placement)
        readings = virtual_imu(points, self.placement)
        self.assertEqual(readings.shape, (len(SENSORS), 3))
        expected = np.tile([0., GRAVITY, 0.], (len(SENSORS), 1))
        np.testing.assert_allclose(readings, expected, atol=1e-12)

    def test_mounting_angle(self):
        placement = self.placement.with_offsets(
            mounting_angle=np.full(len(SENSORS), np.pi / 2))
        points = forward_kinematics(GeneralizedState.zeros(), self.body, placement)
        readings = virtual_imu(points, placement)
        np.testing.assert_allclose(readings[:, 0], GRAVITY)
        np.testing.assert_allclose(readings[:, 1], 0., atol=1e-12)

    def test_gyro_reads_segment_rate(self):
        state = GeneralizedState.zeros()
        state.qdot[2] = 0.5
        state.qdot[DOFS.index('knee_r')] = 1.
        points = forward_kinematics(state, self.body, self.placement)
        readings = virtual_imu(points, self.placement)
        self.assertAlmostEqual(readings[self.placement.index('pelvis'), 2], 0.5)
        self.assertAlmostEqual(readings[self.placement.index('shank_r'), 2], 1.5)
        self.assertAlmostEqual(readings[self.placement.index('thigh_r'), 2], 0.5)

    def test_missing_sensor(self):
        points = forward_kinematics(GeneralizedState.zeros(), self.body)
        with self.assertRaises(InvalidInputError):
            virtual_imu(points, self.placement)

    def test_gradient_wrt_offsets(self):
        rng = np.random.default_rng(3)
        q = rng.normal(scale=0.3, size=(4, N_DOFS))
        state = GeneralizedState(q, rng.normal(size=(4, N_DOFS)),
                                 rng.normal(size=(4, N_DOFS)))

        def loss(d_x):
            placement = self.placement.with_offsets(d_x=d_x)
            points = forward_kinematics(state, self.body, placement)
            return F.sum(virtual_imu(points, placement) ** 2)

        x0 = np.array(self.placement.d_x, dtype=float)
        np.testing.assert_allclose(analytic_gradient(loss, x0),
                                   numerical_gradient(loss, x0),
                                   rtol=1e-5, atol=1e-4)


class TestIntegration(unittest.TestCase):
    def test_trapezoid(self):
        velocity = np.array([0., 1., 2., 3.])
        position = integrate_root_velocity(velocity, dt=0.5)
        np.testing.assert_allclose(position, [0., 0.25, 1., 2.25])

    def test_batched_axis(self):
        velocity = np.ones((3, 10))
        position = integrate_root_velocity(velocity, dt=0.1, axis=-1)
        self.assertEqual(position.shape, (3, 10))
        np.testing.assert_allclose(position[:, -1], 0.9)


if __name__ == '__main__':
    unittest.main()
