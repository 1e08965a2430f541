import unittest

import numpy as np

from kinetiq.autodiff import functional as F
from kinetiq.errors import ConfigError, InvalidInputError
from kinetiq.model import *
from kinetiq.model.contact import ContactPoint
from kinetiq.tests.mocks import analytic_gradient, numerical_gradient


def ankle(x=0., y=0., alpha=0., xdot=0., ydot=0., alphadot=0., friction_logit=0.):
    return AnkleContactState(x=np.asarray(x, dtype=float), y=np.asarray(y, dtype=float),
                             alpha=np.asarray(alpha, dtype=float),
                             xdot=np.asarray(xdot, dtype=float),
                             ydot=np.asarray(ydot, dtype=float),
                             alphadot=np.asarray(alphadot, dtype=float),
                             friction_logit=np.asarray(friction_logit, dtype=float))


class TestContactParams(unittest.TestCase):
    def test_defaults(self):
        params = ContactParams()
        np.testing.assert_allclose(params.as_vector(), [300., 100., 0.75, 0.5, 7.])
        self.assertFalse(params.two_point)

    def test_invalid_values(self):
        with self.assertRaises(InvalidInputError):
            ContactParams(mu_max=1.5)
        with self.assertRaises(InvalidInputError):
            ContactParams(stiffness=0.)

    def test_from_config(self):
        params = ContactParams.from_config({'beta': 200, 'two_point': True})
        self.assertEqual(params.beta, 200.)
        self.assertTrue(params.two_point)
        with self.assertRaises(ConfigError):
            ContactParams.from_config({'spring': 1.})
        with self.assertRaises(ConfigError):
            ContactParams.from_config({'two_point': 'yes'})
        with self.assertRaises(ConfigError):
            ContactParams.from_config({'mu_max': 2.})


class TestContactPoint(unittest.TestCase):
    def setUp(self):
        self.geometry = FootGeometry(heel=-0.05, toe=0.15)

    def test_level_foot_sits_midway(self):
        point = contact_point(ankle(), self.geometry)
        self.assertAlmostEqual(float(point.offset), 0.05)

    def test_blend_follows_foot_angle(self):
        toe_down = contact_point(ankle(alpha=1.), self.geometry)
        heel_down = contact_point(ankle(alpha=-1.), self.geometry)
        blend = (np.tanh(7.) + 1) / 2
        self.assertAlmostEqual(float(toe_down.offset), -0.05 + blend * 0.2)
        self.assertAlmostEqual(float(heel_down.offset), -0.05 + (1 - blend) * 0.2)

    def test_velocity_is_position_derivative(self):
        state = dict(x=0.1, y=0.02, alpha=0.1, xdot=0.7, ydot=-0.3, alphadot=2.)
        h = 1e-6

        def position(sign):
            shifted = ankle(x=state['x'] + sign * h * state['xdot'],
                            y=state['y'] + sign * h * state['ydot'],
                            alpha=state['alpha'] + sign * h * state['alphadot'])
            point = contact_point(shifted, self.geometry)
            return np.array([point.x, point.y], dtype=float)

        point = contact_point(ankle(**state), self.geometry)
        derivative = (position(1) - position(-1)) / (2 * h)
        np.testing.assert_allclose([point.xdot, point.ydot], derivative, rtol=1e-6)

    def test_invalid_geometry(self):
        with self.assertRaises(InvalidInputError):
            FootGeometry(heel=0.1, toe=0.1)

    def test_geometry_from_body(self):
        body = scale_body(1.75, 70.)
        length = float(F.value(body.length)[SEGMENTS.index('foot_l')])
        geometry = FootGeometry.from_body(body, 'l')
        self.assertAlmostEqual(geometry.heel, -0.25 * length)
        self.assertAlmostEqual(geometry.toe, 0.75 * length)
        self.assertIsInstance(geometry.toe, float)

    def test_decode(self):
        gc = np.arange(N_CONTACT_CHANNELS, dtype=float)
        right = AnkleContactState.decode(gc, 'r')
        self.assertEqual(float(right.x), 6.)
        self.assertEqual(float(right.alphadot), 11.)
        self.assertEqual(float(right.friction_logit), 13.)
        with self.assertRaises(InvalidInputError):
            AnkleContactState.decode(np.zeros(12), 'l')


class TestGroundReaction(unittest.TestCase):
    def test_penetration(self):
        point = ContactPoint(x=0., y=-0.01, xdot=0., ydot=0., offset=0.)
        fx, fy = grf(point, friction_logit=0.)
        self.assertAlmostEqual(float(fy), np.logaddexp(0, 3.) * 100. / 300.)
        self.assertAlmostEqual(float(fx), 0.)

    def test_friction(self):
        point = ContactPoint(x=0., y=-0.01, xdot=0., ydot=0., offset=0.)
        fx, fy = grf(point, friction_logit=1.)
        self.assertAlmostEqual(float(fx), 0.5 * np.tanh(1.) * float(fy))
        fx, _ = grf(point, friction_logit=100.)
        self.assertLessEqual(abs(float(fx)), 0.5 * float(fy) + 1e-12)

    def test_airborne_force_vanishes(self):
        point = ContactPoint(x=0., y=0.1, xdot=0., ydot=0., offset=0.)
        _, fy = grf(point, friction_logit=0.)
        self.assertLess(float(fy), 1e-10)
        self.assertGreaterEqual(float(fy), 0.)

    def test_damping_cuts_off_when_lifting(self):
        params = ContactParams()
        point = ContactPoint(x=0., y=-0.01, xdot=0., ydot=2. / params.damping, offset=0.)
        _, fy = grf(point, friction_logit=0., params=params)
        self.assertEqual(float(fy), 0.)

        landing = ContactPoint(x=0., y=-0.01, xdot=0., ydot=-0.5, offset=0.)
        resting = ContactPoint(x=0., y=-0.01, xdot=0., ydot=0., offset=0.)
        self.assertGreater(float(grf(landing, 0.)[1]), float(grf(resting, 0.)[1]))

    def test_gradient(self):
        def loss(values):
            point = ContactPoint(x=0., y=values[0], xdot=0., ydot=values[1], offset=0.)
            fx, fy = grf(point, values[2])
            return fx * fx + fy

        x0 = np.array([-0.004, -0.2, 0.3])
        np.testing.assert_allclose(analytic_gradient(loss, x0),
                                   numerical_gradient(loss, x0), rtol=1e-5)


class TestContactForces(unittest.TestCase):
    def setUp(self):
        self.body = scale_body(1.75, 70.)
        self.ankles = {'l': ankle(y=-0.005), 'r': ankle(y=0.2)}

    def test_sliding_point(self):
        solution = contact_forces(self.ankles, self.body)
        self.assertEqual(len(solution.forces), 2)
        self.assertGreater(float(solution.vertical_force('l')), 0.)
        self.assertLess(float(solution.vertical_force('r')), 1e-10)
        self.assertEqual(len(solution.points['l']), 1)

    def test_two_point(self):
        solution = contact_forces(self.ankles, self.body, ContactParams(two_point=True))
        self.assertEqual(len(solution.forces), 4)
        self.assertEqual([force.foot for force in solution.forces], ['l', 'l', 'r', 'r'])
        heel, toe = self.body.foot_offsets('l')
        self.assertAlmostEqual(float(solution.forces[0].offset), heel)
        self.assertAlmostEqual(float(solution.forces[1].offset), toe)
        # A level foot presses heel and toe equally
        self.assertAlmostEqual(float(solution.forces[0].fy), float(solution.forces[1].fy))

    def test_forces_close_the_dynamics(self):
        state = GeneralizedState.zeros()
        points = forward_kinematics(state, self.body)
        ankles = {side: AnkleContactState.from_points(points[f'ankle_{side}'], 0.)
                  for side in SIDES}
        solution = contact_forces(ankles, self.body)
        r = kane_residual(state, self.body, solution.forces)
        self.assertEqual(r.shape, (N_DOFS,))
        self.assertTrue(np.all(np.isfinite(r)))


if __name__ == '__main__':
    unittest.main()
