import unittest
import tempfile
import os

import numpy as np

from kinetiq.autodiff import Tensor, backward
from kinetiq.autodiff import functional as F
from kinetiq.errors import ConfigError, InvalidInputError, LayoutMismatchError
from kinetiq.model import (ContactParams, GRAVITY, SENSORS, N_DOFS,
                           default_placement, load_template, scale_body)
from kinetiq.network import *
from kinetiq.tests.mocks import tiny_network_config


class TestLayout(unittest.TestCase):
    def test_channel_count(self):
        layout = InputLayout()
        self.assertEqual(layout.n_imu, 21)
        self.assertEqual(layout.n_conditioning, 28 + 21 + 5)
        self.assertEqual(layout.n_inputs, 82)
        self.assertEqual(len(layout.channel_names()), 82)
        self.assertEqual(N_OUTPUTS, 46)

    def test_layout_compatibility(self):
        layout = InputLayout()
        layout.check_compatible(InputLayout.from_dict(layout.to_dict()))
        with self.assertRaises(LayoutMismatchError):
            layout.check_compatible(InputLayout(sensors=SENSORS[:3]))
        with self.assertRaises(LayoutMismatchError):
            layout.check_compatible(InputLayout(version=2))

    def test_template_conditioning_is_centred(self):
        template = load_template()
        stats = ConditioningStats.from_template(template)
        placement = default_placement(template)
        vector = conditioning_vector(template, placement, ContactParams())
        np.testing.assert_allclose(stats.normalize(vector), 0., atol=1e-12)
        other = conditioning_vector(scale_body(1.6, 60.), placement, ContactParams())
        self.assertTrue(np.any(np.abs(stats.normalize(other)) > 0.1))

    def test_assemble_inputs(self):
        body = load_template()
        placement = default_placement(body, ['pelvis', 'foot_r'])
        stats = ConditioningStats.from_template(body)
        conditioning = conditioning_vector(body, placement, ContactParams())
        imu = np.ones((2, 5, 2, 3))
        inputs = assemble_inputs(imu, placement, conditioning, stats, active=['foot_r'])
        self.assertEqual(inputs.shape, (2, 5, 82))
        layout = InputLayout()
        names = layout.channel_names()
        row = dict(zip(names, inputs[1, 3]))
        self.assertEqual(row['foot_r.omega'], 1.)
        self.assertAlmostEqual(row['foot_r.a_y'], 1 / GRAVITY)
        self.assertEqual(row['pelvis.a_x'], 0.)
        self.assertEqual(row['mask.foot_r'], 1.)
        self.assertEqual(row['mask.pelvis'], 0.)
        self.assertEqual(row['mask.thigh_l'], 0.)

    def test_assemble_shape_mismatch(self):
        body = load_template()
        placement = default_placement(body, ['pelvis'])
        stats = ConditioningStats.from_template(body)
        conditioning = conditioning_vector(body, placement, ContactParams())
        with self.assertRaises(InvalidInputError):
            assemble_inputs(np.zeros((5, 2, 3)), placement, conditioning, stats)

    def test_placement_gradient_reaches_inputs(self):
        body = load_template()
        placement = default_placement(body)
        d_x = Tensor(np.array(placement.d_x), requires_grad=True)
        stats = ConditioningStats.from_template(body)
        conditioning = conditioning_vector(body, placement.with_offsets(d_x=d_x),
                                           ContactParams())
        inputs = assemble_inputs(np.zeros((4, 7, 3)), placement, conditioning, stats)
        backward(F.sum(inputs))
        np.testing.assert_allclose(d_x.grad, 4 / stats.scale[28:35])


class TestDecoding(unittest.TestCase):
    def test_round_trip(self):
        outputs = np.random.default_rng(0).normal(size=(3, 20, N_OUTPUTS))
        decoded = decode_outputs(outputs, 0.01)
        np.testing.assert_allclose(encode_state(decoded.state, decoded.gc), outputs)
        self.assertEqual(decoded.gc.shape, (3, 20, 14))

    def test_root_position_is_integrated(self):
        outputs = np.zeros((10, N_OUTPUTS))
        outputs[:, N_DOFS - 1] = 1.5
        state = decode_outputs(outputs, 0.01).state
        np.testing.assert_allclose(state.q[:, 0], 1.5 * 0.01 * np.arange(10))

    def test_wrong_width(self):
        with self.assertRaises(InvalidInputError):
            decode_outputs(np.zeros((10, 45)), 0.01)


class TestNetworkConfig(unittest.TestCase):
    def test_from_config(self):
        config = NetworkConfig.from_config({'hidden': 16, 'dropout': 0,
                                            'bidirectional': True})
        self.assertEqual(config.hidden, 16)
        self.assertEqual(config.directions, 2)
        for bad in [{'hidden': 1.5}, {'bidirectional': 1}, {'units': 4},
                    {'dropout': 1.}, {'out': 40}, {'hidden': True}]:
            with self.assertRaises(ConfigError):
                NetworkConfig.from_config(bad)

    def test_parameter_count(self):
        for config in [NetworkConfig(), tiny_network_config(),
                       NetworkConfig(lstm_layers=3, hidden=5, dense1=7, bidirectional=True)]:
            params = init_params(config, 82, seed=0)
            self.assertEqual(list(params), parameter_names(config))
            self.assertEqual(sum(p.size for p in params.values()),
                             parameter_count(config, 82))

    def test_forget_gate_bias(self):
        config = tiny_network_config()
        params = init_params(config, 82, seed=1)
        H = config.hidden
        bias = params['lstm0_fwd.b']
        bound = 1 / np.sqrt(H)
        self.assertTrue(np.all(np.abs(bias[H:2 * H] - 1.) <= bound))
        self.assertTrue(np.all(np.abs(bias[:H]) <= bound))

    def test_seeded_initialization(self):
        config = tiny_network_config()
        first, second = init_params(config, 82, 3), init_params(config, 82, 3)
        for name in first:
            np.testing.assert_array_equal(first[name], second[name])
        self.assertFalse(np.array_equal(first['dense2.W'],
                                        init_params(config, 82, 4)['dense2.W']))


class TestEstimator(unittest.TestCase):
    def setUp(self):
        self.estimator = Estimator(tiny_network_config(), 82, seed=0)
        self.inputs = np.random.default_rng(0).normal(size=(20, 82))

    def test_shapes(self):
        outputs, state = self.estimator.forward(self.inputs)
        self.assertEqual(outputs.shape, (20, N_OUTPUTS))
        self.assertEqual(len(state), 2)
        batched, _ = self.estimator.forward(np.stack([self.inputs] * 3))
        self.assertEqual(batched.shape, (3, 20, N_OUTPUTS))
        np.testing.assert_allclose(batched[1], outputs)

    def test_streaming_matches_sequence(self):
        outputs, _ = self.estimator.forward(self.inputs)
        session = self.estimator.session()
        streamed = np.stack([session.step(x) for x in self.inputs])
        self.assertEqual(session.steps, 20)
        np.testing.assert_allclose(streamed, outputs, atol=1e-12)

        session.reset()
        np.testing.assert_allclose(session.step(self.inputs[0]), outputs[0])

    def test_causal(self):
        outputs, _ = self.estimator.forward(self.inputs)
        changed = self.inputs.copy()
        changed[10] += 1.
        changed_outputs, _ = self.estimator.forward(changed)
        np.testing.assert_allclose(changed_outputs[:10], outputs[:10], atol=1e-12)
        self.assertFalse(np.allclose(changed_outputs[10:], outputs[10:]))

    def test_bidirectional(self):
        estimator = Estimator(NetworkConfig(lstm_layers=1, hidden=4, dense1=4,
                                            bidirectional=True), 82)
        outputs, _ = estimator.forward(self.inputs)
        changed = self.inputs.copy()
        changed[10] += 1.
        changed_outputs, _ = estimator.forward(changed)
        self.assertFalse(np.allclose(changed_outputs[:10], outputs[:10]))
        with self.assertRaises(InvalidInputError):
            estimator.session()
        with self.assertRaises(InvalidInputError):
            estimator.forward(self.inputs, state=estimator.initial_state())

    def test_dropout(self):
        with self.assertRaises(InvalidInputError):
            self.estimator.forward(self.inputs, training=True)
        first, _ = self.estimator.forward(self.inputs, training=True,
                                          rng=np.random.default_rng(1))
        second, _ = self.estimator.forward(self.inputs, training=True,
                                           rng=np.random.default_rng(1))
        np.testing.assert_array_equal(F.value(first), F.value(second))
        evaluation, _ = self.estimator.forward(self.inputs)
        self.assertFalse(np.allclose(F.value(first), evaluation))

    def test_wrong_inputs(self):
        with self.assertRaises(InvalidInputError):
            self.estimator.forward(np.zeros((20, 81)))

    def test_parameter_gradient(self):
        estimator = Estimator(NetworkConfig(lstm_layers=2, hidden=3, dense1=3, dropout=0.),
                              82, seed=2)
        inputs = self.inputs[:6]
        outputs, _ = estimator.forward(inputs, differentiable=True)
        backward(F.sum(outputs * outputs))

        h = 1e-6
        for name, index in [('lstm0_fwd.W_hh', (1, 4)), ('lstm1_fwd.b', (2,)),
                            ('dense1.W', (0, 1))]:
            param = estimator.params[name]
            original = param.data[index]
            param.data[index] = original + h
            plus = np.sum(estimator.forward(inputs)[0] ** 2)
            param.data[index] = original - h
            minus = np.sum(estimator.forward(inputs)[0] ** 2)
            param.data[index] = original
            self.assertAlmostEqual(param.grad[index], (plus - minus) / (2 * h), places=5)

    def test_state_dict(self):
        other = Estimator(tiny_network_config(), 82, seed=9)
        other.load_state_dict(self.estimator.state_dict())
        np.testing.assert_array_equal(other.forward(self.inputs)[0],
                                      self.estimator.forward(self.inputs)[0])
        wrong = Estimator(NetworkConfig(lstm_layers=2, hidden=4, dense1=8), 82)
        with self.assertRaises(InvalidInputError):
            wrong.load_state_dict(self.estimator.state_dict())


class TestCheckpoint(unittest.TestCase):
    def setUp(self):
        self.folder = tempfile.TemporaryDirectory()
        self.filepath = os.path.join(self.folder.name, 'checkpoint.h5')
        body = load_template()
        self.checkpoint = Checkpoint(
            estimator=Estimator(tiny_network_config(), 82, seed=0),
            layout=InputLayout(),
            stats=ConditioningStats.from_template(body),
            placement=default_placement(body, ['pelvis', 'foot_l']),
            optimizer_state={'t': np.array(3), 'm0': np.ones(4)},
            metadata={'steps': 3, 'seed': 0})

    def tearDown(self):
        self.folder.cleanup()

    def test_round_trip(self):
        save_checkpoint(self.filepath, self.checkpoint)
        self.assertFalse(os.path.exists(self.filepath + '.tmp'))
        loaded = load_checkpoint(self.filepath, InputLayout())

        inputs = np.random.default_rng(0).normal(size=(10, 82))
        np.testing.assert_array_equal(loaded.estimator.forward(inputs)[0],
                                      self.checkpoint.estimator.forward(inputs)[0])
        self.assertEqual(loaded.estimator.config, self.checkpoint.estimator.config)
        self.assertEqual(loaded.metadata, {'steps': 3, 'seed': 0})
        self.assertEqual(loaded.placement.sensors, ('pelvis', 'foot_l'))
        self.assertEqual(int(loaded.optimizer_state['t']), 3)
        np.testing.assert_array_equal(loaded.stats.center, self.checkpoint.stats.center)

    def test_float32_parameters(self):
        self.checkpoint.estimator = Estimator(tiny_network_config(), 82, dtype=np.float32)
        save_checkpoint(self.filepath, self.checkpoint)
        loaded = load_checkpoint(self.filepath)
        self.assertEqual(loaded.estimator.parameters[0].data.dtype, np.float32)

    def test_layout_mismatch(self):
        save_checkpoint(self.filepath, self.checkpoint)
        with self.assertRaises(LayoutMismatchError):
            load_checkpoint(self.filepath, InputLayout(sensors=('pelvis', 'foot_l')))

    def test_missing_file(self):
        with self.assertRaises(FileNotFoundError):
            load_checkpoint(os.path.join(self.folder.name, 'missing.h5'))


if __name__ == '__main__':
    unittest.main()
