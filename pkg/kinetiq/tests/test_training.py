import unittest
from unittest import mock
import tempfile
import json
import os

import numpy as np

import kinetiq
from kinetiq.data.trials import ImuSequence, TrialRecord
from kinetiq.errors import ConfigError, InvalidInputError, TrainingDivergedError
from kinetiq.model.body import GRAVITY, SENSORS
from kinetiq.network import load_checkpoint
from kinetiq.training import *
from kinetiq.tests.mocks import kinematic_trial, tiny_train_config


def pelvis_only_trial(samples=100):
    data = np.zeros((samples, 1, 3))
    data[:, 0, 1] = GRAVITY
    return TrialRecord('pelvis_only', ImuSequence(data, ('pelvis',)), 1.75, 70.)


class TestTrainConfig(unittest.TestCase):
    def test_from_config(self):
        config = TrainConfig.from_config({'training': {'steps': 5, 'sensors': 'feet_shanks'},
                                          'network': {'hidden': 16},
                                          'losses': {'weights': {'imu': 10.}}})
        self.assertEqual(config.steps, 5)
        self.assertEqual(config.network.hidden, 16)
        self.assertEqual(config.active_sensors, SPARSE_PRESETS['feet_shanks'])
        self.assertEqual(config.to_dict()['network']['hidden'], 16)
        self.assertEqual(config.to_dict()['losses']['weights']['imu'], 10.)

    def test_defaults(self):
        self.assertEqual(TrainConfig().batch_size, 32)
        self.assertEqual(TrainConfig().window, 256)
        config = TrainConfig.from_config(kinetiq.load_default_config().to_dict())
        self.assertEqual(config.batch_size, 32)
        self.assertEqual(config.steps, 20000)

    def test_invalid_settings(self):
        for training in [{'steps': 1.5}, {'sensors': 'hands'}, {'filter_segments': 1},
                         {'bogus': 1}, {'batch_size': 0}, {'learning_rate': True}]:
            with self.assertRaises(ConfigError):
                TrainConfig.from_config({'training': training})
        with self.assertRaises(ConfigError):
            TrainConfig.from_config({'network': {'out': 12}})

    def test_sparse_imu_weight(self):
        self.assertEqual(TrainConfig().weights.imu, 30.)
        config = TrainConfig(sensors='shanks_pelvis')
        self.assertAlmostEqual(config.weights.imu, 30. * 7 / 3)
        self.assertEqual(config.weights.kane, 3.)

    def test_finetune_weights(self):
        weights = finetune_weights(TrainConfig().weights, 10.)
        self.assertEqual((weights.kane, weights.temporal, weights.gc), (30., 30., 1000.))
        self.assertEqual(weights.imu, 30.)


class TestCorpus(unittest.TestCase):
    def test_segments_and_footspeed(self):
        trials = prepare_corpus([kinematic_trial(duration=1.)], tiny_train_config())
        self.assertEqual(len(trials), 1)
        trial = trials[0]
        self.assertEqual(trial.view.name, 'walk_000[0:100]')
        self.assertEqual(set(trial.footspeed), {'l', 'r'})
        self.assertEqual(len(trial.footspeed['l']), 100)
        self.assertFalse(hasattr(trial.view, 'references'))

    def test_missing_preset_sensors(self):
        with self.assertRaises(InvalidInputError):
            prepare_corpus([pelvis_only_trial()], tiny_train_config())
        with self.assertRaises(InvalidInputError):
            prepare_corpus([pelvis_only_trial()], tiny_train_config(sensors='shanks_pelvis'))

    def test_sparse_preset_subset(self):
        trials = prepare_corpus([kinematic_trial(duration=1.)],
                                tiny_train_config(sensors='shanks_pelvis'))
        self.assertEqual(trials[0].placement.sensors, SENSORS)
        self.assertEqual(set(trials[0].footspeed), {'l', 'r'})


class TestTrainer(unittest.TestCase):
    def setUp(self):
        self.folder = tempfile.TemporaryDirectory()
        self.records = [kinematic_trial(duration=1.)]
        self.config = tiny_train_config()

    def tearDown(self):
        self.folder.cleanup()

    def test_deterministic(self):
        first = train(self.config, self.records).history
        second = train(self.config, self.records).history
        self.assertEqual(len(first), 2)
        self.assertEqual(first, second)
        self.assertTrue(all(np.isfinite(h['total']) for h in first))
        other = train(tiny_train_config(seed=1), self.records).history
        self.assertNotEqual(first, other)

    def test_run_folder(self):
        trainer = train(self.config, self.records, run_folder=self.folder.name)
        self.assertTrue(os.path.exists(os.path.join(self.folder.name, 'checkpoint.h5')))
        with open(os.path.join(self.folder.name, 'manifest.json')) as f:
            manifest = json.load(f)
        self.assertEqual(manifest['phase'], 'train')
        self.assertEqual(manifest['seed'], 0)
        self.assertEqual(manifest['corpus'], ['walk_000[0:100]'])
        self.assertEqual(len(manifest['corpus_hash']), 64)

        with open(os.path.join(self.folder.name, 'metrics.jsonl')) as f:
            lines = [json.loads(line) for line in f]
        self.assertEqual([line['step'] for line in lines], [1, 2])
        self.assertEqual(lines[-1]['losses'], trainer.history[-1])

        checkpoint = load_checkpoint(os.path.join(self.folder.name, 'checkpoint.h5'))
        self.assertEqual(checkpoint.metadata['steps'], 2)
        self.assertEqual(checkpoint.metadata['phase'], 'train')
        self.assertEqual(checkpoint.placement.sensors, SENSORS)

    def test_parameters_change(self):
        trainer = Trainer(self.config, prepare_corpus(self.records, self.config))
        before = trainer.estimator.state_dict()
        trainer.run(1)
        after = trainer.estimator.state_dict()
        self.assertTrue(any(not np.array_equal(before[k], after[k]) for k in before))
        self.assertEqual(trainer.step_count, 1)

    def test_evaluate_is_deterministic(self):
        trainer = Trainer(self.config, prepare_corpus(self.records, self.config))
        samples = trainer.sampler.batch(2)
        first = trainer.evaluate(samples).values_dict()
        second = trainer.evaluate(samples).values_dict()
        self.assertEqual(first, second)

    def test_finetune(self):
        trainer = train(self.config, self.records)
        tuned = finetune(self.config, self.records, trainer.checkpoint(), multiplier=5.,
                         run_folder=self.folder.name, steps=1)
        self.assertEqual(tuned.step_count, 3)
        self.assertEqual(tuned.weights.kane, 15.)
        self.assertEqual(tuned.weights.imu, 30.)
        with open(os.path.join(self.folder.name, 'manifest.json')) as f:
            manifest = json.load(f)
        self.assertEqual(manifest['phase'], 'finetune')
        self.assertEqual(manifest['multiplier'], 5.)
        self.assertEqual(manifest['effective_weights']['gc'], 500.)

    def test_divergence(self):
        trainer = Trainer(self.config, prepare_corpus(self.records, self.config))
        diverged = total_loss({'kane': 1., 'imu': np.nan})
        with mock.patch.object(Trainer, 'batch_losses', return_value=diverged):
            with self.assertRaises(TrainingDivergedError) as cm:
                trainer.step()
        self.assertEqual(cm.exception.term, 'imu')
        self.assertEqual(cm.exception.step, 0)
        self.assertIsNone(cm.exception.checkpoint_path)

        filepath = trainer.save(os.path.join(self.folder.name, 'checkpoint.h5'))
        with mock.patch.object(Trainer, 'batch_losses', return_value=diverged):
            with self.assertRaises(TrainingDivergedError) as cm:
                trainer.step()
        self.assertEqual(cm.exception.checkpoint_path, filepath)

    def test_divergence_saves_run_checkpoint(self):
        diverged = total_loss({'kane': 1., 'imu': np.nan})
        with mock.patch.object(Trainer, 'batch_losses', return_value=diverged):
            with self.assertRaises(TrainingDivergedError) as cm:
                train(self.config, self.records, run_folder=self.folder.name, steps=2)
        filepath = os.path.join(self.folder.name, 'checkpoint.h5')
        self.assertEqual(cm.exception.checkpoint_path, filepath)
        self.assertEqual(load_checkpoint(filepath).metadata['steps'], 0)


class TestPlacementCalibration(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.config = tiny_train_config(batch_size=1)
        cls.records = [kinematic_trial(duration=1.)]
        cls.checkpoint = train(cls.config, cls.records, steps=1).checkpoint()

    def test_trust_region(self):
        before = self.checkpoint.estimator.state_dict()
        result = optimize_placement(self.checkpoint, self.records, self.config,
                                    steps=3, learning_rate=1., trust_region=0.01,
                                    angle_trust_region=0.02)
        self.assertEqual(len(result.history), 3)
        for shift in result.shift().values():
            self.assertTrue(np.all(np.abs(shift[:2]) <= 0.01 + 1e-12))
            self.assertLessEqual(abs(shift[2]), 0.02 + 1e-12)
        self.assertTrue(result.projected)

        after = self.checkpoint.estimator.state_dict()
        for name in before:
            np.testing.assert_array_equal(before[name], after[name])
        self.assertTrue(all(p.requires_grad for p in self.checkpoint.estimator.parameters))

    def test_subset_of_sensors(self):
        result = optimize_placement(self.checkpoint, self.records, self.config,
                                    sensors=['pelvis'], steps=2, learning_rate=0.1,
                                    fit_angles=False)
        shifts = result.shift()
        self.assertTrue(np.any(shifts['pelvis'][:2] != 0.))
        self.assertEqual(shifts['pelvis'][2], 0.)
        for sensor in SENSORS[1:]:
            np.testing.assert_array_equal(shifts[sensor], 0.)

    def test_unknown_sensor(self):
        with self.assertRaises(InvalidInputError):
            optimize_placement(self.checkpoint, self.records, self.config,
                               sensors=['wrist'], steps=1)


class TestInference(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.config = tiny_train_config()
        cls.record = kinematic_trial(duration=1.)
        cls.checkpoint = train(cls.config, [cls.record], steps=1).checkpoint()

    def test_streams(self):
        estimate = infer_trial(self.checkpoint, self.record, self.config)
        self.assertEqual(len(estimate), 100)
        self.assertEqual(estimate['q'].shape, (100, 9))
        self.assertEqual(estimate['tau'].shape, (100, 6))
        self.assertEqual(estimate['gc'].shape, (100, 14))
        self.assertEqual(estimate['grf'].shape, (100, 2, 2))
        np.testing.assert_array_equal(estimate['speed'], estimate['qdot'][:, 0])
        self.assertEqual(estimate.dt, 0.01)

    def test_streaming_matches_batch(self):
        batch = infer_trial(self.checkpoint, self.record, self.config)
        streamed = infer_trial(self.checkpoint, self.record, self.config, streaming=True)
        for name in PREDICTION_STREAMS:
            np.testing.assert_allclose(streamed[name], batch[name], atol=1e-10)

    def test_missing_sensors(self):
        with self.assertRaises(InvalidInputError):
            infer_trial(self.checkpoint, pelvis_only_trial(), self.config)

    def test_predictions_file(self):
        estimates = [infer_trial(self.checkpoint, self.record, self.config),
                     infer_trial(self.checkpoint, kinematic_trial(duration=0.5, seed=1),
                                 self.config)]
        with tempfile.TemporaryDirectory() as folder:
            filepath = save_predictions(os.path.join(folder, 'predictions.h5'),
                                        estimates, metadata={'steps': 1})
            loaded = load_predictions(filepath)
            with self.assertRaises(FileNotFoundError):
                load_predictions(os.path.join(folder, 'missing.h5'))
        self.assertEqual([e.name for e in loaded], ['walk_000', 'walk_001'])
        self.assertEqual(len(loaded[1]), 50)
        for name in PREDICTION_STREAMS:
            np.testing.assert_array_equal(loaded[0][name], estimates[0][name])
        self.assertEqual(loaded[0].body.to_dict(), estimates[0].body.to_dict())
        self.assertEqual(loaded[0].placement.sensors, SENSORS)


class TestAblation(unittest.TestCase):
    base_config = {'training': {'batch_size': 1, 'window': 32, 'log_every': 1,
                                'filter_segments': False},
                   'network': {'hidden': 8, 'dense1': 8}}

    def test_grid_sizes(self):
        self.assertEqual(len(grid_variants('toggles', self.base_config)), 8)
        self.assertEqual(len(grid_variants('sensitivity', self.base_config)), 16)
        self.assertEqual(list(grid_variants('sparse', self.base_config)),
                         list(SPARSE_PRESETS))
        with self.assertRaises(ConfigError):
            grid_variants('dropout', self.base_config)

    def test_sensitivity_scales_base_weights(self):
        config = variant_config(self.base_config, {'losses': {'weights': {'kane': 4.}}})
        variants = grid_variants('sensitivity', config)
        self.assertEqual(variants['kane_high'], {'losses': {'weights': {'kane': 8.}}})
        self.assertEqual(variants['imu_low'], {'losses': {'weights': {'imu': 15.}}})

    def test_variants_are_valid_configs(self):
        for grid in GRIDS:
            for name, overrides in grid_variants(grid, self.base_config).items():
                TrainConfig.from_config(variant_config(self.base_config, overrides))

    def test_variant_config_leaves_inputs(self):
        overrides = {'training': {'noise': 0.}}
        merged = variant_config(self.base_config, overrides)
        self.assertEqual(merged['training']['noise'], 0.)
        self.assertEqual(merged['training']['window'], 32)
        self.assertNotIn('noise', self.base_config['training'])
        merged['training']['noise'] = 1.
        self.assertEqual(overrides['training']['noise'], 0.)

    def test_run_ablation(self):
        records = [kinematic_trial(duration=1.)]
        with tempfile.TemporaryDirectory() as folder:
            runs = run_ablation(self.base_config, 'sparse', records,
                                evaluation_records=records, run_folder=folder,
                                steps=1, variants=['all', 'feet_shanks'])
            self.assertTrue(os.path.exists(os.path.join(folder, 'all', 'checkpoint.h5')))
            with open(os.path.join(folder, 'ablation.csv')) as f:
                rows = f.read().splitlines()
        self.assertEqual([run.name for run in runs], ['all', 'feet_shanks'])
        self.assertEqual(len(rows), 3)
        self.assertTrue(rows[0].startswith('variant,'))
        self.assertIn('jae', rows[0])

        with self.assertRaises(ConfigError):
            run_ablation(self.base_config, 'sparse', records, variants=['hands'])


if __name__ == '__main__':
    unittest.main()
