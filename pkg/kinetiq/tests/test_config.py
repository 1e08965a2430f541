import unittest
import tempfile
import json
import os

import kinetiq
from kinetiq.tools.config import *
from kinetiq.errors import ConfigError
from kinetiq.analysis.metrics import EvaluationConfig
from kinetiq.training.training import TrainConfig


class TestConfig(unittest.TestCase):
    def setUp(self):
        self.folder = tempfile.TemporaryDirectory()
        self.d = {
            'training': {'steps': 10,
                         'window': 256},
            'losses': {'weights': {'kane': 3.,
                                   'imu': 30.}},
            'sensors': ['pelvis', 'foot_l']}
        self.config = DictConfig('run', folder=self.folder.name,
                                 config=self.d)

    def tearDown(self):
        self.folder.cleanup()

    def test_attribute_access(self):
        self.assertEqual(self.config.training.steps, 10)
        self.assertEqual(self.config['training.steps'], 10)
        self.assertEqual(self.config['training']['window'], 256)
        self.assertIn('losses.weights.kane', self.config)
        self.assertNotIn('losses.weights.torque', self.config)
        with self.assertRaises(AttributeError):
            self.config.network

    def test_save_load_file(self):
        self.config.save(folder=self.folder.name)

        filepath = os.path.join(self.folder.name, 'run.json')
        self.assertTrue(os.path.exists(filepath))
        self.assertFalse(os.path.exists(os.path.join(self.folder.name, 'run')))

        config_loaded = DictConfig('run', folder=self.folder.name)
        self.assertFalse(config_loaded.save_as_dir)
        self.assertEqual(config_loaded.to_dict(), self.d)

    def test_save_load_dir(self):
        self.config.save(folder=self.folder.name, save_as_dir=True)

        folderpath = os.path.join(self.folder.name, 'run')
        self.assertTrue(os.path.isdir(folderpath))
        for key in self.config.keys():
            self.assertTrue(os.path.exists(os.path.join(folderpath, f'{key}.json')))

        config_loaded = DictConfig('run', folder=self.folder.name)
        self.assertTrue(config_loaded.save_as_dir)
        self.assertEqual(config_loaded.to_dict(), self.d)
        self.assertIsInstance(config_loaded.sensors, ListConfig)
        self.assertIsInstance(config_loaded.losses.weights, DictConfig)

    def test_load_no_update(self):
        self.config.save(folder=self.folder.name, save_as_dir=True)
        self.config.training.pop('window')
        old_config = self.config.load(update=False)
        self.assertIn('window', old_config['training'])
        self.assertNotIn('window', self.config.training)

    def test_dotted_set_creates_nested(self):
        self.config['network.hidden'] = 32
        self.assertIsInstance(self.config.network, DictConfig)
        self.assertEqual(self.config.network.hidden, 32)
        self.assertEqual(self.config.network.config_path, 'config:network')

    def test_refresh(self):
        d = {'training': {'steps': 20},
             'losses': {'weights': {'kane': 3., 'imu': 30.}},
             'sensors': ['pelvis']}
        self.config.refresh(config=d)
        self.assertEqual(self.config.to_dict(), d)

    def test_non_string_key(self):
        with self.assertRaises(ConfigError):
            self.config[1] = 2

    def test_deepcopy_is_plain(self):
        import copy
        copied = copy.deepcopy(self.config)
        self.assertNotIsInstance(copied, DictConfig)
        self.assertEqual(copied, self.d)


class TestConfigMirroring(unittest.TestCase):
    def setUp(self):
        self.config = DictConfig('config', config={
            'training': {'window': 256},
            'placement': {}})

    def test_simple_mirroring(self):
        self.config.placement.window = 'config:training.window'
        self.assertEqual(self.config.placement.window, 256)
        self.assertEqual(dict.__getitem__(self.config.placement, 'window'),
                         'config:training.window')

        self.config.training.window = 128
        self.assertEqual(self.config.placement.window, 128)

        self.config.placement.window = 64
        self.assertEqual(self.config.training.window, 128)
        self.assertEqual(self.config.placement.window, 64)

    def test_chained_mirroring(self):
        self.config.training.steps = 5
        self.config.placement.steps = 'config:training.steps'
        self.config.placement.max_steps = 'config:placement.steps'
        self.assertEqual(self.config.placement.max_steps, 5)

        self.config.training.steps = 7
        self.assertEqual(self.config.placement.max_steps, 7)

    def test_to_dict_dependent_value(self):
        self.config.placement.window = 'config:training.window'
        self.assertEqual(self.config.to_dict()['placement']['window'], 256)
        self.assertEqual(self.config.to_dict(dependent_value=False)['placement']['window'],
                         'config:training.window')


class TestConfigInheritance(unittest.TestCase):
    def setUp(self):
        self.config = DictConfig('config', config={
            'variants': {'baseline': {'noise': 0.25, 'steps': 10}},
            'presets': {'long': {'steps': 1000}}})

    def test_inherit_relative(self):
        self.config.variants.quiet = {'inherit': 'baseline', 'noise': 0.}
        self.assertEqual(self.config.variants.quiet.noise, 0.)
        self.assertIn('steps', self.config.variants.quiet)
        self.assertEqual(self.config.variants.quiet.steps, 10)

    def test_inherit_absolute(self):
        self.config.variants.long = {'inherit': 'config:presets.long'}
        self.assertEqual(self.config.variants.long.steps, 1000)
        self.assertNotIn('noise', self.config.variants.long)


class TestConfigSignal(unittest.TestCase):
    def setUp(self):
        self.config = DictConfig('config', config={'losses': {'weights': {'kane': 3.}}})
        self.received = []

    def receiver(self, sender, value=None):
        self.received.append((sender, value))

    def test_signal_on_set(self):
        DictConfig.signal.connect(self.receiver)
        try:
            self.config.losses.weights.kane = 6.
        finally:
            DictConfig.signal.disconnect(self.receiver)
        self.assertIn(('config:losses.weights.kane', 6.), self.received)

    def test_no_signal_after_disconnect(self):
        DictConfig.signal.connect(self.receiver)
        DictConfig.signal.disconnect(self.receiver)
        self.config.losses.weights.kane = 6.
        self.assertEqual(self.received, [])


class TestConfigFiles(unittest.TestCase):
    def setUp(self):
        self.folder = tempfile.TemporaryDirectory()

    def tearDown(self):
        self.folder.cleanup()

    def write(self, filename, content):
        filepath = os.path.join(self.folder.name, filename)
        with open(filepath, 'w') as f:
            if isinstance(content, str):
                f.write(content)
            else:
                json.dump(content, f)
        return filepath

    def test_include(self):
        self.write('base.json', {'training': {'steps': 10, 'window': 64}})
        filepath = self.write('run.json', {'include': 'base.json',
                                           'training.steps': 20})
        config = load_config_file(filepath)
        self.assertEqual(config, {'training': {'steps': 20, 'window': 64}})

    def test_include_order(self):
        self.write('a.json', {'training': {'steps': 1, 'seed': 1}})
        self.write('b.json', {'training': {'steps': 2}})
        filepath = self.write('run.json', {'include': ['a.json', 'b.json']})
        config = load_config_file(filepath)
        self.assertEqual(config['training'], {'steps': 2, 'seed': 1})

    def test_include_cycle(self):
        self.write('a.json', {'include': 'b.json'})
        filepath = self.write('b.json', {'include': 'a.json'})
        with self.assertRaises(ConfigError):
            load_config_file(filepath)

    def test_malformed_json(self):
        filepath = self.write('bad.json', '{"training": ')
        with self.assertRaises(ConfigError):
            load_config_file(filepath)

    def test_update_dict_merges(self):
        d = {'losses': {'weights': {'kane': 3., 'imu': 30.}}}
        update_dict(d, {'losses': {'weights': {'kane': 6.}}})
        self.assertEqual(d, {'losses': {'weights': {'kane': 6., 'imu': 30.}}})


class TestDefaultConfig(unittest.TestCase):
    def test_defaults_match_dataclasses(self):
        defaults = kinetiq.load_default_config().to_dict()
        self.assertEqual(TrainConfig.from_config(defaults), TrainConfig())
        self.assertEqual(EvaluationConfig.from_config(defaults['evaluation']),
                         EvaluationConfig())

    def test_defaults_are_fresh(self):
        config = kinetiq.load_default_config()
        config.training.steps = 1
        self.assertEqual(kinetiq.load_default_config().training.steps, 20000)

    def test_folders(self):
        self.assertEqual(kinetiq.get_data_folder('/tmp/runs'), '/tmp/runs')
        self.assertEqual(kinetiq.get_cache_folder('/tmp/cache'), '/tmp/cache')
        if kinetiq.cache_env_var not in os.environ:
            self.assertEqual(kinetiq.get_cache_folder(data_folder='/tmp/runs'),
                             os.path.join('/tmp/runs', '.cache'))


if __name__ == '__main__':
    unittest.main()
