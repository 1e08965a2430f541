import unittest
import tempfile
import json
import os

import numpy as np

from kinetiq.data import *
from kinetiq.errors import InvalidInputError, TrialRejectedError
from kinetiq.model.body import SENSORS
from kinetiq.tests.mocks import kinematic_trial, static_trial


class TrialFolderTestCase(unittest.TestCase):
    def setUp(self):
        self.folder = tempfile.TemporaryDirectory()

    def tearDown(self):
        self.folder.cleanup()

    def rewrite_csv(self, csv_path, modify):
        """Apply ``modify(header, data)`` to a written trial CSV."""
        with open(csv_path, 'r') as f:
            header = f.readline().strip().split(',')
        data = np.loadtxt(csv_path, delimiter=',', skiprows=1, ndmin=2)
        header, data = modify(header, data)
        np.savetxt(csv_path, data, delimiter=',', header=','.join(header),
                   comments='', fmt='%.17g')


class TestTrialFiles(TrialFolderTestCase):
    def test_write_read(self):
        record = kinematic_trial(duration=0.5)
        csv_path = write_trial(record, self.folder.name)
        self.assertTrue(os.path.exists(csv_path.replace('.csv', '.json')))

        loaded = read_trial(csv_path)
        self.assertEqual(loaded.name, record.name)
        self.assertEqual(loaded.imu.sensors, record.imu.sensors)
        np.testing.assert_array_equal(loaded.imu.data, record.imu.data)
        self.assertEqual(set(loaded.references), set(record.references))
        np.testing.assert_array_equal(loaded.references['q'], record.references['q'])
        np.testing.assert_allclose(loaded.placement.as_vector(),
                                   record.placement.as_vector())
        self.assertEqual((loaded.height, loaded.mass), (record.height, record.mass))

    def test_sidecar_metadata(self):
        record = kinematic_trial(duration=0.3)
        write_trial(record, self.folder.name)
        with open(os.path.join(self.folder.name, f'{record.name}.json')) as f:
            metadata = json.load(f)
        self.assertEqual(metadata['format_version'], FORMAT_VERSION)
        self.assertEqual(metadata['sample_rate'], 100.)
        self.assertEqual(metadata['references']['q'], [9])

    def test_column_order_is_free(self):
        record = kinematic_trial(duration=0.3)
        csv_path = write_trial(record, self.folder.name)
        self.rewrite_csv(csv_path, lambda header, data: (header[::-1], data[:, ::-1]))
        loaded = read_trial(csv_path)
        np.testing.assert_array_equal(loaded.imu.data, record.imu.data)

    def test_missing_sidecar(self):
        csv_path = write_trial(static_trial(), self.folder.name)
        os.remove(csv_path.replace('.csv', '.json'))
        with self.assertRaises(TrialRejectedError) as cm:
            read_trial(csv_path)
        self.assertEqual(cm.exception.trial, 'static')

    def test_missing_column(self):
        csv_path = write_trial(static_trial(), self.folder.name)
        self.rewrite_csv(csv_path, lambda header, data: (header[:-1], data[:, :-1]))
        with self.assertRaises(TrialRejectedError) as cm:
            read_trial(csv_path)
        self.assertIn('missing columns', cm.exception.reasons[0])

    def test_non_monotone_time(self):
        csv_path = write_trial(static_trial(), self.folder.name)

        def swap_times(header, data):
            data[[3, 4], 0] = data[[4, 3], 0]
            return header, data

        self.rewrite_csv(csv_path, swap_times)
        with self.assertRaises(TrialRejectedError):
            read_trial(csv_path)

    def test_short_nan_run_is_filled(self):
        csv_path = write_trial(kinematic_trial(duration=0.5), self.folder.name)

        def add_gap(header, data):
            data[10:15, header.index('foot_l.omega')] = np.nan
            return header, data

        record = read_trial(csv_path)
        self.rewrite_csv(csv_path, add_gap)
        filled = read_trial(csv_path)
        omega = filled.imu.sensor('foot_l')[:, 2]
        self.assertTrue(np.all(np.isfinite(omega)))
        original = record.imu.sensor('foot_l')[:, 2]
        np.testing.assert_allclose(omega[10:15], np.linspace(original[9], original[15], 7)[1:-1])

    def test_long_nan_run_is_rejected(self):
        csv_path = write_trial(static_trial(), self.folder.name)

        def add_gap(header, data):
            data[10:16, header.index('pelvis.a_y')] = np.nan
            return header, data

        self.rewrite_csv(csv_path, add_gap)
        with self.assertRaises(TrialRejectedError) as cm:
            read_trial(csv_path)
        self.assertIn('pelvis.a_y', str(cm.exception))

    def test_resampled_to_target_rate(self):
        data = np.zeros((200, 1, 3))
        data[:, 0, 1] = 9.81
        record = TrialRecord('fast', ImuSequence(data, ('pelvis',), 200.), 1.75, 70.)
        loaded = read_trial(write_trial(record, self.folder.name))
        self.assertEqual(loaded.imu.sample_rate, TARGET_RATE)
        self.assertEqual(len(loaded), 100)
        self.assertAlmostEqual(loaded.imu.data[50, 0, 1], 9.81, places=3)


class TestIngest(TrialFolderTestCase):
    def test_folder(self):
        for seed in [2, 1]:
            write_trial(kinematic_trial(duration=0.3, seed=seed), self.folder.name)
        broken = write_trial(static_trial(name='broken'), self.folder.name)
        os.remove(broken.replace('.csv', '.json'))

        records, rejections = ingest_with_report(self.folder.name)
        self.assertEqual([record.name for record in records], ['walk_001', 'walk_002'])
        self.assertEqual([e.trial for e in rejections], ['broken'])
        self.assertEqual(len(ingest(self.folder.name)), 2)

    def test_malformed_trials_next_to_good_one(self):
        write_trial(kinematic_trial(duration=0.3, seed=1), self.folder.name)

        csv_path = write_trial(static_trial(name='bad_sidecar'), self.folder.name)
        with open(csv_path.replace('.csv', '.json'), 'w') as f:
            f.write('{"sample_rate": ')

        csv_path = write_trial(static_trial(name='bad_cell'), self.folder.name)
        with open(csv_path, 'r') as f:
            lines = f.read().splitlines()
        lines[1] = ','.join(lines[1].split(',')[:-1] + ['abc'])
        with open(csv_path, 'w') as f:
            f.write('\n'.join(lines) + '\n')

        csv_path = write_trial(static_trial(name='bad_placement'), self.folder.name)
        sidecar = csv_path.replace('.csv', '.json')
        with open(sidecar, 'r') as f:
            metadata = json.load(f)
        metadata['placement'] = {'sensors': ['pelvis']}
        with open(sidecar, 'w') as f:
            json.dump(metadata, f)

        records, rejections = ingest_with_report(self.folder.name)
        self.assertEqual([record.name for record in records], ['walk_001'])
        self.assertEqual([e.trial for e in rejections],
                         ['bad_cell', 'bad_placement', 'bad_sidecar'])
        self.assertIn('unreadable data', rejections[0].reasons[0])
        self.assertIn('malformed placement', rejections[1].reasons[0])
        self.assertIn('unreadable sidecar', rejections[2].reasons[0])

    def test_non_positive_sample_rate(self):
        csv_path = write_trial(static_trial(), self.folder.name)
        sidecar = csv_path.replace('.csv', '.json')
        with open(sidecar, 'r') as f:
            metadata = json.load(f)
        metadata['sample_rate'] = 0
        with open(sidecar, 'w') as f:
            json.dump(metadata, f)
        with self.assertRaises(TrialRejectedError) as cm:
            read_trial(csv_path)
        self.assertIn('sample rate 0.0 is not positive', cm.exception.reasons)

    def test_single_file(self):
        csv_path = write_trial(static_trial(), self.folder.name)
        self.assertEqual(len(ingest(csv_path)), 1)

    def test_missing_path(self):
        with self.assertRaises(FileNotFoundError):
            ingest(os.path.join(self.folder.name, 'nothing'))

    def test_unknown_format(self):
        with self.assertRaises(InvalidInputError):
            ingest(self.folder.name, format='c3d')


class TestNanRuns(unittest.TestCase):
    def test_fill(self):
        values = np.arange(20, dtype=float)[:, None] * np.ones((1, 2))
        values[3:6, 0] = np.nan
        values[10:17, 1] = np.nan
        filled, too_long = fill_nan_runs(values)
        np.testing.assert_allclose(filled[:, 0], np.arange(20))
        self.assertEqual(too_long, [1])


class TestImuSequence(unittest.TestCase):
    def test_validation(self):
        with self.assertRaises(InvalidInputError):
            ImuSequence(np.zeros((10, 2, 3)), ('pelvis',))
        with self.assertRaises(InvalidInputError):
            ImuSequence(np.zeros((10, 1, 3)), ('wrist',))
        with self.assertRaises(InvalidInputError):
            static_trial().imu.window(90, 20)

    def test_training_view_hides_references(self):
        record = kinematic_trial(duration=0.3)
        view = record.training_view()
        self.assertFalse(hasattr(view, 'references'))
        with self.assertRaises(AttributeError):
            view.references = {}

    def test_record_window(self):
        record = kinematic_trial(duration=0.5)
        window = record.window(10, 20)
        self.assertEqual(len(window), 20)
        np.testing.assert_array_equal(window.references['q'], record.references['q'][10:30])


class TestSampling(unittest.TestCase):
    def test_window(self):
        record = static_trial(samples=300)
        start, window = sample_training_window(record, 256, np.random.default_rng(0))
        self.assertEqual(len(window), 256)
        self.assertTrue(0 <= start <= 44)
        with self.assertRaises(InvalidInputError):
            sample_training_window(static_trial(samples=100), 256)

    def test_sampler(self):
        trials = [static_trial(samples=50), static_trial(samples=300),
                  static_trial(samples=257)]
        sampler = WindowSampler(trials, 256, np.random.default_rng(0))
        self.assertEqual(len(sampler), 2)
        np.testing.assert_allclose(sampler.probabilities, [45 / 47, 2 / 47])
        batch = sampler.batch(4)
        self.assertEqual(len(batch), 4)
        self.assertTrue(all(len(window) == 256 for _, _, window in batch))
        with self.assertRaises(InvalidInputError):
            WindowSampler([static_trial(samples=50)], 256)

    def test_sampler_is_deterministic(self):
        trials = [kinematic_trial(duration=3., seed=seed) for seed in range(2)]
        first = WindowSampler(trials, 64, np.random.default_rng(5)).batch(3)
        second = WindowSampler(trials, 64, np.random.default_rng(5)).batch(3)
        self.assertEqual([s[:2] for s in first], [s[:2] for s in second])

    def test_noise(self):
        record = kinematic_trial(duration=3.)
        window = record.imu.window(0, 256)
        self.assertIs(augment_noise(window, training=False), window)
        self.assertIs(augment_noise(window, eta=0.), window)
        with self.assertRaises(InvalidInputError):
            augment_noise(window, eta=-0.1)

        noisy = augment_noise(window, eta=0.25, rng=np.random.default_rng(0))
        self.assertIsInstance(noisy, ImuSequence)
        sigma = window.data.std(axis=0)
        ratio = (noisy.data - window.data).std(axis=0) / np.where(sigma > 0, sigma, 1.)
        valid = sigma > 1e-6
        np.testing.assert_allclose(ratio[valid], 0.25, rtol=0.2)
        np.testing.assert_array_equal(noisy.data[:, ~np.any(valid, axis=-1)],
                                      window.data[:, ~np.any(valid, axis=-1)])


class TestSegmentFilter(unittest.TestCase):
    def test_standing_is_dropped(self):
        self.assertEqual(kept_segments(static_trial(samples=300).imu), [])

    def test_walking_is_kept(self):
        record = kinematic_trial(duration=3.)
        self.assertEqual(kept_segments(record.imu), [(0, 300)])

    def test_turning_is_dropped(self):
        record = kinematic_trial(duration=3.)
        data = record.imu.data.copy()
        data[100:200, SENSORS.index('pelvis'), 2] = 2.
        imu = ImuSequence(data, record.imu.sensors)
        self.assertEqual(kept_segments(imu), [(0, 100), (200, 300)])

    def test_trailing_window_joins(self):
        record = kinematic_trial(duration=2.5)
        data = record.imu.data.copy()
        data[100:, SENSORS.index('pelvis'), 2] = 2.
        imu = ImuSequence(data, record.imu.sensors)
        self.assertEqual(kept_segments(imu), [(0, 100)])

    def test_min_length(self):
        record = kinematic_trial(duration=3.)
        data = record.imu.data.copy()
        data[100:200, SENSORS.index('pelvis'), 2] = 2.
        imu = ImuSequence(data, record.imu.sensors)
        config = FilterConfig(min_length=150)
        self.assertEqual(kept_segments(imu, config), [])

    def test_filter_record(self):
        record = kinematic_trial(duration=3.)
        segments = heuristic_segment_filter(record)
        self.assertEqual(len(segments), 1)
        self.assertEqual(len(segments[0]), 300)
        self.assertIn('q', segments[0].references)


if __name__ == '__main__':
    unittest.main()
