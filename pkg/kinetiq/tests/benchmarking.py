import unittest
from functools import wraps
from time import perf_counter

import numpy as np

from kinetiq.network import (Estimator, InputLayout, NetworkConfig,
                             measure_step_latency)

__all__ = ['Timer', 'timing']


class Timer():
    def __init__(self, name, verbose: bool = True):
        self.name = name
        self.verbose = verbose
        self.elapsed = None

    def __enter__(self):
        self.t_start = perf_counter()
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.elapsed = perf_counter() - self.t_start
        if self.verbose:
            print(f'{self.name}: {self.elapsed:.3f} s')


def timing(N):
    def timing_decorator(fun):
        @wraps(fun)
        def timing_wrapper(*args, **kwargs):
            t0 = perf_counter()
            for k in range(N):
                fun(*args, **kwargs)
            call_duration = (perf_counter() - t0) / N
            print(f'{fun.__name__} duration: {call_duration:.3g} s')
        return timing_wrapper
    return timing_decorator


class TestStepLatency(unittest.TestCase):
    def setUp(self):
        self.estimator = Estimator(NetworkConfig(hidden=32, dense1=16),
                                   InputLayout().n_inputs, seed=0)
        self.session = self.estimator.session()

    @timing(200)
    def test_small_network_step(self):
        self.session.step(np.zeros(self.estimator.n_inputs))

    def test_latency_summary(self):
        summary = measure_step_latency(self.estimator, repeats=20, warmup=2)
        self.assertEqual(summary['repeats'], 20)
        self.assertGreater(summary['median_ms'], 0)
        self.assertLessEqual(summary['median_ms'], summary['p95_ms'])

    def test_sequence_forward(self):
        inputs = np.zeros((256, self.estimator.n_inputs))
        with Timer('forward 256 samples') as timer:
            self.estimator.forward(inputs)
        self.assertGreater(timer.elapsed, 0)
