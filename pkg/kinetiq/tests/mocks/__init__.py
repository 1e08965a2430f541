from .mock_trials import *
from .gradient_check import *
