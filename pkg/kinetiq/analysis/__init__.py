from .zupt import *
from .gait_cycles import *
from .metrics import *
