from .layout import *
from .lstm import *
from .checkpoint import *
