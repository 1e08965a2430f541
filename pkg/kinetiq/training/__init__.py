from .losses import *
from .pipeline import *
from .training import *
from .placement import *
from .inference import *
from .ablation import *
