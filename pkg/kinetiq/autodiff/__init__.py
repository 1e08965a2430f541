from .tensor import *
from .optim import *
from . import functional
