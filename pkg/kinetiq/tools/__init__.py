from .config import *
from .data_tools import *
from .general_tools import *
from .plot_tools import *
