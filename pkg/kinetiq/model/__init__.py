from .body import *
from .kinematics import *
from .dynamics import *
from .contact import *
