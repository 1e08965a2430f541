from .trials import *
from .sampling import *
from .synthesis import *
from .filtering import *
