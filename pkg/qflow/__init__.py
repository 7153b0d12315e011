from .chipgen import *
from .drc import *
from .gds import *
from .geometry import *
from .mdp import *
from .pdk import *
from .plots import *
from .process import *
from .utils import *
from .waferplan import *

__version__ = "0.1.0dev0"
