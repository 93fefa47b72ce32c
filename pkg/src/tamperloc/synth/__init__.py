from .degrade import DegradationSpec, degrade
from .generate import SynthConfig, generate_dataset, kind_counts
from .manipulations import KINDS, TamperSample, copy_move, remove_and_inpaint, splice
from .regions import RegionSpec, random_region
from .solvers import diffusion_fill, poisson_blend
from .sources import write_builtin_sources
