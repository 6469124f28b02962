"""ssl-forge: semi-supervised building-damage classification from scratch.

MixMatch, FixMatch, and a supervised baseline over paired pre/post
disaster imagery, on a minimal numpy autodiff core with numba-jitted
convolutions (SSLFORGE_BACKEND selects numba/numpy/auto).
"""

__version__ = "0.1.0"

from .augment import CANONICAL_POLICIES, AugPolicy
from .data import Example, SplitSpec, SynthConfig, load, save, split, synth_generate
from .model import ModelConfig, build, load_checkpoint, save_checkpoint
from .semisup import SslConfig, fixmatch_loss, mixmatch_loss, sharpen, supervised_loss
from .tensor import Tensor, backward, no_grad
from .trainer import TrainConfig, cosine_lr, train
