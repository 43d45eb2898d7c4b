"""Quality-preserving adversarial images via a minimum-noticeable-difference objective.

Pure numpy with an optional compiled kernel extension (see :mod:`mnd.kernels`).
"""

from . import autodiff
from .attacks import (
    AttackConfig,
    AttackResult,
    BaselineConfig,
    bim_attack,
    di2fgsm_attack,
    mifgsm_attack,
    mnd_attack,
    mnd_attack_batch,
    pgd_attack,
    run_ablation,
)
from .classifier import Classifier, build_small_cnn, cross_entropy, predict, train
from .config import ExperimentConfig, load_config
from .errors import (
    ChecksumError,
    ConfigurationError,
    CorruptCheckpointError,
    DivergenceError,
    DomainError,
    EvaluationError,
    MNDError,
    ShapeError,
    UsageError,
)
from .kernels import BACKEND
from .losses import LossWeights, adv_nontargeted, adv_targeted, deviation, grad_similarity, pqp_loss, sobel, ssim, total_loss
from .metrics import abs_diff_map, aggregate, deviation_pixel_ratio, grad_cam, psnr

__version__ = "0.1.0"
