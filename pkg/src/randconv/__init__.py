"""Random-convolution data augmentation and its distance-preservation theory."""

from .augment import (
    AugmentSample,
    FilterBank,
    RandConvConfig,
    augment_batch,
    conv2d_same,
    randconv_augment,
    sample_filter,
)
from .consistency import (
    LossBreakdown,
    PredictionDistribution,
    consistency_loss,
    kl_divergence,
    softmax,
    total_loss,
)
from .image import (
    ImageTensor,
    LabeledDataset,
    WhiteningStats,
    compute_whitening,
    load_image,
    save_image,
    whiten,
)
from .special import chi2_upper_quantile
from .theory import BoundParams, RatioStats, extract_patches, simulate_ratio_bounds, theorem1_bounds

__version__ = "0.1.0"
