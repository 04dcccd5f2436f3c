"""Fully-connected continuous CRFs over superpixel graphs.

Closed-form MAP inference through one symmetric positive-definite solve,
an exact Gaussian log-likelihood, and discriminative training under
task-specific losses, with a synthetic-experiment harness.
"""

from .crf import (
    PrecisionSystem,
    assemble,
    energy,
    map_backward,
    map_infer,
    nll,
    nll_backward,
)
from .datasets import Dataset, LabeledExample, load_dataset, save_dataset
from .gridio import read_f32grid, read_pnm, write_f32grid, write_pnm
from .graph import (
    ImageGrid,
    NodeGraph,
    SuperpixelSegmentation,
    build_graph,
    compute_centroids,
    compute_pixel_features,
    grid_segment,
    node_pixel_counts,
    pool_features,
    slic_segment,
)
from .losses import (
    LossSpec,
    ls_loss,
    predict_labels,
    softmax_loss,
    tukey_loss,
    tukey_psi,
    tukey_rho,
)
from .metrics import depth_metrics, seg_metrics
from .networks import (
    Mlp,
    Model,
    PairwiseNet,
    UnaryNet,
    build_model,
    load_checkpoint,
    mlp_backward,
    mlp_forward,
    pairwise_backward,
    pairwise_forward,
    save_checkpoint,
    softplus,
    softplus_inverse,
    unary_backward,
    unary_forward,
)
from .scenes import (
    CorruptionSpec,
    SyntheticSceneSpec,
    corrupt_dataset,
    gen_depth_scene,
    gen_segmentation_scene,
    inject_gaussian_noise,
    inject_outliers,
    synth_dataset,
)
from .training import (
    DivergenceError,
    TrainConfig,
    TrainHistory,
    evaluate,
    forward_loss,
    prepare_examples,
    sgd_step,
    train,
)

__version__ = "0.1.0"
