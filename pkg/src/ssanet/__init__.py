"""ssanet: spatio-temporal CNNs built on a parameter-free temporal layer.

Feature maps are numpy arrays shaped (batch, channels, frames, height,
width).  Spatial convolutions are strictly framewise (1 x k x k); all
cross-frame information flow happens in the shift-subtract-add temporal
layer (``ssa_forward``) and in temporal max pooling.  See README.md for
the CLI and file formats.
"""

from .blocks import (
    BlockSpec,
    ConvItem,
    DenseItem,
    FlattenItem,
    GlobalPoolItem,
    NetworkSpec,
    Pool3dItem,
    TemporalPoolItem,
    build_network,
    build_ssa_block,
    network_spec,
    param_breakdown,
    param_count,
    parse_network_spec,
    render_network_spec,
)
from .datasets import (
    MotionDataset,
    augment_voxels,
    gen_motion_dataset,
    gen_synthetic_shapes,
    scale_voxels,
    voxels_to_clip,
)
from .errors import (
    CheckFailure,
    DimensionError,
    FormatError,
    SpecError,
    TrainingDiverged,
)
from .layers import Network, Parameter
from .ops import (
    Conv2dKernel,
    LayerGradients,
    PoolIndices,
    RunningStats,
    TemporalPoolSpec,
    batch_norm,
    conv2d_framewise,
    conv2d_framewise_backward,
    feature_map,
    global_avg_pool,
    linear,
    max_pool3d,
    max_pool3d_backward,
    relu,
    set_num_threads,
    temporal_max_pool,
    temporal_max_pool_backward,
)
from .serialize import (
    load_tensor,
    load_voxels,
    restore_network,
    save_checkpoint,
    save_tensor,
    save_voxels,
)
from .ssa import (
    SsaConfig,
    shift_weight,
    ssa_backward,
    ssa_forward,
    ssa_forward_reference,
    ssa_matrix,
    ssa_param_count,
)
from .training import (
    History,
    SgdMomentum,
    TrainConfig,
    cross_entropy,
    evaluate,
    grad_check_network,
    op_gradient_errors,
    sgd_step,
    train,
)

__version__ = "0.1.0"
