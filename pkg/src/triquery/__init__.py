"""Triple-query referring video object segmentation, desk scale.

The package splits into a numeric core (tensors with reverse-mode gradients,
attention/MLP kernels), the cross-modal pipeline (text decomposition, triple
query generation, frame decoding, motion-aware aggregation, prediction head
and losses), and the surrounding bench (synthetic scenes, metrics, CLI).
"""

from .aggregation import (
    IntraFrameAggregator,
    InterFrameAggregator,
    TemporalWindowAttention,
    TokenTimeline,
    VideoTokens,
    hungarian,
    link_tokens,
    rel_pos,
    rel_pos_matrix,
    sine_cos_encode,
)
from .backbone import ConvPyramid, FeaturePyramid, sample_features
from .config import ConfigError, RunConfig
from .decoder import Box, FrameDecoder, ObjectTokens, box_from_mask
from .gradcheck import GradCheckReport, grad_check
from .head import (
    LossBundle,
    Prediction,
    PredictionHead,
    bce_loss,
    consistency_loss,
    dice_loss,
    frame_assignment,
    frame_loss,
    video_loss,
)
from .metrics import MetricReport, eval_dataset, eval_jf
from .model import ClipInputs, ForwardResult, Model
from .nn import MLP, CrossAttention, Linear, Param, ParamFactory, gelu, scaled_dot_attention
from .optim import AdamW
from .queries import (
    AppearanceQueryGenerator,
    InterQueryGenerator,
    IntraQueryGenerator,
    QueryTriple,
    TrajectorySet,
    select_seed_points,
    topk_positions,
)
from .scenes import SceneClip, assign_modes, generate_scene, load_scene, save_scene
from .tenio import (
    load_checkpoint,
    load_trajectories,
    read_expressions,
    read_ten,
    save_checkpoint,
    save_trajectories,
    write_expressions,
    write_ten,
)
from .tensor import (
    BIG_NEG,
    NumericError,
    ShapeError,
    Tensor,
    backward,
    concat,
    no_grad,
    softmax,
    stack,
    upsample_bilinear,
    where,
)
from .text import (
    PhraseMasks,
    TextEmbedder,
    TextFeatures,
    TokenizedExpression,
    decompose,
)
from .train import make_optimizer, train_loop, train_step

__version__ = "0.1.0"
