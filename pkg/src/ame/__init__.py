"""Multilingual multimodal joint embeddings with bilingual alignment upkeep.

A library and CLI that trains a shared GRU caption encoder and an affine
image head into one retrieval space with a bidirectional ranking loss, while
a periodic alignment objective keeps the two languages' word embeddings
translatable through an orthogonal linear map.
"""

from .alignment import (
    LinearMap,
    NeighborhoodCache,
    alignment_ratio,
    alignment_update,
    compute_neighborhoods,
    csls_translate,
)
from .data import (
    Batch,
    BilingualLexicon,
    CaptionDataset,
    CaptionRecord,
    ImageFeatureSet,
    Vocabulary,
    load_captions,
    load_embeddings,
    load_features,
    load_lexicon,
    make_batches,
    save_features,
    tokenize,
)
from .encoders import (
    ASYMMETRIC,
    SYMMETRIC,
    EmbeddingTable,
    GruEncoder,
    ImageProjector,
    JointVector,
    encode_caption,
    encode_image,
)
from .errors import (
    AmeError,
    ConfigError,
    ContractError,
    DegenerateInputError,
    FormatError,
    IncompatibleCheckpointError,
    NumericError,
    ParseError,
    ShapeError,
    SingularityError,
)
from .evaluation import (
    RetrievalReport,
    caption_caption_eval,
    evaluate_fold,
    evaluate_retrieval,
    median_rank,
    rank_matrix,
    recall_at_k,
)
from .losses import LossBreakdown, least_squares_map, ranking_loss, rcsls_loss, total_loss
from .model import Model
from .numerics import (
    GradCheckReport,
    ParamSet,
    Tensor,
    finite_diff_check,
    l2_normalize,
    matmul,
    svd_orthogonal_projection,
)
from .similarity import SimilarityMatrix, cosine, order_similarity, similarity_matrix
from .training import (
    AdamState,
    Checkpoint,
    TrainConfig,
    TrainResult,
    adam_step,
    load_checkpoint,
    model_from_checkpoint,
    save_checkpoint,
    train,
    verify_checkpoint,
)

__version__ = "0.1.0"
