"""Hierarchy-aware fine-grained entity typing.

Core pieces: a validated type DAG with ancestor closure (`TypeHierarchy`),
distant supervision over mention corpora (`corpus`), a CNN + span-mean
mention encoder with order/bilinear/dot membership scoring (`model`),
hand-derived gradients with Adam and finite-difference verification
(`training`), MAP evaluation (`evaluation`), and a batch CLI (`cli`).
"""

from .corpus import (
    CorpusError,
    CorpusRecord,
    EmbeddingError,
    EmbeddingTable,
    LabeledExample,
    Mention,
    batch_iter,
    distant_label,
    examples_to_records,
    label_records,
    read_corpus,
    write_corpus,
)
from .errors import HiertypeError
from .evaluation import EvalError, EvalReport, average_precision, evaluate_model, evaluate_rankings
from .hierarchy import (
    CycleError,
    EntityTypeTable,
    HierarchyError,
    HierarchyParseError,
    HierarchyStats,
    Link,
    LinkKind,
    TypeHierarchy,
    TypeId,
    UnknownTypeError,
    candidate_synsets,
    derive_cooccurrence_links,
    load_hierarchy,
    write_links,
)
from .model import (
    SIGMOID_CLAMP,
    Checkpoint,
    CheckpointError,
    DropoutMasks,
    EncoderMode,
    EncoderParams,
    ModelError,
    ModelParams,
    ScoreKind,
    cnn_forward,
    encode_mention,
    encode_vectors,
    load_checkpoint,
    log_sigmoid,
    neg_log_one_minus_sigmoid,
    order_violation,
    penalty_non_membership,
    rank_types,
    sample_dropout_masks,
    save_checkpoint,
    sigmoid,
    score_all_types,
    score_membership,
    surface_average,
)
from .training import (
    AdamState,
    ConfigError,
    EpochMetrics,
    FDReport,
    GradientError,
    TrainConfig,
    TrainResult,
    TrainingError,
    adam_step,
    backward,
    combined_loss,
    combined_loss_with_pattern,
    config_from_strings,
    finite_difference_check,
    glorot_init,
    init_model,
    load_train_config,
    make_checkpoint,
    prepare_typing_batch,
    structure_loss,
    structure_pool,
    train,
    typing_loss,
    write_history,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
