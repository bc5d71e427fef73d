"""comodal: coordinated two-modality embedding learning on a synthetic
concept world, with fusion, retrieval, and co-learning experiments."""

from .align import AlignBatch, AlignConfig, alignment_prob, nce_loss, sample_negatives, similarity
from .config import (
    ColearnConfig,
    DatasetSizes,
    EncoderConfig,
    EvalConfig,
    RunConfig,
    colearn_run_config,
    fusion_run_config,
    load_run_config,
    run_config_from_dict,
)
from .decoders import (
    ClassifierParams,
    RankedRetrieval,
    classify_loss,
    init_classifier,
    predict_label,
    retrieve,
)
from .encoders import EncoderParams, encode, encode_batch, init_encoder
from .errors import (
    CheckpointError,
    ComodalError,
    ConfigError,
    DataError,
    DimensionError,
    NumericError,
    TrainingDiverged,
)
from .evaluation import (
    MetricReport,
    concept_similarity_gap,
    eval_colearning,
    eval_fusion,
    eval_retrieval,
    fusion_experiment,
    metrics_bruteforce_oracle,
    retrieval_metrics,
    train_unimodal,
)
from .gradcheck import GRAD_TOLERANCE, gradient_check_suite
from .kernel import MlpParams, finite_diff_check, init_mlp, l2_normalize, mlp_apply, mlp_backprop, softmax
from .model import AlignmentModel, init_model
from .rng import RngStream, rng_fork
from .storage import load_checkpoint, load_world, read_triple, save_checkpoint, save_world, write_triple
from .trainer import TrainConfig, TrainTrace, run_training, sgd_step, split_heldout
from .world import (
    ConceptWorld,
    DatasetTriple,
    ModalityInstance,
    UnitSet,
    WorldConfig,
    build_world,
    compose_instance,
    manifest,
    oracle_pair_score,
    sample_datasets,
    syntax_validity,
)

__version__ = "0.1.0"
