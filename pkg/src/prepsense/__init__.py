"""prepsense: preposition sense disambiguation from frozen transformer layers.

The pipeline: ingest an annotated corpus, cache every hidden layer's
representation of each preposition occurrence, pick the best layer per
preposition on a development split, train a per-preposition MLP classifier,
and evaluate with per-preposition and macro-averaged accuracy.
"""

from .augment import SubstitutionRule, substitute
from .cache import CacheReport, CacheStore, encode_corpus
from .classifier import (
    ClassifierModel,
    MlpParams,
    TrainConfig,
    forward,
    load_model,
    load_model_dir,
    nll_loss,
    predict,
    save_model,
    train,
)
from .corpus import (
    Dataset,
    LabeledInstance,
    SenseInventory,
    carve_dev,
    ingest,
    stats,
)
from .encoders import (
    Encoder,
    EncoderHandle,
    HashEncoder,
    LayerMatrix,
    TransformersEncoder,
    load_encoder,
)
from .errors import (
    CacheMissError,
    EncodingError,
    FingerprintMismatchError,
    IngestError,
    PrepSenseError,
    SenseParseError,
    StageError,
    TrainingDivergedError,
    ValidationError,
)
from .evaluation import (
    AnalysisSummary,
    EvaluationReport,
    PrepositionReport,
    baseline_most_frequent,
    error_analysis,
    evaluate,
    full_report,
)
from .pipeline import PipelineConfig, run_all
from .selection import LayerChoice, select_all, select_layer
from .senses import SenseId, parse_sense_id, render_sense_id
from .tagging import TaggingResult, tag
from .training import train_models

__version__ = "0.1.0"
