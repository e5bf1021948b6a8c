"""Super-Resolution Distillation Kit."""

from .bench import bench_compare, summarize
from .checkpoint import (
    Checkpoint,
    CheckpointFormatError,
    load_checkpoint,
    save_checkpoint,
)
from .config import RunConfig, __version__
from .corpus import Corpus, CorpusManifest, PatchStream, SynthConfig
from .corpus import synth_corpus
from .distill import (
    DistillConfig,
    DistillPlan,
    LossWeights,
    Regressor,
    RegressorSpec,
    build_plan,
    fft_loss,
    lfd_loss,
    lsfd_loss,
    sfd_map,
    total_loss,
)
from .evaluate import EvalReport, attribution, evaluate, psnr
from .gradcheck import grad_check, run_suite
from .image import ImageBuffer, load_png, save_png
from .model import FeatureTapSet, Model, ModelConfig, build_model, pair_taps
from .optim import AdamState, DivergenceError, adam_step
from .tensor import Parameter, Tape, Tensor, no_grad
from .train import TrainConfig, Trainer, distill, train_teacher
from .utils import (
    ConfigError,
    SrdkError,
    configure_logger,
    dump_json_file,
    load_json_file,
    profile,
)

__all__ = (
    "__version__",
    "AdamState",
    "Checkpoint",
    "CheckpointFormatError",
    "ConfigError",
    "Corpus",
    "CorpusManifest",
    "DistillConfig",
    "DistillPlan",
    "DivergenceError",
    "EvalReport",
    "FeatureTapSet",
    "ImageBuffer",
    "LossWeights",
    "Model",
    "ModelConfig",
    "Parameter",
    "PatchStream",
    "Regressor",
    "RegressorSpec",
    "RunConfig",
    "SrdkError",
    "SynthConfig",
    "Tape",
    "Tensor",
    "TrainConfig",
    "Trainer",
    "adam_step",
    "attribution",
    "bench_compare",
    "build_model",
    "build_plan",
    "configure_logger",
    "distill",
    "dump_json_file",
    "evaluate",
    "fft_loss",
    "grad_check",
    "lfd_loss",
    "load_checkpoint",
    "load_json_file",
    "load_png",
    "lsfd_loss",
    "no_grad",
    "pair_taps",
    "profile",
    "psnr",
    "run_suite",
    "save_checkpoint",
    "save_png",
    "sfd_map",
    "summarize",
    "synth_corpus",
    "total_loss",
    "train_teacher",
)
