"""Prompt-based cross-lingual few-shot classification."""

from .backend import BackendConfig, ToyMaskedLM, attach_external_backend, load_checkpoint, pretrain_toy, save_checkpoint
from .errors import (
    BackendUnavailableError,
    ConfigurationError,
    CrossPromptError,
    GenerationError,
    InputError,
    ProtocolError,
    VerbalizerValidationError,
)
from .estimator import Method, PromptClassifier, load_classifier, save_classifier
from .inference import Strategy, compare_strategies, predict
from .objectives import mixup_loss, multilingual_verbalizer_loss, sample_lambda
from .prompt_core import (
    LabeledPair,
    MultilingualVerbalizer,
    PromptTemplate,
    Variant,
    build_prompt,
    inference_verbalizer_for,
    load_bundled_verbalizer,
    load_verbalizer_file,
)
from .protocol import ResultRow, RunConfig, aggregate, evaluate, sample_shots, train_run
from .synth import SynthTaskSpec, generate_suite

__version__ = "0.1.0"
