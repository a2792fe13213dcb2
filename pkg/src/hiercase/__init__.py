"""Truecasing with a two-level word-and-character recurrent model."""

from .baseline import CaseLexicon, build_lexicon
from .evalbench import CharRnnModel, EvalReport, bench_speed, eval_nl
from .hiermodel import HierModel, ModelConfig, preset_config
from .lmexp import NgramLm, NoisifyConfig, noisify_sentences, run_lm_experiment
from .textcore import CorpusError, Sentence, ingest_lines, read_corpus
from .training import TrainConfig, distill_lines, load_model, train

__version__ = "0.1.0"

__all__ = [
    "CaseLexicon",
    "CharRnnModel",
    "CorpusError",
    "EvalReport",
    "HierModel",
    "ModelConfig",
    "NgramLm",
    "NoisifyConfig",
    "Sentence",
    "TrainConfig",
    "bench_speed",
    "build_lexicon",
    "distill_lines",
    "eval_nl",
    "ingest_lines",
    "load_model",
    "noisify_sentences",
    "preset_config",
    "read_corpus",
    "run_lm_experiment",
    "train",
    "__version__",
]
