"""convofeat: discriminative dialogue features and controllable generation.

The package trains self-supervised topic and persona feature extractors on
unlabeled dialogues (same-dialogue and same-speaker pair discrimination),
then conditions an LSTM response generator on those features.  Feature
vectors can be inspected, aggregated over the context window, and toggled
at generation time.

Layout:

- ``corpus``     dialogue data model, JSONL I/O, synthetic corpus
- ``pairing``    positive/negative pair construction for the two tasks
- ``extractor``  CNN encoder, feature heads, matchers, extractor training
- ``generator``  context encoder + LSTM decoder, cycle loss, aggregation
- ``inference``  frozen-model generation, sessions, interactive chat
- ``metrics``    BLEU/NIST/METEOR-s, embedding metrics, diversity
- ``analysis``   n-gram profiles, label alignment, toggle success, export
- ``cli``        command-line front end
"""

from .corpus import (
    CorpusSplit,
    Dialogue,
    PlantedTruth,
    SynthConfig,
    Turn,
    Vocabulary,
    build_vocab,
    load_dialogues,
    save_dialogues,
    split_corpus,
    synth_corpus,
    tokenize,
)
from .extractor import (
    ExtractorConfig,
    ExtractorModel,
    ExtractorTrainConfig,
    eval_matching_accuracy,
    load_extractor,
    new_extractor,
    save_extractor,
    train_extractor,
)
from .generator import (
    AggWeights,
    GeneratorConfig,
    GeneratorModel,
    GeneratorTrainConfig,
    fit_agg_weights,
    load_generator,
    new_generator,
    save_generator,
    train_generator,
)
from .inference import FeatureOverride, InferenceEngine
from .pairing import make_persona_pairs, make_topic_pairs

__version__ = "0.1.0"
