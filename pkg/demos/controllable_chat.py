"""End-to-end: features in, response out, and a knob to turn.

Trains a small topic extractor, then a generator conditioned on its
features.  At inference the features come from aggregating the context
turns, and individual features can be pinned high or low to steer what the
model talks about.
"""

from convofeat.corpus import SynthConfig, build_vocab, split_corpus, synth_corpus
from convofeat.extractor import ExtractorConfig, ExtractorTrainConfig, new_extractor, train_extractor
from convofeat.generator import (
    GeneratorConfig,
    GeneratorTrainConfig,
    StSchedule,
    dialogue_windows,
    fit_agg_weights,
    new_generator,
    train_generator,
    window_context_features,
)
from convofeat.inference import FeatureOverride, InferenceEngine, generate_session
from convofeat.pairing import make_topic_pairs, shuffle_and_order

corpus = synth_corpus(
    SynthConfig(n_dialogues=80, n_topics=3, n_personas=4, turns=10,
                two_topic_prob=0.0), seed=9)
split = split_corpus(corpus, seed=9)
vocab = build_vocab(split.train, max_len=16)

print("training the topic extractor...")
extractor = new_extractor(
    vocab,
    ExtractorConfig(kind="topic", mode="soft", n_features=8, embed_dim=32,
                    n_filters=32, enc_dim=48, dropout=0.3, head_bias_init=-3.0),
    seed=0)
train_pairs = shuffle_and_order(make_topic_pairs(split.train, 2000, vocab, seed=0), seed=0)
valid_pairs = shuffle_and_order(make_topic_pairs(split.valid, 300, vocab, seed=1), seed=1)
train_extractor(extractor, train_pairs, valid_pairs,
                ExtractorTrainConfig(lr=3e-3, lam=0.01, batch_size=128,
                                     max_epochs=40, patience=40, seed=0))

print("training the feature-conditioned generator...")
K = 4
generator = new_generator(
    vocab,
    GeneratorConfig(variant="t", k=K, embed_dim=32, n_filters=32, enc_dim=48,
                    hidden=64, feature_dim=extractor.n_features),
    seed=0)
train_generator(generator, split, [extractor],
                GeneratorTrainConfig(eta=0.1, lr=1e-3, batch_size=64, max_epochs=8,
                                     patience=8, seed=0, rollout_len=10,
                                     st=StSchedule(final_slope=100.0)),
                vocab)

windows = dialogue_windows(split.train, K, vocab)
ctx_f, tgt_f = window_context_features(extractor, windows)
agg = {"topic": fit_agg_weights(ctx_f, tgt_f, "topic", iters=150, lr=0.1)}
print(f"context aggregation weights: {[round(w, 3) for w in agg['topic'].weights]}")

engine = InferenceEngine(generator, vocab, agg, {"topic": extractor}, rollout_len=12)

context = [t.text for t in split.valid[0].turns[:K]]
print("\ncontext:")
for line in context:
    print(f"  | {line}")

plain = engine.generate_response(context)
print(f"\nplain response:    {plain.text}")
print(f"conditioning features: {[round(f, 2) for f in plain.features['topic']]}")

# pin the least-active feature fully on and regenerate
weakest = min(range(len(plain.features["topic"])), key=plain.features["topic"].__getitem__)
override = FeatureOverride.parse(f"T-{weakest}=1")
steered = engine.generate_response(context, overrides=(override,))
print(f"\nwith {override.name}=1:  {steered.text}")

result = generate_session(engine, list(split.valid[1].turns[:K]), n_future=3)
print("\nrolled a session 3 turns forward:")
for turn, generated in zip(result.turns, result.generated):
    marker = "*" if generated else " "
    print(f" {marker} speaker {turn.speaker}: {turn.text}")
