"""Text-feature ablation on synthetic data whose sentiment words are the
only text signal: word embeddings alone, then with lexicon scores, the
rule-based sentence score, or contextual vectors.

    python demos/text_ablation.py
"""

import numpy as np

from rtnlab.dataio import SynthConfig, gen_synthetic
from rtnlab.evalmetrics import format_table
from rtnlab.models import ModelConfig
from rtnlab.textfeat import Lexicon
from rtnlab.trainer import ABLATION_GRID, TextSource, TrainConfig, run_ablation

POSITIVE = ["good", "great", "love"]
NEGATIVE = ["bad", "awful", "hate"]
FILLER = ["movie", "plot", "the", "actor", "scene"]


def text_source(videos, rng):
    vocab = POSITIVE + NEGATIVE + FILLER
    wv = {w: rng.normal(size=4) for w in vocab}
    lex = Lexicon({**{w: [1.0] for w in POSITIVE}, **{w: [-1.0] for w in NEGATIVE}}, "toy")
    tokens, ctx = {}, {}
    for v in videos:
        for s in v.segments:
            pool = POSITIVE if s.sentiment > 0 else NEGATIVE
            toks = list(rng.choice(FILLER, size=3))
            if abs(s.sentiment) > 0.5:
                toks.insert(int(rng.integers(0, 4)), str(rng.choice(pool)))
            tokens[(v.video_id, s.segment_index)] = toks
            ctx[(v.video_id, s.segment_index)] = [rng.normal(size=3) for _ in toks]
    return TextSource(tokens, wv, lex, ctx)


def run():
    rng = np.random.default_rng(0)
    cfg = SynthConfig(n_train_videos=60, n_val_videos=20, seed=0)
    train_v, val_v = gen_synthetic(cfg)
    source = text_source(train_v + val_v, rng)
    # the text input size is filled in per ablation row
    model_cfg = ModelConfig("uni_text", {"text": 1}, {"text": 8}, 16, 16)
    rows = run_ablation(train_v, val_v, source, ABLATION_GRID, model_cfg, TrainConfig(max_epochs=30))
    print(format_table(rows))


if __name__ == "__main__":
    run()
