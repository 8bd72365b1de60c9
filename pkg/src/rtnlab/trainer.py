"""L1 training with Adam, early stopping on validation sentiment MAE,
text-feature ablations and the gradient-check suite."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import ndtensor as nd
from .dataio import EMOTIONS, SegmentRecord, VideoSequence
from .errors import ArgumentError, ConfigError
from .evalmetrics import evaluate_model, mae
from .models import Model, ModelConfig, build_model, forward_batch, predict_arrays, unflatten_params

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    learning_rate: float = 0.005
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    max_epochs: int = 100
    patience: int = 5
    batch: int = 10
    seed: int = 0
    emotion_loss_weight: float = 1.0
    clip_norm: float = 5.0

    def validate(self, allow_zero_lr=False):
        if self.learning_rate < 0 or (self.learning_rate == 0 and not allow_zero_lr):
            raise ConfigError("learning_rate", "must be positive")
        for name in ("beta1", "beta2"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigError(name, "must lie in [0, 1)")
        if not self.epsilon > 0:
            raise ConfigError("epsilon", "must be positive")
        for name in ("max_epochs", "patience", "batch"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise ConfigError(name, f"must be a positive integer, got {v!r}")
        if self.emotion_loss_weight < 0:
            raise ConfigError("emotion_loss_weight", "must be non-negative")
        if not self.clip_norm > 0:
            raise ConfigError("clip_norm", "must be positive")
        return self

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, doc, prefix="train"):
        known = {f.name for f in fields(cls)}
        for k in doc:
            if k not in known:
                raise ConfigError(f"{prefix}.{k}", "unknown key")
        return cls(**doc)


@dataclass
class TrainLog:
    train_loss: list = field(default_factory=list)
    val_mae: list = field(default_factory=list)
    best_epoch: int = -1
    stop_reason: str = ""

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True)


def _gold(segments):
    sent = np.array([s.sentiment for s in segments])
    emo = np.array([s.emotions for s in segments]).reshape(-1, len(EMOTIONS))
    return sent, emo


def loss(preds, gold, w_emo: float = 1.0) -> nd.Tensor:
    """mean |sentiment error| + w_emo * mean over emotions of mean |error|.

    ``preds`` is a (sentiment, emotions) Tensor pair covering the segments of
    ``gold`` in order (any leading shape); ``gold`` is a list of SegmentRecords.
    """
    sent, emo = preds
    sent = nd.reshape(nd.as_tensor(sent), (-1,))
    emo = nd.reshape(nd.as_tensor(emo), (-1, len(EMOTIONS)))
    if sent.shape[0] != len(gold) or emo.shape[0] != len(gold):
        raise ArgumentError(f"{sent.shape[0]} predictions for {len(gold)} gold segments")
    gs, ge = _gold(gold)
    total = nd.mean(nd.absolute(sent - gs))
    if w_emo:
        total = total + nd.scale(nd.mean(nd.absolute(emo - ge)), w_emo)
    return total


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict, grads: dict, state: AdamState, cfg: TrainConfig):
    """Bias-corrected Adam; updates ``params`` in place and returns (params, state)."""
    state.t += 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ArgumentError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1 - b1) * g if m is None else b1 * m + (1 - b1) * g
        v = (1 - b2) * g * g if v is None else b2 * v + (1 - b2) * g * g
        state.m[name], state.v[name] = m, v
        params[name] = p - cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.epsilon)
    return params, state


def clip_global_norm(grads: dict, max_norm: float) -> float:
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if norm > max_norm:
        s = max_norm / norm
        for k in grads:
            grads[k] = grads[k] * s
    return norm


def loss_and_grads(model: Model, videos, w_emo: float):
    tape = nd.Tape()
    leaves = {k: tape.leaf(v) for k, v in model.params.items()}
    out = forward_batch(model, videos, leaves)
    value = loss(out, [s for v in videos for s in v.segments], w_emo)
    nd.backward(value, tape)
    return float(value.data), {k: t.grad for k, t in leaves.items()}


class EarlyStopping:
    """Tracks the best validation score; ``update`` returns True once
    ``patience`` epochs have passed without improvement."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = np.inf
        self.best_epoch = -1

    def improved(self, epoch, value):
        if value < self.best:
            self.best, self.best_epoch = value, epoch
            return True
        return False

    def should_stop(self, epoch):
        return epoch - self.best_epoch >= self.patience


def _batches(videos, order, size):
    by_len: dict = {}
    for i in order:
        by_len.setdefault(len(videos[i]), []).append(i)
    out = []
    for L in sorted(by_len):
        idx = by_len[L]
        out.extend(idx[k:k + size] for k in range(0, len(idx), size))
    return out


def val_sentiment_mae(model, videos):
    sp, _ = predict_arrays(model, videos)
    return mae(sp, np.array([s.sentiment for v in videos for s in v.segments]))


def train(model: Model, train_videos, val_videos, cfg: TrainConfig, on_epoch=None):
    """Train with early stopping; returns (best snapshot, TrainLog).

    Video order is reshuffled every epoch from ``cfg.seed``.  ``on_epoch`` is
    called with (epoch, train_loss, val_mae) if given.
    """
    cfg.validate(allow_zero_lr=True)
    if not train_videos or not val_videos:
        raise ArgumentError("training and validation splits must be non-empty")
    rng = np.random.default_rng(cfg.seed)
    model = model.copy()
    state = AdamState()
    stopper = EarlyStopping(cfg.patience)
    tlog = TrainLog()
    best = model.copy()
    for epoch in range(cfg.max_epochs):
        order = rng.permutation(len(train_videos))
        total, count = 0.0, 0
        for idx in _batches(train_videos, order, cfg.batch):
            batch = [train_videos[i] for i in idx]
            value, grads = loss_and_grads(model, batch, cfg.emotion_loss_weight)
            clip_global_norm(grads, cfg.clip_norm)
            adam_step(model.params, grads, state, cfg)
            n = sum(len(v) for v in batch)
            total += value * n
            count += n
        val = val_sentiment_mae(model, val_videos)
        tlog.train_loss.append(total / count)
        tlog.val_mae.append(val)
        if on_epoch is not None:
            on_epoch(epoch, total / count, val)
        if stopper.improved(epoch, val):
            best = model.copy()
        elif stopper.should_stop(epoch):
            tlog.stop_reason = "patience"
            break
    else:
        tlog.stop_reason = "max_epochs"
    tlog.best_epoch = stopper.best_epoch
    return best, tlog


# -- ablation -------------------------------------------------------------------------

@dataclass
class TextSource:
    """Raw text inputs for rebuilding the text modality under different feature flags.

    ``tokens`` and ``contextual`` are keyed by (video_id, segment_index).
    """

    tokens: dict
    word_vectors: dict
    lexicon: object = None
    contextual: dict = None
    rule_cfg: object = None


ABLATION_GRID = (
    {"lexicon": False, "rule_score": False, "contextual": False},
    {"lexicon": True, "rule_score": False, "contextual": False},
    {"lexicon": False, "rule_score": True, "contextual": False},
    {"lexicon": False, "rule_score": False, "contextual": True},
)


def flags_label(flags):
    parts = ["emb"]
    for key, tag in (("lexicon", "lex"), ("contextual", "ctx"), ("rule_score", "rule")):
        if flags.get(key):
            parts.append(tag)
    return "+".join(parts)


def with_text_features(videos, source: TextSource, flags):
    from .textfeat import RuleScorerConfig, segment_text_vector

    unknown = set(flags) - {"lexicon", "rule_score", "contextual"}
    if unknown:
        raise ArgumentError(f"unknown feature flags {sorted(unknown)}")
    if flags.get("lexicon") and source.lexicon is None:
        raise ArgumentError("lexicon flag set but the text source has no lexicon")
    if flags.get("contextual") and source.contextual is None:
        raise ArgumentError("contextual flag set but the text source has no contextual vectors")
    rule_cfg = (source.rule_cfg or RuleScorerConfig()) if flags.get("rule_score") else None
    out = []
    for v in videos:
        segs = []
        for s in v.segments:
            key = (v.video_id, s.segment_index)
            text = segment_text_vector(
                source.tokens[key], source.word_vectors,
                source.lexicon if flags.get("lexicon") else None,
                source.contextual[key] if flags.get("contextual") else None,
                rule_cfg)
            segs.append(SegmentRecord(s.video_id, s.segment_index, s.audio, s.video, text,
                                      s.sentiment, s.emotions))
        out.append(VideoSequence(v.video_id, segs))
    return out


def run_ablation(train_videos, val_videos, source: TextSource, grid, model_cfg: ModelConfig,
                 train_cfg: TrainConfig):
    """Train and evaluate one model per feature-flag combination, in grid order.

    Returns ``[(label, MetricsReport), ...]``.
    """
    if not grid:
        raise ArgumentError("ablation grid is empty")
    rows = []
    for flags in grid:
        label = flags_label(flags)
        try:
            tr = with_text_features(train_videos, source, flags)
            va = with_text_features(val_videos, source, flags)
            dims = dict(model_cfg.modality_input_dims)
            dims["text"] = tr[0].segments[0].text.size
            cfg = ModelConfig(**{**model_cfg.to_dict(), "modality_input_dims": dims})
            best, _ = train(build_model(cfg), tr, va, train_cfg)
            rows.append((label, evaluate_model(best, va)))
        except Exception as e:
            raise RuntimeError(f"ablation row {label!r} ({flags}) failed: {e}") from e
    return rows


# -- gradient checks ---------------------------------------------------------------------

GRADCHECK_TOL = 1e-4


def _tiny_video(rng, dims, L, vid="g"):
    segs = [SegmentRecord(vid, t, rng.normal(size=dims["audio"]), rng.normal(size=dims["video"]),
                          rng.normal(size=dims["text"]), float(rng.uniform(-3, 3)),
                          rng.uniform(0, 3, size=len(EMOTIONS)))
            for t in range(L)]
    return VideoSequence(vid, segs)


def _perturbed_params(model, rng, scale=0.5):
    """Flat parameter vector moved off its initialization.

    Weight noise shrinks with fan-in like the initializer does, so wide fused
    inputs do not push the LSTM gates into saturation where gradients vanish.
    """
    parts = []
    for p in model.params.values():
        width = p.shape[-1] if p.ndim == 2 else 1
        parts.append((p + rng.normal(scale=scale / np.sqrt(width), size=p.shape)).reshape(-1))
    return np.concatenate(parts)


def _relabel_near(model, video, params, rng, lo=0.01, hi=0.05):
    """Copy of ``video`` whose gold labels sit just off the model's predictions.

    All sentiment residuals share one sign and all emotion residuals another,
    so no bias gradient cancels to an exact zero that central differences can
    only resolve as rounding noise.  Small residuals also keep the loss value,
    and with it the finite-difference rounding floor, small.
    """
    sent, emo = forward_batch(model, [video], unflatten_params(model, nd.Tensor(params)))
    sign = rng.choice([-1.0, 1.0])
    segs = [SegmentRecord(s.video_id, s.segment_index, s.audio, s.video, s.text,
                          float(sent.data[0, t] + sign * rng.uniform(lo, hi)),
                          emo.data[0, t] + rng.uniform(lo, hi, size=len(EMOTIONS)))
            for t, s in enumerate(video.segments)]
    return VideoSequence(video.video_id, segs)


GRAD_FLOOR = 1e-6  # smallest analytic gradient a model draw may contain
_MAX_REDRAWS = 100


def _analytic_grad(fn, point):
    tape = nd.Tape()
    leaf = tape.leaf(np.array(point, dtype=np.float64))
    nd.backward(fn(leaf), tape)
    return leaf.grad


def model_gradcheck_problem(variant, rng, seed=0, n_segments=2):
    """A scalar training-loss function of the flat parameters of a tiny
    ``variant`` model, plus a point at which to check it.

    Central differences in float64 carry absolute noise near 1e-11, so a
    coordinate whose true gradient is far below that cannot meet a relative
    tolerance.  Points whose analytic gradient has any entry under
    GRAD_FLOOR are redrawn; returns (None, None) if no draw qualifies, which
    callers treat as a failure.
    """
    in_dims = {"audio": 3, "video": 2, "text": 3}
    cfg = ModelConfig(variant, in_dims, {"audio": 2, "video": 2, "text": 2}, 3, 3, seed=seed)
    model = build_model(cfg)
    for _ in range(_MAX_REDRAWS):
        point = _perturbed_params(model, rng)
        video = _relabel_near(model, _tiny_video(rng, in_dims, n_segments), point, rng)

        def fn(vec, video=video):
            out = forward_batch(model, [video], unflatten_params(model, vec))
            return loss(out, video.segments, 0.7)
        if np.min(np.abs(_analytic_grad(fn, point))) >= GRAD_FLOOR:
            return fn, point
    return None, None


def gradcheck_suite(draws: int = 20, seed: int = 0, corrupt: str | None = None):
    """Worst relative gradient error per component over ``draws`` random points.

    ``corrupt`` names a component whose analytic gradient is deliberately
    perturbed (negative control).
    """
    from .fusion import tensor_fuse
    from .layers import DenseParams, LstmParams, lstm_cell, lstm_sequence, dense_forward

    rng = np.random.default_rng(seed)

    def probe(name, fn, point):
        if corrupt == name:
            def bad(x):
                return fn(x) + nd.scale(nd.tensor_sum(x), 0.1)

            def numeric_only(x):
                return fn(x) if x.tape is None else bad(x)
            return nd.check_gradients(numeric_only, point)
        return nd.check_gradients(fn, point)

    results = {}

    def record(name, err):
        results[name] = max(results.get(name, 0.0), err)

    for _ in range(draws):
        # primitive ops composed
        a = rng.normal(size=(3, 4))
        b = rng.normal(size=(4, 2))

        def ops(x):
            m = nd.matmul(nd.reshape(x, (3, 4)), b)
            z = nd.concat([nd.reshape(nd.tanh(m), (-1,)), nd.sigmoid(nd.reshape(x, (-1,)))])
            return nd.tensor_sum(nd.scale(nd.add_const(z, 0.3), 1.7) * z) + nd.mean(nd.relu(x) * x)
        record("ndtensor", probe("ndtensor", ops, a.reshape(-1) + 0.05 * np.sign(a.reshape(-1))))

        dp = DenseParams.init(4, 3, rng)
        x4 = rng.normal(size=(2, 4))

        def dense_loss(w):
            p = DenseParams(nd.reshape(w[:12], (3, 4)), w[12:])
            return nd.tensor_sum(dense_forward(x4, p, "tanh") * np.arange(1.0, 7.0).reshape(2, 3))
        record("dense", probe("dense", dense_loss, np.concatenate([dp.weight.data.reshape(-1), rng.normal(size=3)])))

        lp = LstmParams.init(3, 2, rng)
        names = list(lp.named())
        shapes = [lp.named()[k].shape for k in names]
        flat = np.concatenate([lp.named()[k].data.reshape(-1) for k in names]) + rng.normal(scale=0.3, size=sum(int(np.prod(s)) for s in shapes))
        xs = [rng.normal(size=3) for _ in range(3)]
        h0 = rng.normal(size=2)
        c0 = rng.normal(size=2)
        wts = rng.normal(size=2)

        def unpack(vec):
            out, off = {}, 0
            for k, s in zip(names, shapes):
                n = int(np.prod(s))
                out[k] = nd.reshape(vec[off:off + n], s)
                off += n
            return LstmParams({g: out[f"W_{g}"] for g in "ifog"}, {g: out[f"U_{g}"] for g in "ifog"},
                              {g: out[f"b_{g}"] for g in "ifog"})

        def cell_loss(vec):
            h, c = lstm_cell(xs[0], h0, c0, unpack(vec))
            return nd.tensor_sum(h * wts) + nd.tensor_sum(c * c)
        record("lstm_cell", probe("lstm_cell", cell_loss, flat))

        def seq_loss(vec):
            hs = lstm_sequence(xs, unpack(vec))
            return nd.tensor_sum(nd.stack(hs) * np.outer(np.arange(1.0, 4.0), wts))
        record("lstm_sequence", probe("lstm_sequence", seq_loss, flat))

        dims = [int(d) for d in rng.integers(1, 4, size=3)]
        pts = rng.normal(size=sum(dims))
        w_out = rng.normal(size=int(np.prod([d + 1 for d in dims])))

        def fuse_loss(v):
            parts, off = [], 0
            for d in dims:
                parts.append(v[off:off + d])
                off += d
            return nd.tensor_sum(nd.tanh(tensor_fuse(parts).values) * w_out)
        record("tensor_fuse", probe("tensor_fuse", fuse_loss, pts))

    # whole models through the training loss
    for variant in ("rtn", "tfn", "early_fusion", "uni_text"):
        name = "loss" if variant == "rtn" else f"model:{variant}"
        for k in range(draws):
            fn, point = model_gradcheck_problem(variant, rng, seed=seed * 1000 + k)
            record(name, probe(name, fn, point) if fn is not None else float("inf"))
    return results
