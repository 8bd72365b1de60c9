"""The compared architectures and their checkpoint format.

Every variant encodes each modality with one tanh dense layer, then:

* ``uni_*``        one modality -> LSTM over segments -> heads
* ``early_fusion`` concatenated embeddings -> LSTM -> heads
* ``tfn``          tensor fusion per segment -> heads (no recurrence)
* ``rtn``          tensor fusion per segment -> LSTM over segments -> heads

The heads share one tanh hidden layer and split into a sentiment scalar and
six emotion intensities.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields

import numpy as np

from . import ndtensor as nd
from .dataio import EMOTIONS, VideoSequence
from .errors import CheckpointError, ConfigError, DataError
from .fusion import MODALITIES, early_fuse, fused_dim, tensor_fuse
from .layers import GATES, DenseParams, LstmParams, dense_forward, lstm_sequence

CHECKPOINT_VERSION = "rtnlab-ckpt-1"

VARIANT_MODALITIES = {
    "uni_audio": ("audio",),
    "uni_video": ("video",),
    "uni_text": ("text",),
    "early_fusion": MODALITIES,
    "tfn": MODALITIES,
    "rtn": MODALITIES,
}
RECURRENT = {"uni_audio", "uni_video", "uni_text", "early_fusion", "rtn"}


@dataclass
class ModelConfig:
    variant: str = "rtn"
    modality_input_dims: dict = field(default_factory=dict)
    modality_embed_dims: dict = field(default_factory=lambda: {m: 8 for m in MODALITIES})
    lstm_hidden: int = 32
    head_hidden: int = 32
    seed: int = 0

    @property
    def modalities(self):
        return VARIANT_MODALITIES[self.variant]

    def validate(self):
        if self.variant not in VARIANT_MODALITIES:
            raise ConfigError("variant", f"unknown variant {self.variant!r}; "
                                         f"expected one of {sorted(VARIANT_MODALITIES)}")
        for m in self.modalities:
            for name in ("modality_input_dims", "modality_embed_dims"):
                d = getattr(self, name).get(m)
                if d is None:
                    raise ConfigError(f"{name}.{m}", f"variant {self.variant} needs a {m} size")
                if not isinstance(d, int) or isinstance(d, bool) or d < 1:
                    raise ConfigError(f"{name}.{m}", f"must be a positive integer, got {d!r}")
        for name in ("lstm_hidden", "head_hidden"):
            d = getattr(self, name)
            if not isinstance(d, int) or isinstance(d, bool) or d < 1:
                raise ConfigError(name, f"must be a positive integer, got {d!r}")
        return self

    def segment_feature_size(self):
        """Width of the per-segment vector that enters the LSTM (or the heads for tfn)."""
        dims = [self.modality_embed_dims[m] for m in self.modalities]
        if self.variant in ("tfn", "rtn"):
            return fused_dim(dims, "tensor")
        return fused_dim(dims, "early")

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, doc, prefix="model"):
        known = {f.name for f in fields(cls)}
        for k in doc:
            if k not in known:
                raise ConfigError(f"{prefix}.{k}", "unknown key")
        return cls(**doc)


@dataclass
class Prediction:
    sentiment: float
    emotions: tuple  # ordered as dataio.EMOTIONS


class Model:
    """Configuration plus named parameter arrays (insertion order is canonical)."""

    def __init__(self, cfg: ModelConfig, params: dict):
        self.cfg = cfg
        self.params = params

    def num_parameters(self):
        return sum(p.size for p in self.params.values())

    def param_vector(self):
        return np.concatenate([p.reshape(-1) for p in self.params.values()])

    def set_param_vector(self, vec):
        vec = np.asarray(vec, dtype=np.float64)
        if vec.size != self.num_parameters():
            raise DataError(f"parameter vector has {vec.size} entries, model has {self.num_parameters()}")
        off = 0
        for name, p in self.params.items():
            self.params[name] = vec[off:off + p.size].reshape(p.shape).copy()
            off += p.size

    def copy(self):
        return Model(ModelConfig(**self.cfg.to_dict()), {k: v.copy() for k, v in self.params.items()})

    def zero_(self):
        for k in self.params:
            self.params[k] = np.zeros_like(self.params[k])
        return self


def build_model(cfg: ModelConfig) -> Model:
    """Initialize parameters deterministically from ``cfg.seed``.

    Weights are uniform in +-1/sqrt(fan_in); biases start at zero except the
    LSTM forget gate, which starts at 1.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    params = {}

    def add_dense(prefix, n_in, n_out):
        d = DenseParams.init(n_in, n_out, rng)
        params[f"{prefix}.weight"] = d.weight.data
        params[f"{prefix}.bias"] = d.bias.data

    for m in cfg.modalities:
        add_dense(f"enc.{m}", cfg.modality_input_dims[m], cfg.modality_embed_dims[m])
    feat = cfg.segment_feature_size()
    if cfg.variant in RECURRENT:
        lstm = LstmParams.init(feat, cfg.lstm_hidden, rng)
        for name, t in lstm.named().items():
            params[f"lstm.{name}"] = t.data
        trunk = cfg.lstm_hidden
    else:
        trunk = feat
    add_dense("head.hidden", trunk, cfg.head_hidden)
    add_dense("head.sentiment", cfg.head_hidden, 1)
    add_dense("head.emotions", cfg.head_hidden, len(EMOTIONS))
    return Model(cfg, params)


def _modality_matrix(model, videos, modality):
    want = model.cfg.modality_input_dims[modality]
    rows = []
    for v in videos:
        for s in v.segments:
            x = s.features(modality)
            if x.size != want:
                what = "missing" if x.size == 0 else f"has {x.size} values, expected {want}"
                raise DataError(f"video {v.video_id!r} segment {s.segment_index}: {modality} features {what}")
            rows.append(x)
    return np.asarray(rows, dtype=np.float64).reshape(len(rows), want)


def forward_batch(model: Model, videos, params=None):
    """Run a batch of equal-length videos.

    ``params`` maps parameter names to Tensors (e.g. tape leaves); by default
    the model's own arrays are used as constants.  Returns sentiment of shape
    (B, L) and emotions of shape (B, L, 6).
    """
    cfg = model.cfg
    if not videos:
        raise DataError("empty batch")
    L = len(videos[0])
    if L == 0 or any(len(v) != L for v in videos):
        raise DataError("videos in one batch must share a positive segment count")
    B = len(videos)
    P = params if params is not None else {k: nd.Tensor(v) for k, v in model.params.items()}

    def dense(prefix):
        return DenseParams(P[f"{prefix}.weight"], P[f"{prefix}.bias"])

    emb = [dense_forward(_modality_matrix(model, videos, m), dense(f"enc.{m}"), "tanh")
           for m in cfg.modalities]
    if cfg.variant in ("tfn", "rtn"):
        feat = tensor_fuse(emb).values
    elif len(emb) > 1:
        feat = early_fuse(emb).values
    else:
        feat = emb[0]

    if cfg.variant in RECURRENT:
        lstm = LstmParams({k: P[f"lstm.W_{k}"] for k in GATES},
                          {k: P[f"lstm.U_{k}"] for k in GATES},
                          {k: P[f"lstm.b_{k}"] for k in GATES})
        seq = nd.reshape(feat, (B, L, feat.shape[-1]))
        hs = lstm_sequence([seq[:, t, :] for t in range(L)], lstm)
        trunk = nd.reshape(nd.stack(hs, axis=1), (B * L, cfg.lstm_hidden))
    else:
        trunk = feat
    hidden = dense_forward(trunk, dense("head.hidden"), "tanh")
    sent = dense_forward(hidden, dense("head.sentiment"))
    emo = dense_forward(hidden, dense("head.emotions"))
    return nd.reshape(sent, (B, L)), nd.reshape(emo, (B, L, len(EMOTIONS)))


def forward(model: Model, video: VideoSequence):
    """Predictions for every segment of one video, in segment order."""
    sent, emo = forward_batch(model, [video])
    return [Prediction(float(sent.data[0, t]), tuple(float(e) for e in emo.data[0, t]))
            for t in range(len(video))]


def predict_arrays(model: Model, videos, batch_size: int = 64):
    """Flattened (sentiment, emotions) predictions over all segments of ``videos`` in order."""
    sents, emos = [], []
    for idx, batch in _length_batches(videos, batch_size):
        s, e = forward_batch(model, batch)
        for i, k in enumerate(idx):
            sents.append((k, s.data[i]))
            emos.append((k, e.data[i]))
    sents.sort(key=lambda t: t[0])
    emos.sort(key=lambda t: t[0])
    if not sents:
        return np.zeros(0), np.zeros((0, len(EMOTIONS)))
    return (np.concatenate([s for _, s in sents]),
            np.concatenate([e for _, e in emos]).reshape(-1, len(EMOTIONS)))


def _length_batches(videos, batch_size):
    by_len: dict = {}
    for i, v in enumerate(videos):
        by_len.setdefault(len(v), []).append(i)
    for L in sorted(by_len):
        idx = by_len[L]
        for k in range(0, len(idx), batch_size):
            chunk = idx[k:k + batch_size]
            yield chunk, [videos[i] for i in chunk]


def unflatten_params(model: Model, vec: nd.Tensor):
    """Slice a flat parameter Tensor into named Tensors shaped like the model's."""
    out = {}
    off = 0
    for name, p in model.params.items():
        out[name] = nd.reshape(vec[off:off + p.size], p.shape)
        off += p.size
    return out


def discretize_sentiment(y: float):
    """(binary label, 7-class index) for a real sentiment score.

    Binary is "pos" only for y > 0; the class index rounds half away from
    zero and clamps to [-3, 3] before shifting to 0..6.
    """
    y = float(y)
    binary = "pos" if y > 0 else "neg"
    r = math.copysign(math.floor(abs(y) + 0.5), y)
    return binary, int(min(3, max(-3, r))) + 3


# -- checkpoints ------------------------------------------------------------------

def save_checkpoint(model: Model, path) -> None:
    doc = {
        "version": CHECKPOINT_VERSION,
        "config": model.cfg.to_dict(),
        "params": [{"name": k, "shape": list(v.shape), "values": v.reshape(-1).tolist()}
                   for k, v in model.params.items()],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, allow_nan=False)
        fh.write("\n")


def load_checkpoint(path) -> Model:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError, UnicodeDecodeError) as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    if not isinstance(doc, dict) or doc.get("version") != CHECKPOINT_VERSION:
        found = doc.get("version") if isinstance(doc, dict) else None
        raise CheckpointError(f"checkpoint version {found!r} != {CHECKPOINT_VERSION!r}")
    try:
        cfg = ModelConfig.from_dict(doc["config"]).validate()
        params = {}
        for entry in doc["params"]:
            arr = np.asarray(entry["values"], dtype=np.float64)
            params[entry["name"]] = arr.reshape(entry["shape"])
    except (KeyError, TypeError, ValueError, ConfigError) as e:
        raise CheckpointError(f"malformed checkpoint {path}: {e}") from e
    expected = build_model(cfg).params
    if list(expected) != list(params) or any(expected[k].shape != params[k].shape for k in expected):
        raise CheckpointError(f"checkpoint {path} parameters do not match its config")
    return Model(cfg, params)
