"""Segment-level dataset records, JSON Lines I/O, splits and the planted
synthetic generator.

The synthetic generator plants a trimodal multiplicative signal that also
carries over between consecutive segments:

    s_t = gain * a_t * v_t * x_t + context * s_{t-1} + noise

so a model needs both within-segment interactions and inter-segment state
to recover the label sign.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields

import numpy as np

from .errors import ArgumentError, ConfigError, DataError, ParseError
from .fusion import MODALITIES

EMOTIONS = ("anger", "disgust", "fear", "happy", "sad", "surprise")
RECORD_FIELDS = ("video_id", "segment_index", "audio", "video", "text", "sentiment", "emotions")


@dataclass
class SegmentRecord:
    video_id: str
    segment_index: int
    audio: np.ndarray
    video: np.ndarray
    text: np.ndarray
    sentiment: float
    emotions: np.ndarray

    def __post_init__(self):
        for m in MODALITIES:
            setattr(self, m, np.asarray(getattr(self, m), dtype=np.float64).reshape(-1))
        self.emotions = np.asarray(self.emotions, dtype=np.float64).reshape(-1)
        self.sentiment = float(self.sentiment)
        self.segment_index = int(self.segment_index)

    def features(self, modality):
        return getattr(self, modality)

    def validate(self):
        where = f"video {self.video_id!r} segment {self.segment_index}"
        if self.segment_index < 0:
            raise DataError(f"{where}: negative segment_index")
        if not math.isfinite(self.sentiment) or not -3.0 <= self.sentiment <= 3.0:
            raise DataError(f"{where}: sentiment {self.sentiment} outside [-3, 3]")
        if self.emotions.shape != (len(EMOTIONS),):
            raise DataError(f"{where}: expected {len(EMOTIONS)} emotions, got {self.emotions.size}")
        if not np.all(np.isfinite(self.emotions)) or np.any(self.emotions < 0) or np.any(self.emotions > 3):
            raise DataError(f"{where}: emotions must be finite and within [0, 3]")
        for m in MODALITIES:
            if not np.all(np.isfinite(getattr(self, m))):
                raise DataError(f"{where}: non-finite {m} features")

    def __eq__(self, other):
        if not isinstance(other, SegmentRecord):
            return NotImplemented
        return (self.video_id == other.video_id
                and self.segment_index == other.segment_index
                and self.sentiment == other.sentiment
                and all(np.array_equal(getattr(self, m), getattr(other, m)) for m in MODALITIES)
                and np.array_equal(self.emotions, other.emotions))


@dataclass
class VideoSequence:
    video_id: str
    segments: list

    def __len__(self):
        return len(self.segments)

    def __iter__(self):
        return iter(self.segments)

    def __eq__(self, other):
        if not isinstance(other, VideoSequence):
            return NotImplemented
        return self.video_id == other.video_id and self.segments == other.segments


def feature_dims(videos):
    """Per-modality feature sizes, checked to be uniform across the dataset."""
    dims = {}
    for v in videos:
        for s in v.segments:
            for m in MODALITIES:
                n = getattr(s, m).size
                if dims.setdefault(m, n) != n:
                    raise DataError(f"video {v.video_id!r} segment {s.segment_index}: "
                                    f"{m} size {n} differs from {dims[m]}")
    return dims


# -- JSON Lines ----------------------------------------------------------------

def _record_to_json(s: SegmentRecord) -> str:
    s.validate()
    doc = {
        "video_id": s.video_id,
        "segment_index": s.segment_index,
        "audio": s.audio.tolist(),
        "video": s.video.tolist(),
        "text": s.text.tolist(),
        "sentiment": s.sentiment,
        "emotions": s.emotions.tolist(),
    }
    # json writes floats with repr(), the shortest string that round-trips.
    return json.dumps(doc, allow_nan=False)


def write_dataset(videos, path) -> None:
    lines = [_record_to_json(s) for v in videos for s in v.segments]
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for line in lines:
                fh.write(line + "\n")
    except OSError as e:
        raise DataError(f"cannot write dataset {path}: {e}") from e


def _parse_record(doc, lineno, lenient):
    if not isinstance(doc, dict):
        raise ParseError("record must be a JSON object", lineno)
    missing = [k for k in RECORD_FIELDS if k not in doc]
    if missing:
        raise ParseError(f"missing fields {missing}", lineno)
    extra = sorted(set(doc) - set(RECORD_FIELDS))
    if extra and not lenient:
        raise ParseError(f"unknown fields {extra}", lineno)
    if not isinstance(doc["video_id"], str):
        raise ParseError("video_id must be a string", lineno)
    if not isinstance(doc["segment_index"], int) or isinstance(doc["segment_index"], bool):
        raise ParseError("segment_index must be an integer", lineno)
    try:
        rec = SegmentRecord(**{k: doc[k] for k in RECORD_FIELDS})
    except (TypeError, ValueError) as e:
        raise ParseError(f"bad numeric field: {e}", lineno) from None
    try:
        rec.validate()
    except DataError as e:
        raise ParseError(str(e), lineno) from None
    return rec


def group_segments(records):
    """Group records into videos ordered by segment index (videos by first appearance)."""
    by_video: dict = {}
    for rec in records:
        by_video.setdefault(rec.video_id, []).append(rec)
    videos = []
    for vid, segs in by_video.items():
        segs.sort(key=lambda s: s.segment_index)
        idx = [s.segment_index for s in segs]
        if len(set(idx)) != len(idx):
            dup = sorted({i for i in idx if idx.count(i) > 1})
            raise DataError(f"video {vid!r}: duplicate segment_index {dup}")
        if idx != list(range(len(idx))):
            gap = sorted(set(range(max(idx) + 1)) - set(idx))
            raise DataError(f"video {vid!r}: missing segment_index {gap}")
        videos.append(VideoSequence(vid, segs))
    return videos


def load_dataset(path, lenient: bool = False):
    """Read a JSON Lines dataset into videos.

    Videos are sorted by id so line order in the file does not matter.
    """
    records = []
    try:
        fh = open(path, encoding="utf-8")
    except OSError as e:
        raise DataError(f"cannot read dataset {path}: {e}") from e
    with fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as e:
                raise ParseError(f"invalid JSON: {e.msg}", lineno) from None
            records.append(_parse_record(doc, lineno, lenient))
    records.sort(key=lambda r: (r.video_id, r.segment_index))
    return group_segments(records)


def split_train_val(videos, fraction: float = 0.1, seed: int = 0):
    """Split at video granularity; ``round(fraction * n)`` videos (at least 1) go to validation."""
    if not 0.0 < fraction < 1.0:
        raise ArgumentError(f"fraction must lie in (0, 1), got {fraction}")
    n = len(videos)
    if n < 2:
        raise DataError(f"need at least 2 videos to split, got {n}")
    n_val = min(n - 1, max(1, math.floor(fraction * n + 0.5)))
    order = np.random.default_rng(seed).permutation(n)
    val_idx = set(order[:n_val].tolist())
    train = [v for i, v in enumerate(videos) if i not in val_idx]
    val = [v for i, v in enumerate(videos) if i in val_idx]
    return train, val


# -- synthetic data ------------------------------------------------------------------

@dataclass
class SynthConfig:
    n_train_videos: int = 200
    n_val_videos: int = 50
    segments_per_video: int = 10
    dims: dict = field(default_factory=lambda: {"audio": 4, "video": 4, "text": 4})
    interaction_gain: float = 10.0
    context_gain: float = 0.4
    noise_sigma: float = 0.1
    seed: int = 0

    def validate(self):
        for name in ("n_train_videos", "n_val_videos", "segments_per_video"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise ConfigError(name, f"must be a positive integer, got {v!r}")
        if set(self.dims) != set(MODALITIES):
            raise ConfigError("dims", f"must give sizes for {list(MODALITIES)}")
        for m, d in self.dims.items():
            if not isinstance(d, int) or d < 1:
                raise ConfigError(f"dims.{m}", f"must be a positive integer, got {d!r}")
        if not self.interaction_gain > 0:
            raise ConfigError("interaction_gain", "must be positive")
        if not 0.0 <= self.context_gain < 1.0:
            raise ConfigError("context_gain", "must lie in [0, 1)")
        if not self.noise_sigma >= 0:
            raise ConfigError("noise_sigma", f"must be non-negative, got {self.noise_sigma}")
        return self

    @classmethod
    def from_dict(cls, doc, prefix="synth"):
        known = {f.name for f in fields(cls)}
        for k in doc:
            if k not in known:
                raise ConfigError(f"{prefix}.{k}", "unknown key")
        return cls(**doc)

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class _Latents:
    a: np.ndarray  # (videos, L) per modality latent
    v: np.ndarray
    x: np.ndarray
    raw: np.ndarray  # noisy sentiment recursion
    clean: np.ndarray  # the same recursion without label noise


def _simulate(cfg: SynthConfig):
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    n_videos = cfg.n_train_videos + cfg.n_val_videos
    L = cfg.segments_per_video
    directions = {}
    for m in MODALITIES:
        u = rng.standard_normal(cfg.dims[m])
        directions[m] = u / np.linalg.norm(u)
    lat = rng.uniform(-1.0, 1.0, size=(3, n_videos, L))
    eps = rng.normal(0.0, 1.0, size=(n_videos, L)) * cfg.noise_sigma
    prod = cfg.interaction_gain * lat[0] * lat[1] * lat[2]
    raw = np.zeros((n_videos, L))
    clean = np.zeros((n_videos, L))
    prev = np.zeros(n_videos)
    prev_clean = np.zeros(n_videos)
    for t in range(L):
        prev = prod[:, t] + cfg.context_gain * prev + eps[:, t]
        prev_clean = prod[:, t] + cfg.context_gain * prev_clean
        raw[:, t] = prev
        clean[:, t] = prev_clean
    scale = float(np.percentile(np.abs(raw), 99))
    if scale <= 0:
        scale = 1.0
    y = np.clip(3.0 * raw / scale, -3.0, 3.0)
    pos, negs = np.maximum(0.0, y), np.maximum(0.0, -y)
    side = np.clip(np.abs(rng.normal(0.0, 0.1, size=(3, n_videos, L))), 0.0, 3.0)
    # anger, disgust, fear, happy, sad, surprise
    emotions = np.stack([0.4 * negs, side[0], side[1], pos, 0.6 * negs, side[2]], axis=-1)
    obs = {}
    for k, m in enumerate(MODALITIES):
        noise = rng.normal(0.0, 1.0, size=(n_videos, L, cfg.dims[m])) * cfg.noise_sigma
        obs[m] = lat[k][..., None] * directions[m] + noise

    videos = []
    width = len(str(n_videos - 1))
    for i in range(n_videos):
        vid = f"syn{i:0{width}d}"
        segs = [SegmentRecord(vid, t, obs["audio"][i, t], obs["video"][i, t], obs["text"][i, t],
                              float(y[i, t]), emotions[i, t])
                for t in range(L)]
        videos.append(VideoSequence(vid, segs))
    return videos, _Latents(lat[0], lat[1], lat[2], raw, clean)


def gen_synthetic(cfg: SynthConfig):
    """Generate (train, val) videos with the planted signal; deterministic in ``cfg.seed``."""
    videos, _ = _simulate(cfg)
    return videos[:cfg.n_train_videos], videos[cfg.n_train_videos:]


def product_oracle_accuracy(cfg: SynthConfig, subset: str = "val") -> float:
    """Binary accuracy of an oracle that knows every latent and thresholds the
    noise-free recursion of planted products.

    Its only error source is label noise, so this is the ceiling a learned
    model can approach from the data.
    """
    videos, lat = _simulate(cfg)
    sl = slice(cfg.n_train_videos, None) if subset == "val" else slice(None)
    gold = np.array([[s.sentiment for s in v.segments] for v in videos])[sl] > 0
    pred = lat.clean[sl] > 0
    return float(np.mean(gold == pred))
