"""Binary, 7-class and regression metrics for sentiment and per-emotion MAE."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass

import numpy as np

from .dataio import EMOTIONS
from .errors import ArgumentError

log = logging.getLogger(__name__)

N_CLASSES = 7


@dataclass
class MetricsReport:
    binary_acc: float
    binary_f1: float
    acc7: float
    f1_7_weighted: float
    sentiment_mae: float
    emotion_mae: list  # ordered as dataio.EMOTIONS

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


def _check_pair(pred, gold):
    if len(pred) != len(gold):
        raise ArgumentError(f"length mismatch: {len(pred)} predictions, {len(gold)} gold")
    if len(pred) == 0:
        raise ArgumentError("no predictions to score")


def _as_positive(labels):
    out = []
    for x in labels:
        if x in ("pos", True, 1):
            out.append(True)
        elif x in ("neg", False, 0):
            out.append(False)
        else:
            raise ArgumentError(f"binary label must be 'pos' or 'neg', got {x!r}")
    return np.array(out, dtype=bool)


def _f1(tp, fp, fn):
    denom = 2 * tp + fp + fn
    return (2.0 * tp / denom, False) if denom else (0.0, True)


def binary_metrics(pred, gold):
    """(accuracy, F1 of the positive class).  F1 is 0 when undefined."""
    _check_pair(pred, gold)
    p, g = _as_positive(pred), _as_positive(gold)
    acc = float(np.mean(p == g))
    tp = int(np.sum(p & g))
    fp = int(np.sum(p & ~g))
    fn = int(np.sum(~p & g))
    f1, undefined = _f1(tp, fp, fn)
    if undefined:
        log.warning("binary F1 undefined (no positive predictions or gold); reporting 0")
    return acc, f1


def multiclass_metrics(pred, gold, n_classes: int = N_CLASSES):
    """(accuracy, support-weighted F1) over classes 0..n_classes-1."""
    _check_pair(pred, gold)
    p = np.asarray(pred)
    g = np.asarray(gold)
    for arr in (p, g):
        if not np.issubdtype(arr.dtype, np.integer) or arr.min() < 0 or arr.max() >= n_classes:
            raise ArgumentError(f"class labels must be integers in 0..{n_classes - 1}")
    acc = float(np.mean(p == g))
    n = len(g)
    weighted = 0.0
    undefined = False
    for k in range(n_classes):
        support = int(np.sum(g == k))
        if support == 0:
            continue
        tp = int(np.sum((p == k) & (g == k)))
        fp = int(np.sum((p == k) & (g != k)))
        f1, und = _f1(tp, fp, support - tp)
        undefined |= und
        weighted += support / n * f1
    if undefined:
        log.warning("per-class F1 undefined for some class; counted as 0")
    return acc, weighted


def mae(pred, gold) -> float:
    _check_pair(pred, gold)
    return float(np.mean(np.abs(np.asarray(pred, dtype=np.float64) - np.asarray(gold, dtype=np.float64))))


def report_from_arrays(sent_pred, emo_pred, sent_gold, emo_gold) -> MetricsReport:
    from .models import discretize_sentiment

    sent_pred = np.asarray(sent_pred, dtype=np.float64)
    sent_gold = np.asarray(sent_gold, dtype=np.float64)
    _check_pair(sent_pred, sent_gold)
    dp = [discretize_sentiment(y) for y in sent_pred]
    dg = [discretize_sentiment(y) for y in sent_gold]
    b_acc, b_f1 = binary_metrics([d[0] for d in dp], [d[0] for d in dg])
    acc7, f17 = multiclass_metrics(np.array([d[1] for d in dp]), np.array([d[1] for d in dg]))
    emo_pred = np.asarray(emo_pred, dtype=np.float64).reshape(-1, len(EMOTIONS))
    emo_gold = np.asarray(emo_gold, dtype=np.float64).reshape(-1, len(EMOTIONS))
    emo = [mae(emo_pred[:, k], emo_gold[:, k]) for k in range(len(EMOTIONS))]
    return MetricsReport(b_acc, b_f1, acc7, f17, mae(sent_pred, sent_gold), emo)


def gold_arrays(videos):
    segs = [s for v in videos for s in v.segments]
    sent = np.array([s.sentiment for s in segs], dtype=np.float64)
    emo = np.array([s.emotions for s in segs], dtype=np.float64).reshape(-1, len(EMOTIONS))
    return sent, emo


def evaluate_model(model, videos) -> MetricsReport:
    """Score every segment of ``videos``; classification metrics come from
    discretizing the regression output."""
    from .models import predict_arrays

    if not videos or not any(len(v) for v in videos):
        raise ArgumentError("cannot evaluate on an empty dataset")
    sp, ep = predict_arrays(model, videos)
    sg, eg = gold_arrays(videos)
    return report_from_arrays(sp, ep, sg, eg)


def majority_baseline(train_videos, videos) -> MetricsReport:
    """Score a constant predictor fitted on ``train_videos``.

    Sentiment is the training median, moved onto the majority side of zero if
    needed so its binary decision is the majority class; emotions are the
    per-emotion training medians.
    """
    sg_tr, eg_tr = gold_arrays(train_videos)
    sg, eg = gold_arrays(videos)
    const = float(np.median(sg_tr))
    if np.mean(sg_tr > 0) > 0.5:
        if const <= 0:
            const = float(np.min(sg_tr[sg_tr > 0]))
    elif const > 0:
        const = 0.0
    n = len(sg)
    return report_from_arrays(np.full(n, const), np.tile(np.median(eg_tr, axis=0), (n, 1)), sg, eg)


# -- presentation -------------------------------------------------------------------

SENTIMENT_COLUMNS = ("binary_acc", "binary_f1", "acc7", "f1_7_weighted", "sentiment_mae")
SENTIMENT_HEADERS = ("Bin Acc", "Bin F1", "7cl Acc", "7cl F1", "MAE")


def fmt(x: float) -> str:
    return f"{x:.4f}"


def format_table(rows) -> str:
    """Aligned sentiment table and emotion-MAE table for ``[(label, report), ...]``."""
    width = max([len("Emotion MAE")] + [len(r[0]) for r in rows])
    lines = ["Sentiment".ljust(width) + "  " + "  ".join(h.rjust(8) for h in SENTIMENT_HEADERS)]
    for label, rep in rows:
        vals = [fmt(getattr(rep, c)) for c in SENTIMENT_COLUMNS]
        lines.append(label.ljust(width) + "  " + "  ".join(v.rjust(8) for v in vals))
    lines.append("")
    lines.append("Emotion MAE".ljust(width) + "  " + "  ".join(e.capitalize().rjust(8) for e in EMOTIONS))
    for label, rep in rows:
        lines.append(label.ljust(width) + "  " + "  ".join(fmt(v).rjust(8) for v in rep.emotion_mae))
    return "\n".join(lines)
