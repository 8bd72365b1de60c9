"""Audio utterance features: phoneme posteriorgram statistics and i-vectors.

Phoneme features collapse frame-level triphone-state posteriors onto
monophones and summarize each phone track by its mean and standard
deviation over the utterance.

I-vectors model each frame as drawn from the UBM component c with its mean
shifted by ``T_c w``; ``w ~ N(0, I)`` is the utterance's latent vector and
the i-vector is its posterior mean given the Baum-Welch statistics.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import ConfigError, DataError, DimensionError, NumericError, ParseError

log = logging.getLogger(__name__)

VARIANCE_FLOOR = 1e-4


@dataclass
class StateMap:
    state_to_phone: np.ndarray
    n_phones: int

    def __post_init__(self):
        self.state_to_phone = np.asarray(self.state_to_phone, dtype=np.int64).reshape(-1)
        if self.state_to_phone.size and (self.state_to_phone.min() < 0
                                         or self.state_to_phone.max() >= self.n_phones):
            raise DataError(f"state map entries must lie in 0..{self.n_phones - 1}")

    def __len__(self):
        return self.state_to_phone.size


@dataclass
class Ubm:
    weights: np.ndarray  # (C,)
    means: np.ndarray  # (C, D)
    variances: np.ndarray  # (C, D), diagonal covariances

    @property
    def n_components(self):
        return self.means.shape[0]

    @property
    def dim(self):
        return self.means.shape[1]

    def to_dict(self):
        return {"weights": self.weights.tolist(), "means": self.means.tolist(),
                "variances": self.variances.tolist()}

    @classmethod
    def from_dict(cls, doc):
        return cls(np.asarray(doc["weights"], float), np.asarray(doc["means"], float),
                   np.asarray(doc["variances"], float))


@dataclass
class TMatrixModel:
    T: np.ndarray  # (C*D, R); rows c*D:(c+1)*D belong to component c

    @property
    def rank(self):
        return self.T.shape[1]

    def to_dict(self):
        return {"T": self.T.tolist()}

    @classmethod
    def from_dict(cls, doc):
        return cls(np.asarray(doc["T"], float))


@dataclass
class BwStats:
    N: np.ndarray  # (C,) zeroth order
    F: np.ndarray  # (C, D) first order, centered on the UBM means


# -- phoneme-level features ---------------------------------------------------------

def _posterior_array(P):
    P = np.asarray(P, dtype=np.float64)
    if P.ndim != 2:
        raise DimensionError(f"posterior matrix must be 2-D, got shape {P.shape}")
    return P


def monophone_posteriors(P, state_map: StateMap):
    """Sum triphone-state posteriors into monophone columns: (T, S) -> (T, M)."""
    P = _posterior_array(P)
    if P.shape[1] != len(state_map):
        raise DimensionError(f"posteriors have {P.shape[1]} states, map has {len(state_map)}")
    out = np.zeros((P.shape[0], state_map.n_phones))
    for j in range(state_map.n_phones):
        cols = np.flatnonzero(state_map.state_to_phone == j)
        if cols.size:
            out[:, j] = P[:, cols].sum(axis=1)
    return out


def phoneme_stats(Q):
    """Per-phone mean then per-phone population standard deviation over frames."""
    Q = _posterior_array(Q)
    if Q.shape[0] == 0:
        raise DataError("utterance has no frames")
    return np.concatenate([Q.mean(axis=0), Q.std(axis=0)])


def phoneme_features(P, state_map: StateMap):
    return phoneme_stats(monophone_posteriors(P, state_map))


# -- GMM / UBM ------------------------------------------------------------------------

def _log_gauss(frames, ubm: Ubm):
    """(T, C) log N(x_t; m_c, diag(var_c))."""
    var = ubm.variances
    inv = 1.0 / var
    const = -0.5 * (ubm.dim * np.log(2 * np.pi) + np.log(var).sum(axis=1))
    quad = (frames ** 2) @ inv.T - 2.0 * frames @ (ubm.means * inv).T + np.sum(ubm.means ** 2 * inv, axis=1)
    return const - 0.5 * quad


def _frames_array(frames, dim=None):
    X = np.asarray(frames, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if X.ndim != 2:
        raise DimensionError(f"frames must be a (T, D) matrix, got shape {X.shape}")
    if dim is not None and X.shape[1] != dim:
        raise DimensionError(f"frames have dimension {X.shape[1]}, model expects {dim}")
    return X


def gmm_posteriors(ubm: Ubm, frames):
    """Component posteriors per frame, computed in the log domain."""
    X = _frames_array(frames, ubm.dim)
    logp = _log_gauss(X, ubm) + np.log(ubm.weights)
    return np.exp(logp - logsumexp(logp, axis=1, keepdims=True))


def gmm_loglik(ubm: Ubm, frames) -> float:
    X = _frames_array(frames, ubm.dim)
    return float(logsumexp(_log_gauss(X, ubm) + np.log(ubm.weights), axis=1).sum())


def _kmeanspp(X, C, rng):
    centers = [X[rng.integers(len(X))]]
    for _ in range(1, C):
        d2 = np.min(((X[:, None, :] - np.asarray(centers)[None]) ** 2).sum(-1), axis=1)
        total = d2.sum()
        idx = rng.integers(len(X)) if total <= 0 else rng.choice(len(X), p=d2 / total)
        centers.append(X[idx])
    return np.asarray(centers)


@dataclass
class UbmFit:
    ubm: Ubm
    loglik: list  # data log-likelihood of the parameters entering each iteration, then the final one
    reinit_iters: list


def ubm_fit(frames, n_components: int, iters: int = 20, seed: int = 0,
            var_floor: float = VARIANCE_FLOOR) -> UbmFit:
    """EM for a diagonal-covariance GMM with k-means++ seeding.

    The variance floor enters the M-step as a constraint, so each iteration
    still cannot lower the likelihood.  A component that loses all
    responsibility is re-seeded from a random frame (logged, and recorded in
    ``reinit_iters``).
    """
    X = _frames_array(frames)
    C = int(n_components)
    if C < 1:
        raise ConfigError("n_components", "must be at least 1")
    if iters < 1:
        raise ConfigError("iters", "must be at least 1")
    if len(X) < C:
        raise DataError(f"{len(X)} frames cannot fit {C} components")
    rng = np.random.default_rng(seed)
    global_var = np.maximum(X.var(axis=0), var_floor)
    ubm = Ubm(np.full(C, 1.0 / C), _kmeanspp(X, C, rng), np.tile(global_var, (C, 1)))
    trace, reinit = [], []
    for it in range(iters):
        logp = _log_gauss(X, ubm) + np.log(ubm.weights)
        norm = logsumexp(logp, axis=1, keepdims=True)
        trace.append(float(norm.sum()))
        gamma = np.exp(logp - norm)
        Nc = gamma.sum(axis=0)
        means = ubm.means.copy()
        variances = ubm.variances.copy()
        for c in range(C):
            if Nc[c] < 1e-10:
                log.warning("ubm_fit: component %d lost its mass at iteration %d; re-seeding", c, it)
                reinit.append(it)
                means[c] = X[rng.integers(len(X))]
                variances[c] = global_var
                Nc[c] = 0.0
                continue
            mu = gamma[:, c] @ X / Nc[c]
            var = gamma[:, c] @ (X - mu) ** 2 / Nc[c]
            means[c] = mu
            variances[c] = np.maximum(var, var_floor)
        w = np.maximum(Nc, 0.0)
        w = w / w.sum() if w.sum() > 0 else np.full(C, 1.0 / C)
        if np.any(w == 0):
            w = np.maximum(w, 1e-12)
            w /= w.sum()
        ubm = Ubm(w, means, variances)
    trace.append(gmm_loglik(ubm, X))
    return UbmFit(ubm, trace, reinit)


def ubm_from_posteriors(frames, posteriors, var_floor: float = VARIANCE_FLOOR) -> Ubm:
    """Posterior-weighted means and variances when external (e.g. DNN) posteriors
    define the components instead of a trained GMM."""
    X = _frames_array(frames)
    P = _posterior_array(posteriors)
    if P.shape[0] != X.shape[0]:
        raise DimensionError(f"{P.shape[0]} posterior rows for {X.shape[0]} frames")
    Nc = P.sum(axis=0)
    safe = np.where(Nc > 0, Nc, 1.0)[:, None]
    means = (P.T @ X) / safe
    var = (P.T @ X ** 2) / safe - means ** 2
    global_var = X.var(axis=0)
    var = np.where(Nc[:, None] > 0, var, global_var)
    w = Nc / Nc.sum()
    return Ubm(np.maximum(w, 1e-12) / np.maximum(w, 1e-12).sum(), means, np.maximum(var, var_floor))


# -- i-vectors ----------------------------------------------------------------------------

def bw_stats(P, frames, ubm: Ubm) -> BwStats:
    """N_c = sum_t P[t,c]; F_c = sum_t P[t,c] (x_t - m_c)."""
    X = _frames_array(frames, ubm.dim)
    P = _posterior_array(P)
    if P.shape != (X.shape[0], ubm.n_components):
        raise DimensionError(f"posteriors {P.shape} do not match {X.shape[0]} frames x "
                             f"{ubm.n_components} components")
    N = P.sum(axis=0)
    F = P.T @ X - N[:, None] * ubm.means
    return BwStats(N, F)


def _posterior_precision(stats: BwStats, tv: TMatrixModel, ubm: Ubm):
    C, D = ubm.means.shape
    R = tv.rank
    if tv.T.shape[0] != C * D or stats.F.shape != (C, D) or stats.N.shape != (C,):
        raise DimensionError(f"T {tv.T.shape}, stats N{stats.N.shape}/F{stats.F.shape} "
                             f"and UBM {C}x{D} disagree")
    inv = (1.0 / ubm.variances).reshape(-1)  # (C*D,)
    TtSi = tv.T.T * inv  # (R, C*D)
    n_rep = np.repeat(stats.N, D)
    L = np.eye(R) + (TtSi * n_rep) @ tv.T
    b = TtSi @ stats.F.reshape(-1)
    return L, b


def extract_ivector(stats: BwStats, tv: TMatrixModel, ubm: Ubm):
    """Posterior mean ``L^-1 T' S^-1 F`` with ``L = I + sum_c N_c T_c' S_c^-1 T_c``."""
    L, b = _posterior_precision(stats, tv, ubm)
    assert np.all(np.isfinite(L)), "posterior precision is not finite"
    return np.linalg.solve(L, b)


def tv_objective(all_stats, tv: TMatrixModel, ubm: Ubm) -> float:
    """Marginal log-likelihood of the statistics up to terms that do not depend on T.

    Per utterance this is ``b' L^-1 b / 2 - log|L| / 2``; EM on T never
    decreases it.
    """
    total = 0.0
    for st in all_stats:
        L, b = _posterior_precision(st, tv, ubm)
        sign, logdet = np.linalg.slogdet(L)
        if sign <= 0:
            raise NumericError("posterior precision is not positive definite")
        total += 0.5 * b @ np.linalg.solve(L, b) - 0.5 * logdet
    return float(total)


@dataclass
class TvFit:
    model: TMatrixModel
    objective: list  # value before training, then after each iteration


def tv_init(ubm: Ubm, rank: int, seed: int = 0) -> TMatrixModel:
    rng = np.random.default_rng(seed)
    sd = np.sqrt(ubm.variances).reshape(-1, 1)
    return TMatrixModel(0.1 * sd * rng.standard_normal((ubm.variances.size, rank)))


def tv_train(all_stats, ubm: Ubm, rank: int, iters: int = 10, seed: int = 0) -> TvFit:
    """Total-variability EM.

    E-step: posterior mean and second moment of w for every utterance.
    M-step: for each component c, ``T_c = (sum_u F_cu E[w_u]') (sum_u N_cu E[w_u w_u'])^-1``.
    """
    C, D = ubm.means.shape
    if rank < 1 or rank > C * D:
        raise ConfigError("rank", f"must lie in 1..{C * D} (C*D), got {rank}")
    if len(all_stats) < 2:
        raise DataError("total-variability training needs at least 2 utterances")
    tv = tv_init(ubm, rank, seed)
    trace = [tv_objective(all_stats, tv, ubm)]
    for _ in range(iters):
        A = np.zeros((C, rank, rank))
        Cacc = np.zeros((C * D, rank))
        for st in all_stats:
            L, b = _posterior_precision(st, tv, ubm)
            cov = np.linalg.inv(L)
            w = cov @ b
            ww = cov + np.outer(w, w)
            A += st.N[:, None, None] * ww[None]
            Cacc += np.outer(st.F.reshape(-1), w)
        T = np.empty_like(tv.T)
        for c in range(C):
            rows = slice(c * D, (c + 1) * D)
            T[rows] = np.linalg.solve(A[c].T, Cacc[rows].T).T
        tv = TMatrixModel(T)
        trace.append(tv_objective(all_stats, tv, ubm))
    return TvFit(tv, trace)


# -- file ingest -----------------------------------------------------------------------------

def _read_jsonl(path, key):
    out = {}
    try:
        fh = open(path, encoding="utf-8")
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from e
    with fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as e:
                raise ParseError(f"invalid JSON: {e.msg}", lineno) from None
            if not isinstance(doc, dict) or "utt" not in doc or key not in doc:
                raise ParseError(f"expected an object with 'utt' and {key!r}", lineno)
            try:
                mat = np.asarray(doc[key], dtype=np.float64)
            except (TypeError, ValueError):
                raise ParseError(f"{key} must be a numeric matrix", lineno) from None
            if mat.size == 0:
                mat = mat.reshape(0, 0)
            if mat.ndim != 2:
                raise ParseError(f"{key} must be a list of equal-length rows", lineno)
            if not np.all(np.isfinite(mat)):
                raise ParseError(f"{key} contains non-finite values", lineno)
            utt = str(doc["utt"])
            if utt in out:
                raise ParseError(f"duplicate utterance id {utt!r}", lineno)
            out[utt] = (mat, lineno)
    return out


def read_frames(path):
    """Frame-feature JSON Lines: ``{"utt": id, "frames": [[...], ...]}`` per line."""
    return {utt: mat for utt, (mat, _) in _read_jsonl(path, "frames").items()}


def dnn_posterior_ingest(path):
    """Posterior JSON Lines to ``{utt: (T, S) matrix}`` with rows renormalized to 1.

    Negative entries and all-zero rows are rejected with the line number.
    """
    out = {}
    for utt, (mat, lineno) in _read_jsonl(path, "posteriors").items():
        if np.any(mat < 0):
            raise ParseError(f"negative posterior in utterance {utt!r}", lineno)
        sums = mat.sum(axis=1, keepdims=True)
        if np.any(sums <= 0):
            raise ParseError(f"all-zero posterior row in utterance {utt!r}", lineno)
        out[utt] = mat / sums
    return out


def read_state_map(path, n_phones=None) -> StateMap:
    ids = []
    try:
        lines = open(path, encoding="utf-8").read().splitlines()
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from e
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            ids.append(int(line.strip()))
        except ValueError:
            raise ParseError(f"state map entry {line.strip()!r} is not an integer", lineno) from None
    if n_phones is None:
        n_phones = max(ids) + 1 if ids else 0
    return StateMap(np.array(ids, dtype=np.int64), n_phones)


def save_json(obj, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj.to_dict(), fh)
        fh.write("\n")


def load_ubm(path) -> Ubm:
    with open(path, encoding="utf-8") as fh:
        return Ubm.from_dict(json.load(fh))


def load_tv(path) -> TMatrixModel:
    with open(path, encoding="utf-8") as fh:
        return TMatrixModel.from_dict(json.load(fh))
