"""Utterance-level audio features on simulated frames: a UBM and total
variability model fitted from scratch, i-vectors for each utterance, and
phoneme statistics from simulated state posteriors.

    python demos/audio_features.py
"""

import numpy as np

from rtnlab import audiofeat as af


def simulate(rng, n_utts=40, frames=60, dim=4, rank=2):
    T = rng.normal(size=(dim, rank))
    utts, truth = [], []
    for _ in range(n_utts):
        w = rng.normal(size=rank)
        centers = np.array([[-2.0] * dim, [2.0] * dim]) + T @ w
        pick = rng.integers(0, 2, size=frames)
        utts.append(centers[pick] + 0.5 * rng.normal(size=(frames, dim)))
        truth.append(w)
    return utts, np.array(truth)


def run():
    rng = np.random.default_rng(0)
    utts, truth = simulate(rng)
    fit = af.ubm_fit(np.vstack(utts), n_components=2, iters=15, seed=0)
    print(f"UBM total log-likelihood: {fit.loglik[0]:.3f} -> {fit.loglik[-1]:.3f}")
    stats = [af.bw_stats(af.gmm_posteriors(fit.ubm, x), x, fit.ubm) for x in utts]
    tv = af.tv_train(stats, fit.ubm, rank=2, iters=10, seed=0)
    print(f"total variability objective: {tv.objective[0]:.1f} -> {tv.objective[-1]:.1f}")
    ivecs = np.array([af.extract_ivector(s, tv.model, fit.ubm) for s in stats])
    # i-vectors recover the planted utterance factors up to a linear map
    coef, *_ = np.linalg.lstsq(np.c_[ivecs, np.ones(len(ivecs))], truth, rcond=None)
    resid = truth - np.c_[ivecs, np.ones(len(ivecs))] @ coef
    print(f"variance of planted factors explained by i-vectors: {1 - resid.var() / truth.var():.3f}")

    smap = af.StateMap(rng.integers(0, 58, size=300), 58)
    P = rng.dirichlet(np.full(300, 0.1), size=50)
    feats = af.phoneme_features(P, smap)
    print(f"phoneme feature length for 58 monophones: {feats.size}")


if __name__ == "__main__":
    run()
