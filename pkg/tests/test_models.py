import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rtnlab import ndtensor as nd
from rtnlab.dataio import SegmentRecord, VideoSequence
from rtnlab.errors import CheckpointError, ConfigError, DataError
from rtnlab.models import (CHECKPOINT_VERSION, VARIANT_MODALITIES, ModelConfig, build_model,
                           discretize_sentiment, forward, forward_batch, load_checkpoint,
                           predict_arrays, save_checkpoint)

IN_DIMS = {"audio": 3, "video": 2, "text": 4}
VARIANTS = sorted(VARIANT_MODALITIES)


def small_cfg(variant="rtn", seed=0, embed=2):
    return ModelConfig(variant=variant, modality_input_dims=dict(IN_DIMS),
                       modality_embed_dims={m: embed for m in IN_DIMS},
                       lstm_hidden=3, head_hidden=4, seed=seed)


def video(rng, L, vid="v"):
    return VideoSequence(vid, [SegmentRecord(vid, t, rng.normal(size=3), rng.normal(size=2),
                                             rng.normal(size=4), 0.0, np.zeros(6))
                               for t in range(L)])


class TestBuild:
    def test_deterministic(self):
        a, b = build_model(small_cfg(seed=7)), build_model(small_cfg(seed=7))
        assert np.array_equal(a.param_vector(), b.param_vector())

    def test_seed_matters(self):
        assert not np.array_equal(build_model(small_cfg(seed=1)).param_vector(),
                                  build_model(small_cfg(seed=2)).param_vector())

    def test_rtn_fused_size(self):
        cfg = ModelConfig(modality_input_dims=dict(IN_DIMS), modality_embed_dims={m: 4 for m in IN_DIMS})
        assert cfg.segment_feature_size() == 125
        assert build_model(cfg).params["lstm.W_i"].shape[1] == 125

    def test_default_sizes(self):
        cfg = ModelConfig(modality_input_dims=dict(IN_DIMS))
        assert cfg.segment_feature_size() == 729 and (cfg.lstm_hidden, cfg.head_hidden) == (32, 32)

    def test_uni_text_needs_text_dim(self):
        with pytest.raises(ConfigError, match="text"):
            build_model(ModelConfig(variant="uni_text", modality_input_dims={"audio": 3}))

    def test_uni_text_ignores_other_modalities(self):
        m = build_model(ModelConfig(variant="uni_text", modality_input_dims={"text": 4}))
        assert not any(k.startswith(("enc.audio", "enc.video")) for k in m.params)

    def test_unknown_variant(self):
        with pytest.raises(ConfigError):
            build_model(small_cfg(variant="svm"))

    def test_tfn_has_no_recurrence(self):
        assert not any(k.startswith("lstm.") for k in build_model(small_cfg("tfn")).params)

    @pytest.mark.parametrize("bad", [0, -1, 2.5])
    def test_bad_sizes(self, bad):
        cfg = small_cfg()
        cfg.lstm_hidden = bad
        with pytest.raises(ConfigError):
            cfg.validate()


class TestForward:
    @pytest.mark.parametrize("variant", VARIANTS)
    def test_zero_parameters(self, variant, rng):
        model = build_model(small_cfg(variant)).zero_()
        preds = forward(model, video(rng, 4))
        assert all(p.sentiment == 0.0 and p.emotions == (0.0,) * 6 for p in preds)

    @pytest.mark.parametrize("variant", VARIANTS)
    @pytest.mark.parametrize("L", [1, 3, 7])
    def test_one_prediction_per_segment(self, variant, L, rng):
        preds = forward(build_model(small_cfg(variant, seed=3)), video(rng, L))
        assert len(preds) == L and all(np.isfinite(p.sentiment) and len(p.emotions) == 6 for p in preds)

    @pytest.mark.parametrize("variant", VARIANTS)
    def test_videos_independent(self, variant, rng):
        model = build_model(small_cfg(variant, seed=4))
        a, b = video(rng, 3, "a"), video(rng, 3, "b")
        s1, e1 = forward_batch(model, [a, b])
        s2, e2 = forward_batch(model, [b, a])
        np.testing.assert_allclose(s1.data, s2.data[::-1], atol=1e-14)
        np.testing.assert_allclose(e1.data, e2.data[::-1], atol=1e-14)

    def test_batch_matches_single(self, rng):
        model = build_model(small_cfg(seed=5))
        vids = [video(rng, 3, "a"), video(rng, 5, "b"), video(rng, 3, "c")]
        sent, _ = predict_arrays(model, vids)
        single = [p.sentiment for v in vids for p in forward(model, v)]
        np.testing.assert_allclose(sent, single, atol=1e-13)

    def test_tfn_segment_permutation_equivariant(self, rng):
        model = build_model(small_cfg("tfn", seed=6))
        v = video(rng, 5)
        perm = rng.permutation(5)
        shuffled = VideoSequence("v", [v.segments[i] for i in perm])
        a = [p.sentiment for p in forward(model, v)]
        b = [p.sentiment for p in forward(model, shuffled)]
        np.testing.assert_allclose(np.array(a)[perm], b, atol=1e-14)

    def test_rtn_not_permutation_equivariant(self, rng):
        model = build_model(small_cfg("rtn", seed=6))
        v = video(rng, 5)
        perm = np.array([4, 3, 2, 1, 0])
        shuffled = VideoSequence("v", [v.segments[i] for i in perm])
        a = np.array([p.sentiment for p in forward(model, v)])[perm]
        b = np.array([p.sentiment for p in forward(model, shuffled)])
        assert np.max(np.abs(a - b)) > 1e-6

    def test_missing_modality_names_segment(self, rng):
        v = video(rng, 3)
        v.segments[2].text = np.zeros(0)
        with pytest.raises(DataError, match="segment 2"):
            forward(build_model(small_cfg()), v)

    def test_tfn_matches_manual_pipeline(self, rng):
        model = build_model(small_cfg("tfn", seed=8))
        v = video(rng, 1)
        s = v.segments[0]
        p = model.params
        z = {m: np.tanh(p[f"enc.{m}.weight"] @ s.features(m) + p[f"enc.{m}.bias"]) for m in IN_DIMS}
        za, zv, zt = (np.append(z[m], 1.0) for m in ("audio", "video", "text"))
        fused = np.einsum("i,j,k->ijk", za, zv, zt).reshape(-1)
        h = np.tanh(p["head.hidden.weight"] @ fused + p["head.hidden.bias"])
        want = p["head.sentiment.weight"] @ h + p["head.sentiment.bias"]
        assert forward(model, v)[0].sentiment == pytest.approx(want[0], abs=1e-13)

    def test_rtn_gradient_check(self, rng):
        model = build_model(small_cfg("rtn", seed=9))
        v = video(rng, 2)
        names = list(model.params)

        def fn(x):
            off, P = 0, {}
            for k in names:
                n = model.params[k].size
                P[k] = nd.reshape(x[off:off + n], model.params[k].shape)
                off += n
            s, e = forward_batch(model, [v], P)
            return nd.tensor_sum(s) + nd.tensor_sum(e * e)

        assert nd.check_gradients(fn, model.param_vector()) < 1e-4


class TestDiscretize:
    @pytest.mark.parametrize("y,expected", [(2.4, ("pos", 5)), (0.0, ("neg", 3)), (-3.7, ("neg", 0)),
                                            (0.5, ("pos", 4)), (-0.5, ("neg", 2)), (-0.0, ("neg", 3)),
                                            (2.5, ("pos", 6)), (1e-9, ("pos", 3))])
    def test_examples(self, y, expected):
        assert discretize_sentiment(y) == expected

    @given(st.floats(-10, 10), st.floats(-10, 10))
    def test_monotone(self, a, b):
        lo, hi = min(a, b), max(a, b)
        assert discretize_sentiment(lo)[1] <= discretize_sentiment(hi)[1]

    @given(st.floats(-3.5, 10))
    def test_shift_by_seven_only_clamps(self, y):
        # every y >= -3.5 lands in class 0 or above, so y + 7 always clamps to the top class
        assert discretize_sentiment(y + 7)[1] == 6
        if y <= 3.5:
            assert discretize_sentiment(y - 7)[1] == 0


class TestCheckpoint:
    @pytest.mark.parametrize("variant", VARIANTS)
    def test_round_trip(self, tmp_path, variant):
        model = build_model(small_cfg(variant, seed=11))
        save_checkpoint(model, tmp_path / "m.json")
        back = load_checkpoint(tmp_path / "m.json")
        assert back.cfg == model.cfg
        assert np.array_equal(back.param_vector(), model.param_vector())

    def test_version_field(self, tmp_path):
        save_checkpoint(build_model(small_cfg()), tmp_path / "m.json")
        doc = json.loads((tmp_path / "m.json").read_text())
        assert doc["version"] == CHECKPOINT_VERSION == "rtnlab-ckpt-1"
        assert all({"name", "shape", "values"} <= set(p) for p in doc["params"])

    def test_wrong_version(self, tmp_path):
        save_checkpoint(build_model(small_cfg()), tmp_path / "m.json")
        doc = json.loads((tmp_path / "m.json").read_text())
        doc["version"] = "other"
        (tmp_path / "m.json").write_text(json.dumps(doc))
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "m.json")

    def test_shape_mismatch(self, tmp_path):
        save_checkpoint(build_model(small_cfg()), tmp_path / "m.json")
        doc = json.loads((tmp_path / "m.json").read_text())
        doc["config"]["lstm_hidden"] = 5
        (tmp_path / "m.json").write_text(json.dumps(doc))
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "m.json")

    def test_unreadable(self, tmp_path):
        (tmp_path / "m.json").write_text("{not json")
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "m.json")
