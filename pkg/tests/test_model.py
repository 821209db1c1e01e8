import numpy as np
import pytest

from bornovit import tensor as T
from bornovit.errors import ConfigError, ShapeError
from bornovit.model import (ModelConfig, ViTParams, adapt_head, forward, init_params, parameter_shapes,
                            patch_embed)

from oracles import central_difference, naive_patch_embed, rel_error


def test_default_config_geometry():
    cfg = ModelConfig()
    assert cfg.num_patches == 196
    assert cfg.num_tokens == 197
    assert cfg.head_dim == 64
    assert cfg.mlp_hidden_dim == 2 * cfg.embed_dim


@pytest.mark.parametrize("bad", [
    dict(image_size=225), dict(embed_dim=127), dict(num_classes=0), dict(dropout_p=1.0), dict(depth=-1),
])
def test_invalid_config_rejected(bad):
    with pytest.raises(ConfigError):
        ModelConfig(**bad)


def test_init_is_deterministic_and_seed_sensitive():
    a, b = init_params(ModelConfig(), 3), init_params(ModelConfig(), 3)
    c = init_params(ModelConfig(), 4)
    for name in a:
        assert a[name].data.tobytes() == b[name].data.tobytes()
    assert any(not np.array_equal(a[n].data, c[n].data) for n in a)


def test_init_parameter_count_matches_published_total():
    assert init_params(ModelConfig(num_classes=10)).num_parameters() == 653_706


def test_init_scheme():
    p = init_params(ModelConfig(), 0)
    assert np.all(p["blocks.0.ln1_gamma"].data == 1) and np.all(p["blocks.0.ln1_beta"].data == 0)
    assert np.all(p["head_bias"].data == 0) and np.all(p["blocks.1.fc1_bias"].data == 0)
    assert np.abs(p["pos_embedding"].data).max() <= 0.04 + 1e-7
    assert 0.015 < p["pos_embedding"].data.std() < 0.02
    limit = np.sqrt(6 / (128 + 384))
    w = p["blocks.0.qkv_weight"].data
    assert np.abs(w).max() <= limit and np.abs(w).max() > 0.9 * limit


def test_params_validate_shapes():
    cfg = ModelConfig(depth=1)
    arrays = {n: np.zeros(s, np.float32) for n, s in parameter_shapes(cfg).items()}
    arrays["head_bias"] = np.zeros(11, np.float32)
    with pytest.raises(ShapeError, match="head_bias"):
        ViTParams.from_arrays(cfg, arrays)


# ---------------------------------------------------------------------------
# patch embedding
# ---------------------------------------------------------------------------

def test_patch_embed_of_zero_image_is_bias():
    p = init_params(ModelConfig(), 0)
    p["patch_proj_bias"].data = np.arange(128, dtype=np.float32)
    out = patch_embed(p, np.zeros((1, 3, 224, 224), np.float32)).data
    assert out.shape == (1, 196, 128)
    np.testing.assert_array_equal(out[0], np.tile(np.arange(128, dtype=np.float32), (196, 1)))


def test_patch_embed_locality():
    p = init_params(ModelConfig(), 0)
    img = np.zeros((1, 3, 224, 224), np.float32)
    img[0, 1, 37, 200] = 1.0  # patch row 2, column 12
    out = patch_embed(p, img).data[0]
    differs = np.flatnonzero(np.any(out != p["patch_proj_bias"].data, axis=1))
    assert differs.tolist() == [2 * 14 + 12]


def test_patch_embed_matches_naive_loop(rng):
    p = init_params(ModelConfig(), 1)
    img = rng.random((2, 3, 224, 224)).astype(np.float32)
    expected = naive_patch_embed(img.astype(np.float64), p["patch_proj_weight"].data.astype(np.float64),
                                 p["patch_proj_bias"].data.astype(np.float64), 16)
    np.testing.assert_allclose(patch_embed(p, img).data, expected, atol=1e-5)


def test_patch_embed_wrong_size():
    p = init_params(ModelConfig(), 0)
    with pytest.raises(ShapeError):
        patch_embed(p, np.zeros((1, 3, 200, 200), np.float32))


# ---------------------------------------------------------------------------
# forward
# ---------------------------------------------------------------------------

def test_forward_shapes_follow_layer_table(rng):
    p = init_params(ModelConfig(num_classes=10), 0)
    x = rng.random((2, 3, 224, 224)).astype(np.float32)
    assert patch_embed(p, x).shape == (2, 196, 128)
    logits, trace = forward(p, x, trace=True)
    assert logits.shape == (2, 10)
    assert len(trace.tokens) == 4 and all(t.shape == (2, 197, 128) for t in trace.tokens)
    assert all(a.shape == (2, 2, 197, 197) for a in trace.attention)
    for a in trace.attention:
        assert a.min() >= 0
        np.testing.assert_allclose(a.sum(axis=-1), 1.0, atol=1e-5)


def test_eval_forward_is_pure(small_config, rng):
    p = init_params(small_config, 0)
    x = rng.random((3, 3, 32, 32)).astype(np.float32)
    assert forward(p, x).data.tobytes() == forward(p, x).data.tobytes()


def test_train_mode_uses_dropout(small_config, rng):
    p = init_params(small_config, 0)
    x = rng.random((3, 3, 32, 32)).astype(np.float32)
    a = forward(p, x, mode="train", rng=np.random.default_rng(0)).data
    b = forward(p, x, mode="eval").data
    assert not np.array_equal(a, b)


def test_permutation_equivariance(rng):
    """Permuting patch tokens together with their positional rows leaves logits unchanged."""
    cfg = ModelConfig(image_size=32, patch_size=8, embed_dim=32, depth=2, num_heads=2,
                      mlp_hidden_dim=64, num_classes=4)
    p = init_params(cfg, 0).astype(np.float64)
    for _, t in p.items():
        t.data = t.data + rng.normal(0, 0.05, t.shape)
    x = rng.random((2, 3, 32, 32))
    perm = rng.permutation(cfg.num_patches)

    def run(params, permute):
        tokens = patch_embed(params, x)
        pos = params["pos_embedding"].data
        if permute:
            tokens = T.Tensor(tokens.data[:, perm], dtype=np.float64)
            pos = np.concatenate([pos[:, :1], pos[:, 1:][:, perm]], axis=1)
        # run the rest of the network by hand with the (possibly permuted) inputs
        B = x.shape[0]
        cls = np.broadcast_to(params["cls_token"].data, (B, 1, cfg.embed_dim))
        seq = T.Tensor(np.concatenate([cls, tokens.data], axis=1) + pos, dtype=np.float64)
        from bornovit.model import transformer_block
        for b in range(cfg.depth):
            seq = transformer_block(params, b, seq, False, None, None)
        seq = T.layer_norm(seq, params["final_ln_gamma"], params["final_ln_beta"], 1e-6)
        return seq.data[:, 0] @ params["head_weight"].data.T + params["head_bias"].data

    np.testing.assert_allclose(run(p, True), run(p, False), atol=1e-4)
    np.testing.assert_allclose(run(p, False), forward(p, x).data, atol=1e-10)


def test_head_is_linear(small_config, rng):
    p = init_params(small_config, 0)
    x = rng.random((2, 3, 32, 32)).astype(np.float32)
    base = forward(p, x).data
    p["head_bias"].data = rng.normal(size=3).astype(np.float32)
    base = forward(p, x).data
    p["head_weight"].data = p["head_weight"].data * 2
    p["head_bias"].data = p["head_bias"].data * 2
    np.testing.assert_allclose(forward(p, x).data, 2 * base, rtol=1e-6, atol=1e-7)


def test_full_size_gradients_match_finite_differences(rng):
    cfg = ModelConfig(dropout_p=0.0)
    p = init_params(cfg, 0).astype(np.float64)
    for _, t in p.items():
        t.data = t.data + rng.normal(0, 0.02, t.shape)
    x = rng.random((1, 3, 224, 224))
    label = [3]
    T.backward(T.cross_entropy(forward(p, x, mode="train"), label))

    def loss():
        with T.no_grad():
            return float(T.cross_entropy(forward(p, x), label).data)

    names = list(p)
    picks = [(names[i], None) for i in rng.integers(0, len(names), size=50)]
    for name, _ in picks:
        t = p[name]
        i = int(rng.integers(t.data.size))
        num = central_difference(loss, t.data, i)
        assert rel_error(t.grad.reshape(-1)[i], num) < 1e-2, name


# ---------------------------------------------------------------------------
# head adaptation
# ---------------------------------------------------------------------------

def test_adapt_head_copies_backbone():
    src = init_params(ModelConfig(num_classes=122), 0)
    dst = adapt_head(src, 84, seed=9)
    assert dst["head_weight"].shape == (84, 128) and dst["head_bias"].shape == (84,)
    for name in src:
        if not name.startswith("head_"):
            assert dst[name].data.tobytes() == src[name].data.tobytes()
            assert dst[name].data is not src[name].data


def test_adapt_head_same_count_only_head_changes():
    src = init_params(ModelConfig(), 0)
    dst = adapt_head(src, 10, seed=5)
    changed = [n for n in src if not np.array_equal(src[n].data, dst[n].data)]
    assert changed == ["head_weight"]  # zero-initialized bias stays zero


def test_adapt_head_parameter_count():
    dst = adapt_head(init_params(ModelConfig(num_classes=10)), 84)
    assert dst.num_parameters() == 653_706 - 1_290 + (128 * 84 + 84) == 663_252


def test_adapt_head_rejects_zero_classes():
    with pytest.raises(ConfigError):
        adapt_head(init_params(ModelConfig(depth=0)), 0)
