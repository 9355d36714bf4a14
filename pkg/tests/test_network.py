import math

import numpy as np
import pytest

from memvad.errors import CheckpointError, ConfigError, DimensionError
from memvad.features import FeatureRecord
from memvad.network import (
    NetworkSpec,
    encode_fuse,
    forward,
    init_params,
    load_checkpoint,
    memory_read,
    save_checkpoint,
)

SPEC = NetworkSpec.small()


def make_record(rng, spec, dtype=np.float64):
    return FeatureRecord(
        frame_index=0,
        object_id=0,
        bbox=(0.0, 0.0, 10.0, 10.0),
        x_app=rng.standard_normal(spec.d_app).astype(dtype),
        x_mag=np.abs(rng.standard_normal(spec.d_mo)).astype(dtype),
        x_ang=rng.uniform(0, 1, spec.d_mo).astype(dtype),
    )


# --- independent straight-line re-implementation used as the oracle ----


def oracle_stack(stack, x, relu_except_last=True):
    a = np.array(x, dtype=np.float64)
    n = len(stack.weights)
    for i, (w, b) in enumerate(zip(stack.weights, stack.biases)):
        z = np.array(
            [sum(w[r, c] * a[c] for c in range(w.shape[1])) + b[r] for r in range(w.shape[0])]
        )
        a = np.where(z > 0, z, 0.0) if i < n - 1 else z
    return a


def oracle_encode_fuse(params, rec):
    e_app = oracle_stack(params.enc_app, rec.x_app)
    e_mag = oracle_stack(params.enc_mag, rec.x_mag)
    e_ang = oracle_stack(params.enc_ang, rec.x_ang)
    return oracle_stack(params.fusion, np.concatenate([e_app, e_mag, e_ang]))


def oracle_attention(memory, h):
    # plain softmax, no max subtraction
    logits = [sum(h[c] * memory[i, c] for c in range(len(h))) for i in range(len(memory))]
    exps = [math.exp(v) for v in logits]
    total = sum(exps)
    w = np.array([e / total for e in exps])
    k = int(np.argmax(w))
    c = np.zeros(memory.shape[1])
    for i in range(len(memory)):
        c += w[i] * memory[i]
    return w, k, c


def oracle_forward(params, rec):
    h = oracle_encode_fuse(params, rec)
    w, k, c = oracle_attention(params.memory, h)
    z = np.concatenate([c, h])
    xhat = oracle_stack(params.decoder, z)
    d_app, d_mo = params.spec.d_app, params.spec.d_mo
    return h, w, k, c, xhat[:d_app], xhat[d_app : d_app + d_mo], xhat[d_app + d_mo :]


# --- init ---------------------------------------------------------------


def test_init_deterministic():
    a = init_params(SPEC, seed=4)
    b = init_params(SPEC, seed=4)
    for (name, ta), (_, tb) in zip(a.tensors(), b.tensors()):
        assert np.array_equal(ta, tb), name


def test_init_bounds_and_zero_biases():
    params = init_params(SPEC, seed=0)
    for name in ("enc_app", "enc_mag", "enc_ang", "fusion", "decoder"):
        stack = params.stack(name)
        for w, b in zip(stack.weights, stack.biases):
            bound = 1.0 / np.sqrt(w.shape[1])
            assert np.abs(w).max() <= bound
            assert np.all(b == 0.0)
    assert np.abs(params.memory).max() <= 1.0 / np.sqrt(SPEC.d_h)


def test_memory_shape_forty_items():
    spec = NetworkSpec.default(d_app=32, d_mo=16, d_h=8, n_items=40)
    params = init_params(spec, seed=1)
    assert params.memory.shape == (40, 8)


def test_spec_validation():
    with pytest.raises(ConfigError):
        NetworkSpec(
            d_app=4,
            d_mo=2,
            d_h=3,
            n_items=2,
            app_widths=(4, 3, 3, 3, 2),
            mag_widths=(2, 2, 2, 2, 2),
            ang_widths=(2, 2, 2, 2, 2),
            fusion_widths=(5, 4, 3),  # 2+2+2 != 5
            decoder_widths=(6, 10),
        )
    with pytest.raises(ConfigError):
        NetworkSpec.default(d_h=0)


# --- encode_fuse ---------------------------------------------------------


def test_encode_fuse_zero_params_gives_zero():
    params = init_params(SPEC, seed=0, dtype=np.float64).zeros_like()
    rec = make_record(np.random.default_rng(0), SPEC)
    assert np.all(encode_fuse(params, rec) == 0.0)


def test_encode_fuse_deterministic():
    params = init_params(SPEC, seed=1, dtype=np.float64)
    rec = make_record(np.random.default_rng(1), SPEC)
    h1 = encode_fuse(params, rec)
    h2 = encode_fuse(params, rec)
    assert np.array_equal(h1, h2)


def test_encode_fuse_matches_oracle():
    for seed in range(5):
        params = init_params(SPEC, seed=seed, dtype=np.float64)
        rec = make_record(np.random.default_rng(seed + 100), SPEC)
        h = encode_fuse(params, rec)
        np.testing.assert_allclose(h, oracle_encode_fuse(params, rec), rtol=1e-12, atol=1e-14)


# --- memory_read ---------------------------------------------------------


def test_memory_read_zero_query_uniform():
    rng = np.random.default_rng(3)
    memory = rng.standard_normal((6, 4))
    w, k, c = memory_read(memory, np.zeros(4))
    np.testing.assert_allclose(w, np.full(6, 1 / 6), atol=1e-12)
    assert k == 0  # uniform ties resolve to the lowest index
    np.testing.assert_allclose(c, memory.mean(axis=0), atol=1e-12)


def test_memory_read_saturation():
    rng = np.random.default_rng(4)
    h = rng.standard_normal(4)
    h /= np.linalg.norm(h)
    # one row hugely aligned with h, others orthogonal to it
    basis = np.linalg.qr(np.concatenate([h[:, None], rng.standard_normal((4, 3))], axis=1))[0]
    memory = np.vstack([basis[:, 1], 1000.0 * h, basis[:, 2]])
    w, k, c = memory_read(memory, h)
    assert k == 1
    assert w[1] > 1.0 - 1e-9
    np.testing.assert_allclose(c, memory[1], rtol=1e-6)


def test_memory_read_hand_computed():
    memory = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    h = np.array([1.0, 0.0])
    w, k, c = memory_read(memory, h)
    e = math.e
    denom = 2 * e + 1
    np.testing.assert_allclose(w, [e / denom, 1 / denom, e / denom], rtol=1e-12)
    assert k == 0  # w[0] == w[2], tie goes to the lowest index
    np.testing.assert_allclose(c, [2 * e / denom, (1 + e) / denom], rtol=1e-12)


def test_memory_read_matches_plain_softmax_oracle():
    rng = np.random.default_rng(5)
    for _ in range(20):
        memory = rng.standard_normal((5, 3))
        h = rng.standard_normal(3)
        w, k, c = memory_read(memory, h)
        ow, ok, oc = oracle_attention(memory, h)
        np.testing.assert_allclose(w, ow, rtol=1e-12)
        assert k == ok
        np.testing.assert_allclose(c, oc, rtol=1e-12)


def test_softmax_normalization_large_norm():
    rng = np.random.default_rng(6)
    for _ in range(200):
        memory = rng.standard_normal((8, 5))
        h = rng.standard_normal(5) * rng.uniform(0.01, 1e3)
        w, _, _ = memory_read(memory, h)
        assert abs(w.sum() - 1.0) < 1e-6
        assert np.all(w >= 0)


def test_softmax_shift_invariance():
    # adding a constant to every dot product h.m_i leaves w unchanged
    rng = np.random.default_rng(7)
    for _ in range(100):
        memory = rng.standard_normal((6, 4))
        h = rng.standard_normal(4)
        delta = rng.uniform(-5, 5)
        shifted = memory + delta * h / (h @ h)
        w1, _, _ = memory_read(memory, h)
        w2, _, _ = memory_read(shifted, h)
        np.testing.assert_allclose(w1, w2, atol=1e-9)


# --- forward -------------------------------------------------------------


def test_forward_zero_params():
    params = init_params(SPEC, seed=0, dtype=np.float64).zeros_like()
    rec = make_record(np.random.default_rng(8), SPEC)
    trace = forward(params, rec)
    assert np.all(trace.xhat_app == 0.0)
    assert np.all(trace.xhat_mag == 0.0)
    assert np.all(trace.xhat_ang == 0.0)
    np.testing.assert_allclose(trace.w, np.full(SPEC.n_items, 1 / SPEC.n_items))


def test_forward_pure_function():
    params = init_params(SPEC, seed=2, dtype=np.float64)
    rec = make_record(np.random.default_rng(9), SPEC)
    t1 = forward(params, rec)
    t2 = forward(params, rec)
    assert np.array_equal(t1.h, t2.h)
    assert np.array_equal(t1.xhat_app, t2.xhat_app)
    assert t1.k == t2.k


def test_forward_matches_oracle():
    for seed in range(5):
        params = init_params(SPEC, seed=seed, dtype=np.float64)
        rec = make_record(np.random.default_rng(seed + 50), SPEC)
        trace = forward(params, rec)
        h, w, k, c, xa, xm, xg = oracle_forward(params, rec)
        np.testing.assert_allclose(trace.h, h, rtol=1e-12, atol=1e-14)
        np.testing.assert_allclose(trace.w, w, rtol=1e-9)
        assert trace.k == k
        np.testing.assert_allclose(trace.c, c, rtol=1e-9)
        np.testing.assert_allclose(trace.xhat_app, xa, rtol=1e-9, atol=1e-12)
        np.testing.assert_allclose(trace.xhat_mag, xm, rtol=1e-9, atol=1e-12)
        np.testing.assert_allclose(trace.xhat_ang, xg, rtol=1e-9, atol=1e-12)
        assert abs(trace.w.sum() - 1.0) < 1e-6
        assert trace.k == int(np.argmax(trace.w))


def test_forward_dimension_mismatch():
    params = init_params(SPEC, seed=0)
    rec = make_record(np.random.default_rng(10), SPEC)
    rec.x_app = rec.x_app[:-1]
    with pytest.raises(DimensionError):
        forward(params, rec)


# --- checkpoint ----------------------------------------------------------


def test_checkpoint_roundtrip(tmp_path):
    params = init_params(SPEC, seed=13, dtype=np.float32)
    path = tmp_path / "model.omc1"
    save_checkpoint(params, 1.25, path)
    loaded, loss = load_checkpoint(path)
    assert loss == 1.25
    assert loaded.spec == params.spec
    for (name, ta), (_, tb) in zip(params.tensors(), loaded.tensors()):
        assert np.array_equal(ta, tb), name
    # saving what was loaded reproduces the file bit for bit
    path2 = tmp_path / "model2.omc1"
    save_checkpoint(loaded, loss, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "model.omc1"
    save_checkpoint(init_params(SPEC, seed=0), 0.0, path)
    blob = bytearray(path.read_bytes())
    blob[:4] = b"NOPE"
    path.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_checkpoint_truncated(tmp_path):
    path = tmp_path / "model.omc1"
    save_checkpoint(init_params(SPEC, seed=0), 0.0, path)
    blob = path.read_bytes()
    path.write_bytes(blob[: len(blob) // 2])
    with pytest.raises(CheckpointError):
        load_checkpoint(path)
