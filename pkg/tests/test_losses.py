import math

import numpy as np
import pytest

from memvad.errors import ConfigError, NumericError
from memvad.features import FeatureRecord
from memvad.losses import (
    Batch,
    BatchAssignment,
    LossWeights,
    batch_loss_terms,
    loss_comp,
    loss_ole,
    loss_rec,
    loss_triplet,
    total_loss_and_grads,
)
from memvad.network import ForwardTrace, NetworkSpec, init_params, memory_read

SPEC = NetworkSpec.small()


def make_trace(xhat_app, xhat_mag, xhat_ang):
    d_h = 2
    return ForwardTrace(
        h=np.zeros(d_h),
        w=np.array([1.0]),
        k=0,
        c=np.zeros(d_h),
        z=np.zeros(2 * d_h),
        xhat_app=np.asarray(xhat_app, dtype=np.float64),
        xhat_mag=np.asarray(xhat_mag, dtype=np.float64),
        xhat_ang=np.asarray(xhat_ang, dtype=np.float64),
        pre_activations={},
    )


def make_record(x_app, x_mag, x_ang):
    return FeatureRecord(
        frame_index=0,
        object_id=0,
        bbox=(0.0, 0.0, 1.0, 1.0),
        x_app=np.asarray(x_app, dtype=np.float64),
        x_mag=np.asarray(x_mag, dtype=np.float64),
        x_ang=np.asarray(x_ang, dtype=np.float64),
    )


def nuclear_norm_oracle(mat):
    return float(np.linalg.svd(np.asarray(mat, dtype=np.float64), compute_uv=False).sum())


# --- reconstruction loss --------------------------------------------------


def test_rec_zero_at_perfect_reconstruction():
    rng = np.random.default_rng(0)
    x_app, x_mag, x_ang = rng.standard_normal(5), rng.standard_normal(3), rng.uniform(0, 1, 3)
    rec = make_record(x_app, x_mag, x_ang)
    trace = make_trace(x_app, x_mag, x_ang)
    assert abs(loss_rec(rec, trace, lambda_cos=0.1)) < 1e-9


def test_rec_negated_appearance():
    rng = np.random.default_rng(1)
    x_app = rng.standard_normal(6)
    x_mag, x_ang = rng.standard_normal(4), rng.uniform(0, 1, 4)
    rec = make_record(x_app, x_mag, x_ang)
    trace = make_trace(-x_app, x_mag, x_ang)
    expected = 2.0 * math.sqrt(sum(float(v) ** 2 for v in x_app)) + 0.1 * 2.0
    assert abs(loss_rec(rec, trace, lambda_cos=0.1) - expected) < 1e-9


def test_rec_matches_scalar_formula():
    rng = np.random.default_rng(2)
    for _ in range(20):
        x_app, xhat_app = rng.standard_normal(5), rng.standard_normal(5)
        x_mag, xhat_mag = rng.standard_normal(3), rng.standard_normal(3)
        x_ang, xhat_ang = rng.uniform(0, 1, 3), rng.standard_normal(3)
        lam = rng.uniform(0, 1)
        rec = make_record(x_app, x_mag, x_ang)
        trace = make_trace(xhat_app, xhat_mag, xhat_ang)
        x_mo = np.concatenate([x_mag, x_ang])
        xhat_mo = np.concatenate([xhat_mag, xhat_ang])
        cos = float(x_app @ xhat_app) / (
            math.sqrt(float(x_app @ x_app)) * math.sqrt(float(xhat_app @ xhat_app))
        )
        expected = (
            math.sqrt(float((x_app - xhat_app) @ (x_app - xhat_app)))
            + math.sqrt(float((x_mo - xhat_mo) @ (x_mo - xhat_mo)))
            + lam * (1.0 - cos)
        )
        assert abs(loss_rec(rec, trace, lam) - expected) < 1e-12


def test_rec_zero_norm_guard():
    rng = np.random.default_rng(3)
    x_app = rng.standard_normal(4)
    rec = make_record(x_app, rng.standard_normal(2), rng.uniform(0, 1, 2))
    trace = make_trace(np.zeros(4), rec.x_mag, rec.x_ang)
    # cosine term defined as 0; only the L2 term remains
    expected = math.sqrt(float(x_app @ x_app))
    assert abs(loss_rec(rec, trace, lambda_cos=0.5) - expected) < 1e-12


# --- compactness ----------------------------------------------------------


def test_comp_zero_when_on_items():
    memory = np.array([[1.0, 2.0], [3.0, 4.0]])
    h = memory[[0, 1, 0]]
    assignment = BatchAssignment(nearest=np.array([0, 1, 0]), second=np.array([1, 0, 1]))
    assert loss_comp(h, memory, assignment) == 0.0


def test_comp_three_four_five():
    memory = np.array([[0.0, 0.0]])
    h = np.array([[3.0, 4.0]])
    assignment = BatchAssignment(nearest=np.array([0]), second=np.array([-1]))
    assert abs(loss_comp(h, memory, assignment) - 5.0) < 1e-9


def test_comp_matches_bruteforce():
    rng = np.random.default_rng(4)
    memory = rng.standard_normal((5, 3))
    h = rng.standard_normal((8, 3))
    nearest = np.array([memory_read(memory, row)[1] for row in h])
    assignment = BatchAssignment(nearest=nearest, second=np.zeros(8, dtype=int))
    expected = sum(
        math.sqrt(float((row - memory[k]) @ (row - memory[k])))
        for row, k in zip(h, nearest)
    )
    assert abs(loss_comp(h, memory, assignment) - expected) < 1e-12


# --- triplet ----------------------------------------------------------------


def test_triplet_inactive_hinge():
    memory = np.array([[0.0, 0.0], [10.0, 0.0]])
    h = memory[[0]]
    assignment = BatchAssignment(nearest=np.array([0]), second=np.array([1]))
    # d_pos = 0, d_neg = 100 > margin -> hinge off
    assert loss_triplet(h, memory, assignment, margin=1.0) == 0.0


def test_triplet_equidistant_gives_margin():
    memory = np.array([[1.0, 0.0], [-1.0, 0.0]])
    h = np.array([[0.0, 5.0]])
    assignment = BatchAssignment(nearest=np.array([0]), second=np.array([1]))
    margin = 0.7
    assert abs(loss_triplet(h, memory, assignment, margin) - margin) < 1e-9


def test_triplet_matches_bruteforce_two_nearest():
    rng = np.random.default_rng(5)
    memory = rng.standard_normal((6, 4))
    h = rng.standard_normal((10, 4))
    nearest, second = [], []
    for row in h:
        w, _, _ = memory_read(memory, row)
        order = np.argsort(-w, kind="stable")
        nearest.append(order[0])
        second.append(order[1])
    assignment = BatchAssignment(
        nearest=np.array(nearest), second=np.array(second)
    )
    margin = 1.0
    expected = 0.0
    for row, p, n in zip(h, nearest, second):
        dp = float((row - memory[p]) @ (row - memory[p]))
        dn = float((row - memory[n]) @ (row - memory[n]))
        expected += max(0.0, dp - dn + margin)
    assert abs(loss_triplet(h, memory, assignment, margin) - expected) < 1e-10


def test_triplet_needs_two_items():
    memory = np.array([[0.0, 0.0]])
    h = np.array([[1.0, 1.0]])
    assignment = BatchAssignment(nearest=np.array([0]), second=np.array([-1]))
    with pytest.raises(ConfigError):
        loss_triplet(h, memory, assignment)


# --- low-rank embedding -----------------------------------------------------


def test_ole_single_sample():
    rng = np.random.default_rng(6)
    h = rng.standard_normal(4)
    h = 0.6 * h / np.linalg.norm(h)  # norm <= 1
    assignment = BatchAssignment(nearest=np.array([0]), second=np.array([1]))
    value = loss_ole(h[None, :], assignment, delta=1.0)
    assert abs(value - (1.0 - np.linalg.norm(h))) < 1e-9


def test_ole_single_class_collapse():
    rng = np.random.default_rng(7)
    h = rng.standard_normal((5, 3))
    assignment = BatchAssignment(nearest=np.zeros(5, dtype=int), second=np.ones(5, dtype=int))
    nn = nuclear_norm_oracle(h)
    for delta in (0.5 * nn, 2.0 * nn):
        value = loss_ole(h, assignment, delta=delta)
        assert abs(value - max(0.0, delta - nn)) < 1e-9


def test_ole_orthogonal_classes_block_construction():
    # class 0 lives in the first two coordinates, class 1 in the last two:
    # row spaces are orthogonal so the nuclear norm splits additively
    rng = np.random.default_rng(8)
    h = np.zeros((7, 4))
    h[:4, :2] = rng.standard_normal((4, 2))
    h[4:, 2:] = rng.standard_normal((3, 2))
    assignment = BatchAssignment(
        nearest=np.array([0, 0, 0, 0, 1, 1, 1]), second=np.zeros(7, dtype=int)
    )
    nn_0 = nuclear_norm_oracle(h[:4])
    nn_1 = nuclear_norm_oracle(h[4:])
    assert abs(nuclear_norm_oracle(h) - (nn_0 + nn_1)) < 1e-9
    delta = 1.0
    expected = max(0.0, delta - nn_0) + max(0.0, delta - nn_1)
    assert abs(loss_ole(h, assignment, delta) - expected) < 1e-9


def test_ole_nonnegative_and_permutation_invariant():
    rng = np.random.default_rng(9)
    for _ in range(20):
        h = rng.standard_normal((6, 4))
        nearest = rng.integers(0, 3, 6)
        assignment = BatchAssignment(nearest=nearest, second=np.zeros(6, dtype=int))
        value = loss_ole(h, assignment, delta=1.0)
        assert value >= -1e-9
        perm = rng.permutation(6)
        permuted = BatchAssignment(nearest=nearest[perm], second=np.zeros(6, dtype=int))
        assert abs(loss_ole(h[perm], permuted, delta=1.0) - value) < 1e-8


def test_ole_empty_batch_rejected():
    assignment = BatchAssignment(nearest=np.zeros(0, dtype=int), second=np.zeros(0, dtype=int))
    with pytest.raises(ConfigError):
        loss_ole(np.zeros((0, 3)), assignment, delta=1.0)


# --- total loss and gradients ----------------------------------------------


def make_batch(rng, spec, batch_size=8):
    return Batch(
        x_app=rng.standard_normal((batch_size, spec.d_app)),
        x_mag=np.abs(rng.standard_normal((batch_size, spec.d_mo))),
        x_ang=rng.uniform(0, 1, (batch_size, spec.d_mo)),
    )


def generic_params(seed):
    rng = np.random.default_rng([seed, 2])
    params = init_params(SPEC, seed, dtype=np.float64)
    for _, tensor in params.tensors():
        tensor += 0.3 * rng.standard_normal(tensor.shape)
    params.memory[...] = rng.standard_normal(params.memory.shape)
    return params, rng


def test_memory_fixed_point_zero_terms():
    # perfect reconstruction, every h exactly on its item, items far apart,
    # orthogonal class row spaces with nuclear norms above delta
    memory = np.array([[10.0, 0.0], [0.0, 10.0]])
    h = memory[[0, 0, 1]]
    assignment = BatchAssignment(nearest=np.array([0, 0, 1]), second=np.array([1, 1, 0]))
    assert loss_comp(h, memory, assignment) == 0.0
    assert loss_triplet(h, memory, assignment, margin=1.0) == 0.0
    assert abs(loss_ole(h, assignment, delta=1.0)) < 1e-9
    rng = np.random.default_rng(10)
    x_app = rng.standard_normal(4)
    rec = make_record(x_app, rng.standard_normal(2), rng.uniform(0, 1, 2))
    trace = make_trace(x_app, rec.x_mag, rec.x_ang)
    assert abs(loss_rec(rec, trace, 0.1)) < 1e-9


def test_total_loss_terms_batch_means():
    # comp/triplet enter the total averaged over the batch; OLE enters once
    params, rng = generic_params(3)
    batch = make_batch(rng, SPEC, batch_size=6)
    weights = LossWeights()
    terms = batch_loss_terms(params, batch, weights)
    expected = (
        terms.rec
        + weights.lambda_comp * terms.comp
        + weights.lambda_tr * terms.triplet
        + weights.lambda_ole * terms.ole
    )
    assert abs(terms.total - expected) < 1e-12
    assert terms.rec >= 0 and terms.comp >= 0 and terms.triplet >= 0


def test_memory_grad_is_attention_pathway_only_when_lambdas_zero():
    params, rng = generic_params(4)
    batch = make_batch(rng, SPEC)
    weights = LossWeights(lambda_comp=0.0, lambda_tr=0.0, lambda_ole=0.0)
    _, grads = total_loss_and_grads(params, batch, weights)
    # independent check: finite differences over every memory coordinate
    step = 1e-6
    flat = params.memory.reshape(-1)
    gflat = grads.memory.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = batch_loss_terms(params, batch, weights).total
        flat[i] = orig - step
        down = batch_loss_terms(params, batch, weights).total
        flat[i] = orig
        fd = (up - down) / (2 * step)
        assert abs(gflat[i] - fd) < 1e-6 * max(1.0, abs(fd))


def test_gradients_match_finite_differences_small_instance():
    # D_app=6, D_mo=4, d_h=5, N=4, batch=8; step 1e-4, rel tolerance 1e-3
    from memvad.training import gradient_check

    report = gradient_check(SPEC, seed=0)
    assert not report.switch_proximate()
    assert report.max_rel_error < 1e-3


def test_lambda_scaling_linearity():
    params, rng = generic_params(5)
    batch = make_batch(rng, SPEC)
    base = LossWeights(lambda_cos=0.0)
    doubled = LossWeights(
        lambda_cos=0.0,
        lambda_comp=2 * base.lambda_comp,
        lambda_tr=2 * base.lambda_tr,
        lambda_ole=2 * base.lambda_ole,
    )
    off = LossWeights(lambda_cos=0.0, lambda_comp=0.0, lambda_tr=0.0, lambda_ole=0.0)
    _, g1 = total_loss_and_grads(params, batch, base)
    _, g2 = total_loss_and_grads(params, batch, doubled)
    _, g0 = total_loss_and_grads(params, batch, off)
    for (name, t2), (_, t1), (_, t0) in zip(g2.tensors(), g1.tensors(), g0.tensors()):
        np.testing.assert_allclose(
            t2 - t0, 2.0 * (t1 - t0), rtol=1e-9, atol=1e-12, err_msg=name
        )


def test_non_finite_input_raises_numeric_error():
    params, rng = generic_params(6)
    batch = make_batch(rng, SPEC)
    batch.x_app[0, 0] = np.inf
    with np.errstate(all="ignore"), pytest.raises(NumericError):
        total_loss_and_grads(params, batch, LossWeights())


def test_cos_guard_counted_and_finite():
    params = init_params(SPEC, seed=0, dtype=np.float64).zeros_like()
    rng = np.random.default_rng(11)
    batch = make_batch(rng, SPEC, batch_size=4)
    weights = LossWeights(lambda_tr=0.0)  # zeroed memory cannot rank two items
    terms = batch_loss_terms(params, batch, weights)
    assert terms.cos_guard_count == 4  # xhat is exactly zero for all samples
    assert np.isfinite(terms.total)


def test_triplet_requires_two_items_in_total_loss():
    spec = NetworkSpec(
        d_app=4,
        d_mo=2,
        d_h=3,
        n_items=1,
        app_widths=(4, 4, 3, 3, 3),
        mag_widths=(2, 3, 2, 2, 2),
        ang_widths=(2, 3, 2, 2, 2),
        fusion_widths=(7, 4, 3),
        decoder_widths=(6, 5, 8),
    )
    params = init_params(spec, seed=0, dtype=np.float64)
    rng = np.random.default_rng(12)
    batch = Batch(
        x_app=rng.standard_normal((3, 4)),
        x_mag=np.abs(rng.standard_normal((3, 2))),
        x_ang=rng.uniform(0, 1, (3, 2)),
    )
    with pytest.raises(ConfigError):
        total_loss_and_grads(params, batch, LossWeights())
    # with the triplet disabled a single memory item is fine
    terms = batch_loss_terms(params, batch, LossWeights(lambda_tr=0.0))
    assert np.isfinite(terms.total)
