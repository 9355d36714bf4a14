"""Training objectives and their exact gradients.

The total loss of a batch of B objects is::

    L = L_rec + lambda_comp * L_comp + lambda_tr * L_tr + lambda_ole * L_ole

    L_rec  = mean_j  ||x_app - xhat_app||_2 + ||x_mo - xhat_mo||_2
                     + lambda_cos * (1 - cos(x_app, xhat_app))
    L_comp = (1/B) sum_j ||h_j - m_{k_j}||_2
    L_tr   = (1/B) sum_j max(0, ||h_j - m_p||^2 - ||h_j - m_n||^2 + margin)
    L_ole  = sum_c max(delta, ||H_c||_*) - ||H||_*        (once per batch)

where x_mo is the concatenated (magnitude, angle) motion vector, k_j the
attention-argmax memory item of sample j (p = nearest, n = second
nearest), H the row-stack of batch embeddings and H_c the rows assigned
to item c. Norms are unsquared except inside the triplet hinge; ||.||_*
is the nuclear norm (sum of singular values).

Gradients are exact reverse-mode derivatives of this computation:
encoders, fusion, softmax attention, readout, decoder and the memory
matrix all receive gradients. Index selections (argmax, second nearest)
are treated as constants. At zero-distance points the norm gradient uses
the guard ||v|| -> sqrt(||v||^2 + 1e-12); the loss value itself is exact.
The nuclear-norm subgradient is U V^T from the thin SVD with singular
values below 1e-6 truncated, and max(delta, .) passes no gradient while
the nuclear norm is below delta.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericError
from .features import FeatureRecord
from .network import BatchTrace, ForwardTrace, ModelParams, StackTrace, _forward_batch

logger = logging.getLogger(__name__)

_NORM_GUARD = 1e-12
_SVD_TRUNCATION = 1e-6


@dataclass
class LossWeights:
    """Loss hyperparameters; defaults are the reference training values."""

    lambda_cos: float = 0.1
    lambda_comp: float = 1.6
    lambda_tr: float = 0.2
    lambda_ole: float = 0.3
    delta: float = 1.0
    margin: float = 1.0

    def validate(self) -> None:
        values = (
            self.lambda_cos,
            self.lambda_comp,
            self.lambda_tr,
            self.lambda_ole,
            self.delta,
            self.margin,
        )
        if not np.isfinite(values).all():
            raise ConfigError("loss weights must be finite")
        if self.delta <= 0:
            raise ConfigError(f"delta must be > 0, got {self.delta}")


@dataclass
class BatchAssignment:
    """Nearest / second-nearest memory item per sample, plus the partition.

    Nearest means highest attention weight (the soft nearest neighbor);
    ties resolve to the lowest index. ``second`` is -1 when the memory has
    a single item.
    """

    nearest: np.ndarray
    second: np.ndarray

    def groups(self) -> dict[int, np.ndarray]:
        """Batch indices grouped by nearest item; only non-empty cells."""
        out: dict[int, np.ndarray] = {}
        for item in np.unique(self.nearest):
            out[int(item)] = np.flatnonzero(self.nearest == item)
        return out


def assignment_of(trace: BatchTrace) -> BatchAssignment:
    return BatchAssignment(nearest=trace.nearest, second=trace.second)


@dataclass
class Batch:
    """Dense input arrays of a training batch (rows are objects)."""

    x_app: np.ndarray
    x_mag: np.ndarray
    x_ang: np.ndarray

    @classmethod
    def from_records(cls, records: list[FeatureRecord], dtype=np.float32) -> "Batch":
        if not records:
            raise ConfigError("empty batch")
        return cls(
            x_app=np.stack([r.x_app for r in records]).astype(dtype, copy=False),
            x_mag=np.stack([r.x_mag for r in records]).astype(dtype, copy=False),
            x_ang=np.stack([r.x_ang for r in records]).astype(dtype, copy=False),
        )

    def __len__(self) -> int:
        return self.x_app.shape[0]


@dataclass
class LossTerms:
    """Batch-normalized loss terms (unweighted) and the weighted total."""

    rec: float
    comp: float
    triplet: float
    ole: float
    total: float
    cos_guard_count: int = 0


def _guarded(n: np.ndarray) -> np.ndarray:
    return np.sqrt(n * n + _NORM_GUARD)


def _row_norms(mat: np.ndarray) -> np.ndarray:
    return np.sqrt(np.einsum("ij,ij->i", mat, mat))


def _rec_components(x_app, x_mo, xhat_app, xhat_mo, lambda_cos, want_grad):
    """Per-sample reconstruction term and (optionally) d/d xhat."""
    res_app = xhat_app - x_app
    res_mo = xhat_mo - x_mo
    n_app = _row_norms(res_app)
    n_mo = _row_norms(res_mo)
    nx = _row_norms(x_app)
    ny = _row_norms(xhat_app)
    valid = (nx > 0) & (ny > 0)
    dots = np.einsum("ij,ij->i", x_app, xhat_app)
    cos = np.ones_like(nx)
    np.divide(dots, nx * ny, out=cos, where=valid)
    np.clip(cos, -1.0, 1.0, out=cos)  # rounding can push |cos| past 1
    per_sample = n_app + n_mo + lambda_cos * (1.0 - cos)
    guard_count = int((~valid).sum())

    if not want_grad:
        return per_sample, guard_count, None, None

    g_app = res_app / _guarded(n_app)[:, None]
    if lambda_cos != 0.0:
        inv = np.zeros_like(nx)
        np.divide(1.0, nx * ny, out=inv, where=valid)
        inv_ny2 = np.zeros_like(ny)
        np.divide(1.0, ny * ny, out=inv_ny2, where=valid)
        # d(1 - cos)/d xhat = -x/(|x||xhat|) + cos * xhat/|xhat|^2
        g_cos = -x_app * inv[:, None] + xhat_app * (cos * inv_ny2)[:, None]
        g_cos[~valid] = 0.0
        g_app = g_app + lambda_cos * g_cos
    g_mo = res_mo / _guarded(n_mo)[:, None]
    return per_sample, guard_count, g_app, g_mo


def loss_rec(rec: FeatureRecord, trace: ForwardTrace, lambda_cos: float) -> float:
    """Reconstruction loss of a single object, computed in float64."""
    x_app = np.asarray(rec.x_app, dtype=np.float64)[None, :]
    x_mo = np.concatenate([rec.x_mag, rec.x_ang]).astype(np.float64)[None, :]
    xhat_app = np.asarray(trace.xhat_app, dtype=np.float64)[None, :]
    xhat_mo = np.concatenate([trace.xhat_mag, trace.xhat_ang]).astype(np.float64)[
        None, :
    ]
    per_sample, guards, _, _ = _rec_components(
        x_app, x_mo, xhat_app, xhat_mo, lambda_cos, want_grad=False
    )
    if guards:
        logger.warning("cosine term skipped: zero-norm appearance vector")
    return float(per_sample[0])


def loss_comp(h: np.ndarray, memory: np.ndarray, assignment: BatchAssignment) -> float:
    """Sum of unsquared distances from each h to its nearest memory item."""
    diffs = h - memory[assignment.nearest]
    return float(np.linalg.norm(diffs.astype(np.float64), axis=1).sum())


def loss_triplet(
    h: np.ndarray,
    memory: np.ndarray,
    assignment: BatchAssignment,
    margin: float = 1.0,
) -> float:
    """Hinge on squared distances to the nearest vs second-nearest item."""
    if memory.shape[0] < 2:
        raise ConfigError("triplet loss needs at least 2 memory items")
    h64 = h.astype(np.float64)
    m64 = memory.astype(np.float64)
    d_pos = ((h64 - m64[assignment.nearest]) ** 2).sum(axis=1)
    d_neg = ((h64 - m64[assignment.second]) ** 2).sum(axis=1)
    return float(np.maximum(0.0, d_pos - d_neg + margin).sum())


def _nuclear_norm(mat: np.ndarray) -> float:
    try:
        s = np.linalg.svd(mat, compute_uv=False)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"SVD failed in nuclear norm: {exc}") from exc
    return float(s.sum())


def loss_ole(h: np.ndarray, assignment: BatchAssignment, delta: float = 1.0) -> float:
    """Low-rank embedding term: sum_c max(delta, ||H_c||_*) - ||H||_*."""
    if len(h) == 0:
        raise ConfigError("empty batch")
    h64 = np.asarray(h, dtype=np.float64)
    total = 0.0
    for _, idx in assignment.groups().items():
        total += max(delta, _nuclear_norm(h64[idx]))
    return total - _nuclear_norm(h64)


def _stack_backward(
    stack, trace: StackTrace, g_out: np.ndarray
) -> tuple[np.ndarray, list[np.ndarray], list[np.ndarray]]:
    """Backprop one dense stack; returns (g_input, weight grads, bias grads)."""
    n = len(stack.weights)
    g = g_out
    g_ws: list[np.ndarray] = [np.empty(0)] * n
    g_bs: list[np.ndarray] = [np.empty(0)] * n
    for i in reversed(range(n)):
        if i < n - 1:
            g = g * (trace.pres[i] > 0)
        g_ws[i] = g.T @ trace.inputs[i]
        g_bs[i] = g.sum(axis=0)
        g = g @ stack.weights[i]
    return g, g_ws, g_bs


def _nuclear_subgradient(mat: np.ndarray) -> np.ndarray:
    try:
        u, s, vt = np.linalg.svd(mat, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"SVD failed in nuclear-norm gradient: {exc}") from exc
    keep = s >= _SVD_TRUNCATION
    return u[:, keep] @ vt[keep]


def _evaluate(
    params: ModelParams,
    batch: Batch,
    weights: LossWeights,
    want_grads: bool,
    want_signature: bool = False,
):
    """Shared forward (and optional backward) pass for the total loss.

    The optional signature encodes every discrete branch the loss took
    (ReLU sign patterns, nearest/second selections, hinge activity, the
    max(delta, .) branch); finite-difference checks compare signatures to
    detect perturbations that crossed a switching point.
    """
    weights.validate()
    b = len(batch)
    if b == 0:
        raise ConfigError("empty batch")
    if weights.lambda_tr != 0.0 and params.spec.n_items < 2:
        raise ConfigError("triplet loss needs at least 2 memory items")

    # The gradient path keeps per-layer finite checks for diagnostics; the
    # forward-only path relies on the final per-term checks below.
    trace = _forward_batch(
        params, batch.x_app, batch.x_mag, batch.x_ang, check_finite=want_grads
    )
    assignment = assignment_of(trace)
    memory = params.memory
    h = trace.h

    x_mo = np.hstack([batch.x_mag, batch.x_ang])
    xhat_mo = np.hstack([trace.xhat_mag, trace.xhat_ang])
    rec_per_sample, guard_count, g_xhat_app, g_xhat_mo = _rec_components(
        batch.x_app, x_mo, trace.xhat_app, xhat_mo, weights.lambda_cos, want_grads
    )
    if guard_count:
        logger.warning(
            "cosine term skipped for %d/%d samples (zero-norm vectors)",
            guard_count,
            b,
        )
    rec = float(rec_per_sample.sum()) / b

    comp_diff = h - memory[assignment.nearest]
    comp_dist = _row_norms(comp_diff)
    comp = float(comp_dist.sum()) / b

    if weights.lambda_tr != 0.0:
        neg_diff = h - memory[assignment.second]
        d_pos = (comp_diff**2).sum(axis=1)
        d_neg = (neg_diff**2).sum(axis=1)
        hinge = d_pos - d_neg + weights.margin
        active = hinge > 0
        triplet = float(np.maximum(0.0, hinge).sum()) / b
    else:
        neg_diff = None
        active = None
        triplet = 0.0

    groups = assignment.groups()
    if weights.lambda_ole != 0.0:
        ole = 0.0
        class_norms: dict[int, float] = {}
        for item, idx in groups.items():
            nn = _nuclear_norm(h[idx])
            class_norms[item] = nn
            ole += max(weights.delta, nn)
        ole -= _nuclear_norm(h)
    else:
        ole = 0.0
        class_norms = {}

    total = (
        rec
        + weights.lambda_comp * comp
        + weights.lambda_tr * triplet
        + weights.lambda_ole * ole
    )
    terms = LossTerms(
        rec=rec,
        comp=comp,
        triplet=triplet,
        ole=ole,
        total=float(total),
        cos_guard_count=guard_count,
    )
    for name, value in (
        ("rec", rec),
        ("comp", comp),
        ("triplet", triplet),
        ("ole", ole),
    ):
        if not np.isfinite(value):
            raise NumericError(f"non-finite {name} loss term")

    signature = None
    if want_signature:
        parts = [trace.nearest.tobytes(), trace.second.tobytes()]
        for stack_name in ("enc_app", "enc_mag", "enc_ang", "fusion", "decoder"):
            for pre in getattr(trace, stack_name).pres[:-1]:
                parts.append((pre > 0).tobytes())
        if active is not None:
            parts.append(active.tobytes())
        if class_norms:
            parts.append(
                bytes(
                    int(class_norms[item] >= weights.delta)
                    for item in sorted(class_norms)
                )
            )
        signature = b"".join(parts)

    if not want_grads:
        return terms, None, signature

    dtype = h.dtype
    spec = params.spec

    # --- reconstruction path: d loss / d xhat -> decoder -> z = (c || h)
    g_xhat = np.hstack([g_xhat_app, g_xhat_mo]).astype(dtype, copy=False) / b
    g_z, dec_gw, dec_gb = _stack_backward(params.decoder, trace.decoder, g_xhat)
    g_c = g_z[:, : spec.d_h]
    g_h = g_z[:, spec.d_h :].copy()

    # --- attention readout c = w M and softmax w = softmax(h M^T)
    g_w = g_c @ memory.T
    g_memory = trace.att_weights.T @ g_c
    inner = (trace.att_weights * g_w).sum(axis=1, keepdims=True)
    g_logits = trace.att_weights * (g_w - inner)
    g_h += g_logits @ memory
    g_memory += g_logits.T @ h

    # --- compactness: (1/B) sum ||h - m_k||
    coef = weights.lambda_comp / b
    if coef != 0.0:
        unit = comp_diff / _guarded(comp_dist)[:, None]
        g_h += coef * unit
        np.add.at(g_memory, assignment.nearest, -coef * unit)

    # --- triplet hinge on squared distances
    if weights.lambda_tr != 0.0 and active is not None and active.any():
        coef = weights.lambda_tr / b
        act = active[:, None]
        g_pos = np.where(act, 2.0 * comp_diff, 0.0)
        g_neg = np.where(act, -2.0 * neg_diff, 0.0)
        g_h += coef * (g_pos + g_neg)
        np.add.at(g_memory, assignment.nearest, -coef * g_pos)
        np.add.at(g_memory, assignment.second, -coef * g_neg)

    # --- low-rank embedding term
    if weights.lambda_ole != 0.0:
        g_h -= weights.lambda_ole * _nuclear_subgradient(h)
        for item, idx in groups.items():
            if class_norms[item] >= weights.delta:
                g_h[idx] += weights.lambda_ole * _nuclear_subgradient(h[idx])

    # --- fusion and encoders
    g_fused, fus_gw, fus_gb = _stack_backward(params.fusion, trace.fusion, g_h)
    w_app = spec.app_widths[-1]
    w_mag = spec.mag_widths[-1]
    g_app_out = g_fused[:, :w_app]
    g_mag_out = g_fused[:, w_app : w_app + w_mag]
    g_ang_out = g_fused[:, w_app + w_mag :]
    _, app_gw, app_gb = _stack_backward(params.enc_app, trace.enc_app, g_app_out)
    _, mag_gw, mag_gb = _stack_backward(params.enc_mag, trace.enc_mag, g_mag_out)
    _, ang_gw, ang_gb = _stack_backward(params.enc_ang, trace.enc_ang, g_ang_out)

    grads = params.zeros_like()
    for stack_name, (gws, gbs) in {
        "enc_app": (app_gw, app_gb),
        "enc_mag": (mag_gw, mag_gb),
        "enc_ang": (ang_gw, ang_gb),
        "fusion": (fus_gw, fus_gb),
        "decoder": (dec_gw, dec_gb),
    }.items():
        stack = grads.stack(stack_name)
        for i in range(len(gws)):
            stack.weights[i][...] = gws[i]
            stack.biases[i][...] = gbs[i]
    grads.memory[...] = g_memory
    return terms, grads, signature


def switch_margins(
    params: ModelParams, batch: Batch | list[FeatureRecord], weights: LossWeights
) -> float:
    """Distance of the batch to the nearest non-differentiable switch.

    Considers the argmax / second-nearest selection margins (when any
    memory loss is active), the triplet hinge, and the max(delta, .)
    branch of the low-rank term. Finite-difference checks should skip
    instances whose margin is tiny; the analytic gradient treats these
    selections as constants.
    """
    if not isinstance(batch, Batch):
        batch = Batch.from_records(batch, dtype=params.dtype)
    trace = _forward_batch(params, batch.x_app, batch.x_mag, batch.x_ang)
    margins = [np.inf]
    mem_active = (
        weights.lambda_comp != 0.0
        or weights.lambda_tr != 0.0
        or weights.lambda_ole != 0.0
    )
    n_items = params.spec.n_items
    if mem_active and n_items >= 2:
        sorted_logits = np.sort(trace.att_logits, axis=1)[:, ::-1]
        margins.append(float((sorted_logits[:, 0] - sorted_logits[:, 1]).min()))
        if weights.lambda_tr != 0.0 and n_items >= 3:
            margins.append(float((sorted_logits[:, 1] - sorted_logits[:, 2]).min()))
    if weights.lambda_tr != 0.0 and n_items >= 2:
        h64 = trace.h.astype(np.float64)
        m64 = params.memory.astype(np.float64)
        d_pos = ((h64 - m64[trace.nearest]) ** 2).sum(axis=1)
        d_neg = ((h64 - m64[trace.second]) ** 2).sum(axis=1)
        margins.append(float(np.abs(d_pos - d_neg + weights.margin).min()))
    if weights.lambda_ole != 0.0:
        assignment = assignment_of(trace)
        for _, idx in assignment.groups().items():
            nn = _nuclear_norm(trace.h[idx].astype(np.float64))
            margins.append(abs(nn - weights.delta))
    return min(margins)


def batch_loss_terms(
    params: ModelParams, batch: Batch | list[FeatureRecord], weights: LossWeights
) -> LossTerms:
    """Forward-only evaluation of all loss terms for a batch."""
    if not isinstance(batch, Batch):
        batch = Batch.from_records(batch, dtype=params.dtype)
    terms, _, _ = _evaluate(params, batch, weights, want_grads=False)
    return terms


def loss_terms_with_signature(
    params: ModelParams, batch: Batch | list[FeatureRecord], weights: LossWeights
) -> tuple[LossTerms, bytes]:
    """Loss terms plus the discrete-branch signature of the evaluation."""
    if not isinstance(batch, Batch):
        batch = Batch.from_records(batch, dtype=params.dtype)
    terms, _, signature = _evaluate(
        params, batch, weights, want_grads=False, want_signature=True
    )
    assert signature is not None
    return terms, signature


def total_loss_and_grads(
    params: ModelParams, batch: Batch | list[FeatureRecord], weights: LossWeights
) -> tuple[float, ModelParams]:
    """Total loss and its gradient with respect to every parameter tensor.

    The gradient container has the same shape as ``params``.
    """
    if not isinstance(batch, Batch):
        batch = Batch.from_records(batch, dtype=params.dtype)
    terms, grads, _ = _evaluate(params, batch, weights, want_grads=True)
    assert grads is not None
    return terms.total, grads
