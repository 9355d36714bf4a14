"""The object-level autoencoder: encoders, fusion, memory readout, decoder.

Three per-modality encoders (appearance, motion magnitude, motion angle,
each two blocks of two dense layers) feed a two-layer fusion network that
produces the action embedding ``h``. A learnable memory of ``n_items``
prototype vectors is read by softmax attention over the dot products
``h . m_i``; the readout ``c`` is concatenated with ``h`` and decoded back
to the full feature vector. Hidden layers are rectified-linear, the last
layer of every stack is linear.

Everything here is plain numpy; the parameters are explicit arrays so the
loss module can differentiate the exact computation by hand.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import CheckpointError, ConfigError, DimensionError, NumericError
from .features import FeatureRecord


@dataclass(frozen=True)
class LayerSpec:
    in_width: int
    out_width: int
    activation: str  # "relu" for hidden layers, "identity" for the last


@dataclass(frozen=True)
class NetworkSpec:
    """Widths of every stack plus the memory geometry.

    Encoder width tuples have 5 entries (4 layers: two blocks of two),
    fusion has 3 (2 layers); the decoder is a single stack of >= 1 layer.
    """

    d_app: int
    d_mo: int
    d_h: int
    n_items: int
    app_widths: tuple[int, ...]
    mag_widths: tuple[int, ...]
    ang_widths: tuple[int, ...]
    fusion_widths: tuple[int, ...]
    decoder_widths: tuple[int, ...]

    def __post_init__(self):
        for name, widths in self.stacks().items():
            if len(widths) < 2:
                raise ConfigError(f"{name}: needs at least one layer")
            if any(w < 1 for w in widths):
                raise ConfigError(f"{name}: all widths must be >= 1")
        for name in ("app_widths", "mag_widths", "ang_widths"):
            if len(getattr(self, name)) != 5:
                raise ConfigError(f"{name}: encoders are two blocks of two layers")
        if len(self.fusion_widths) != 3:
            raise ConfigError("fusion_widths: fusion is a single two-layer network")
        if self.app_widths[0] != self.d_app:
            raise ConfigError("app_widths[0] must equal d_app")
        if self.mag_widths[0] != self.d_mo or self.ang_widths[0] != self.d_mo:
            raise ConfigError("motion encoder input width must equal d_mo")
        bottleneck = self.app_widths[-1] + self.mag_widths[-1] + self.ang_widths[-1]
        if self.fusion_widths[0] != bottleneck:
            raise ConfigError(
                f"fusion input width {self.fusion_widths[0]} != concatenated "
                f"encoder bottlenecks {bottleneck}"
            )
        if self.fusion_widths[-1] != self.d_h:
            raise ConfigError("fusion output width must equal d_h")
        if self.decoder_widths[0] != 2 * self.d_h:
            raise ConfigError("decoder input width must equal 2*d_h")
        if self.decoder_widths[-1] != self.d_app + 2 * self.d_mo:
            raise ConfigError("decoder output width must equal d_app + 2*d_mo")
        if self.n_items < 1:
            raise ConfigError("n_items must be >= 1")

    def stacks(self) -> dict[str, tuple[int, ...]]:
        return {
            "enc_app": self.app_widths,
            "enc_mag": self.mag_widths,
            "enc_ang": self.ang_widths,
            "fusion": self.fusion_widths,
            "decoder": self.decoder_widths,
        }

    def layers(self, stack: str) -> tuple[LayerSpec, ...]:
        widths = self.stacks()[stack]
        n = len(widths) - 1
        return tuple(
            LayerSpec(widths[i], widths[i + 1], "relu" if i < n - 1 else "identity")
            for i in range(n)
        )

    @classmethod
    def default(
        cls, d_app: int = 512, d_mo: int = 256, d_h: int = 128, n_items: int = 40
    ) -> "NetworkSpec":
        return cls(
            d_app=d_app,
            d_mo=d_mo,
            d_h=d_h,
            n_items=n_items,
            app_widths=(d_app, 256, 128, 128, 64),
            mag_widths=(d_mo, 128, 64, 64, 32),
            ang_widths=(d_mo, 128, 64, 64, 32),
            fusion_widths=(128, 128, d_h),
            decoder_widths=(2 * d_h, 256, 512, d_app + 2 * d_mo),
        )

    @classmethod
    def small(
        cls, d_app: int = 6, d_mo: int = 4, d_h: int = 5, n_items: int = 4
    ) -> "NetworkSpec":
        """Tiny instance for gradient checks (all widths <= 8)."""
        return cls(
            d_app=d_app,
            d_mo=d_mo,
            d_h=d_h,
            n_items=n_items,
            app_widths=(d_app, 6, 5, 5, 4),
            mag_widths=(d_mo, 5, 4, 4, 3),
            ang_widths=(d_mo, 5, 4, 4, 3),
            fusion_widths=(10, 6, d_h),
            decoder_widths=(2 * d_h, 6, 6, d_app + 2 * d_mo),
        )


@dataclass
class DenseStack:
    """Weights (out, in) and biases (out,) of one fully connected stack."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]


@dataclass
class ModelParams:
    """All learnable tensors, including the memory matrix (n_items, d_h)."""

    spec: NetworkSpec
    enc_app: DenseStack
    enc_mag: DenseStack
    enc_ang: DenseStack
    fusion: DenseStack
    memory: np.ndarray
    decoder: DenseStack

    @property
    def dtype(self) -> np.dtype:
        return self.memory.dtype

    def stack(self, name: str) -> DenseStack:
        return getattr(self, name)

    def tensors(self) -> Iterator[tuple[str, np.ndarray]]:
        """Named tensors in a fixed order (also the init draw order)."""
        for name in ("enc_app", "enc_mag", "enc_ang", "fusion"):
            stack = self.stack(name)
            for i, (w, b) in enumerate(zip(stack.weights, stack.biases)):
                yield f"{name}.w{i}", w
                yield f"{name}.b{i}", b
        yield "memory", self.memory
        for i, (w, b) in enumerate(zip(self.decoder.weights, self.decoder.biases)):
            yield f"decoder.w{i}", w
            yield f"decoder.b{i}", b

    def copy(self) -> "ModelParams":
        return ModelParams(
            spec=self.spec,
            enc_app=_copy_stack(self.enc_app),
            enc_mag=_copy_stack(self.enc_mag),
            enc_ang=_copy_stack(self.enc_ang),
            fusion=_copy_stack(self.fusion),
            memory=self.memory.copy(),
            decoder=_copy_stack(self.decoder),
        )

    def zeros_like(self) -> "ModelParams":
        out = self.copy()
        for _, t in out.tensors():
            t[...] = 0.0
        return out

    def validate(self) -> None:
        if self.memory.shape != (self.spec.n_items, self.spec.d_h):
            raise ConfigError(
                f"memory shape {self.memory.shape} != "
                f"({self.spec.n_items}, {self.spec.d_h})"
            )
        for name, t in self.tensors():
            if not np.isfinite(t).all():
                raise NumericError(f"non-finite values in parameter {name}")


def _copy_stack(stack: DenseStack) -> DenseStack:
    return DenseStack(
        weights=[w.copy() for w in stack.weights],
        biases=[b.copy() for b in stack.biases],
    )


def init_params(spec: NetworkSpec, seed: int, dtype=np.float32) -> ModelParams:
    """Initialize weights uniformly in +/- 1/sqrt(fan_in), biases zero.

    Memory rows are uniform in +/- 1/sqrt(d_h). The draw order is fixed
    (enc_app, enc_mag, enc_ang, fusion, memory, decoder) so a seed fully
    determines the result.
    """
    rng = np.random.default_rng(seed)

    def make_stack(widths):
        ws, bs = [], []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            ws.append(rng.uniform(-bound, bound, (fan_out, fan_in)).astype(dtype))
            bs.append(np.zeros(fan_out, dtype=dtype))
        return DenseStack(ws, bs)

    enc_app = make_stack(spec.app_widths)
    enc_mag = make_stack(spec.mag_widths)
    enc_ang = make_stack(spec.ang_widths)
    fusion = make_stack(spec.fusion_widths)
    bound = 1.0 / np.sqrt(spec.d_h)
    memory = rng.uniform(-bound, bound, (spec.n_items, spec.d_h)).astype(dtype)
    decoder = make_stack(spec.decoder_widths)
    return ModelParams(spec, enc_app, enc_mag, enc_ang, fusion, memory, decoder)


# ---------------------------------------------------------------------------
# forward pass
# ---------------------------------------------------------------------------


@dataclass
class StackTrace:
    """Inputs and pre-activations of every layer, kept for backprop."""

    inputs: list[np.ndarray]  # inputs[i] = activation entering layer i
    pres: list[np.ndarray]  # pres[i] = pre-activation of layer i
    out: np.ndarray


@dataclass
class BatchTrace:
    """Forward artifacts of a whole batch (rows are samples)."""

    x_app: np.ndarray
    x_mag: np.ndarray
    x_ang: np.ndarray
    enc_app: StackTrace
    enc_mag: StackTrace
    enc_ang: StackTrace
    fusion: StackTrace
    h: np.ndarray
    att_logits: np.ndarray
    att_weights: np.ndarray
    nearest: np.ndarray
    second: np.ndarray
    readout: np.ndarray
    z: np.ndarray
    decoder: StackTrace
    xhat_app: np.ndarray
    xhat_mag: np.ndarray
    xhat_ang: np.ndarray


@dataclass
class ForwardTrace:
    """Per-object forward artifacts (single record view of a BatchTrace)."""

    h: np.ndarray
    w: np.ndarray
    k: int
    c: np.ndarray
    z: np.ndarray
    xhat_app: np.ndarray
    xhat_mag: np.ndarray
    xhat_ang: np.ndarray
    pre_activations: dict[str, list[np.ndarray]]


def _stack_forward(
    stack: DenseStack, x: np.ndarray, name: str, check_finite: bool = True
) -> StackTrace:
    inputs, pres = [], []
    a = x
    n = len(stack.weights)
    for i, (w, b) in enumerate(zip(stack.weights, stack.biases)):
        if a.shape[1] != w.shape[1]:
            raise DimensionError(
                f"{name} layer {i}: input width {a.shape[1]} != {w.shape[1]}"
            )
        inputs.append(a)
        z = a @ w.T + b
        pres.append(z)
        a = np.maximum(z, 0.0) if i < n - 1 else z
    if check_finite and not np.isfinite(a).all():
        raise NumericError(f"non-finite output in {name}")
    return StackTrace(inputs=inputs, pres=pres, out=a)


def _attention(memory: np.ndarray, h: np.ndarray):
    """Batched softmax attention over memory items.

    Returns (weights, nearest, second, readout, logits). The softmax is
    computed with row-max subtraction, which is analytically identical to
    the plain form. Ties in the argmax resolve to the lowest index.
    """
    logits = h @ memory.T
    shifted = logits - logits.max(axis=1, keepdims=True)
    expd = np.exp(shifted)
    weights = expd / expd.sum(axis=1, keepdims=True)
    nearest = np.argmax(weights, axis=1)
    if memory.shape[0] >= 2:
        masked = weights.copy()
        masked[np.arange(len(nearest)), nearest] = -np.inf
        second = np.argmax(masked, axis=1)
    else:
        second = np.full(len(nearest), -1, dtype=np.int64)
    readout = weights @ memory
    return weights, nearest, second, readout, logits


def memory_read(memory: np.ndarray, h: np.ndarray):
    """Attention read for a single query: returns (w, k, c).

    w is the softmax of the dot products h . m_i, k the highest-weight
    (soft nearest neighbor) index with lowest-index tie-break, and
    c = sum_j w_j m_j the readout.
    """
    h = np.asarray(h)
    if h.ndim != 1 or h.shape[0] != memory.shape[1]:
        raise DimensionError(
            f"query has shape {h.shape}, memory rows have {memory.shape[1]}"
        )
    weights, nearest, _, readout, _ = _attention(memory, h[None, :])
    return weights[0], int(nearest[0]), readout[0]


def _forward_batch(
    params: ModelParams,
    x_app: np.ndarray,
    x_mag: np.ndarray,
    x_ang: np.ndarray,
    check_finite: bool = True,
) -> BatchTrace:
    spec = params.spec
    if x_app.shape[1] != spec.d_app:
        raise DimensionError(
            f"x_app has {x_app.shape[1]} dims, network expects {spec.d_app}"
        )
    if x_mag.shape[1] != spec.d_mo or x_ang.shape[1] != spec.d_mo:
        raise DimensionError(
            f"motion maps have {x_mag.shape[1]}/{x_ang.shape[1]} dims, "
            f"network expects {spec.d_mo}"
        )
    enc_app = _stack_forward(params.enc_app, x_app, "enc_app", check_finite)
    enc_mag = _stack_forward(params.enc_mag, x_mag, "enc_mag", check_finite)
    enc_ang = _stack_forward(params.enc_ang, x_ang, "enc_ang", check_finite)
    fused_in = np.hstack([enc_app.out, enc_mag.out, enc_ang.out])
    fusion = _stack_forward(params.fusion, fused_in, "fusion", check_finite)
    h = fusion.out
    weights, nearest, second, readout, logits = _attention(params.memory, h)
    if check_finite and not np.isfinite(weights).all():
        raise NumericError("non-finite attention weights")
    z = np.hstack([readout, h])
    decoder = _stack_forward(params.decoder, z, "decoder", check_finite)
    xhat = decoder.out
    d_app, d_mo = spec.d_app, spec.d_mo
    return BatchTrace(
        x_app=x_app,
        x_mag=x_mag,
        x_ang=x_ang,
        enc_app=enc_app,
        enc_mag=enc_mag,
        enc_ang=enc_ang,
        fusion=fusion,
        h=h,
        att_logits=logits,
        att_weights=weights,
        nearest=nearest,
        second=second,
        readout=readout,
        z=z,
        decoder=decoder,
        xhat_app=xhat[:, :d_app],
        xhat_mag=xhat[:, d_app : d_app + d_mo],
        xhat_ang=xhat[:, d_app + d_mo :],
    )


def _record_inputs(rec: FeatureRecord, dtype) -> tuple[np.ndarray, ...]:
    return (
        np.asarray(rec.x_app, dtype=dtype)[None, :],
        np.asarray(rec.x_mag, dtype=dtype)[None, :],
        np.asarray(rec.x_ang, dtype=dtype)[None, :],
    )


def encode_fuse(params: ModelParams, rec: FeatureRecord) -> np.ndarray:
    """Encode a record's three feature vectors and fuse them into h."""
    x_app, x_mag, x_ang = _record_inputs(rec, params.dtype)
    enc_app = _stack_forward(params.enc_app, x_app, "enc_app")
    enc_mag = _stack_forward(params.enc_mag, x_mag, "enc_mag")
    enc_ang = _stack_forward(params.enc_ang, x_ang, "enc_ang")
    fused_in = np.hstack([enc_app.out, enc_mag.out, enc_ang.out])
    fusion = _stack_forward(params.fusion, fused_in, "fusion")
    return fusion.out[0]


def forward(params: ModelParams, rec: FeatureRecord) -> ForwardTrace:
    """Full forward pass for one record."""
    x_app, x_mag, x_ang = _record_inputs(rec, params.dtype)
    bt = _forward_batch(params, x_app, x_mag, x_ang)
    pres = {
        name: [p[0] for p in getattr(bt, name).pres]
        for name in ("enc_app", "enc_mag", "enc_ang", "fusion", "decoder")
    }
    return ForwardTrace(
        h=bt.h[0],
        w=bt.att_weights[0],
        k=int(bt.nearest[0]),
        c=bt.readout[0],
        z=bt.z[0],
        xhat_app=bt.xhat_app[0],
        xhat_mag=bt.xhat_mag[0],
        xhat_ang=bt.xhat_ang[0],
        pre_activations=pres,
    )


# ---------------------------------------------------------------------------
# checkpoint file
# ---------------------------------------------------------------------------

_CKPT_MAGIC = b"OMC1"
_CKPT_VERSION = 1


def save_checkpoint(params: ModelParams, train_loss: float, path: str | Path) -> None:
    """Write spec + tensors (little-endian f32) + the training loss (f64)."""
    spec = params.spec
    buf = bytearray()
    buf += _CKPT_MAGIC
    buf += struct.pack("<I", _CKPT_VERSION)
    buf += struct.pack("<4I", spec.d_app, spec.d_mo, spec.d_h, spec.n_items)
    for widths in spec.stacks().values():
        buf += struct.pack("<I", len(widths))
        buf += struct.pack(f"<{len(widths)}I", *widths)
    buf += struct.pack("<d", float(train_loss))
    for _, tensor in params.tensors():
        buf += np.ascontiguousarray(tensor, dtype="<f4").tobytes()
    Path(path).write_bytes(bytes(buf))


def load_checkpoint(path: str | Path) -> tuple[ModelParams, float]:
    """Read a checkpoint back; tensors come out float32."""
    blob = Path(path).read_bytes()
    off = 0

    def take(fmt):
        nonlocal off
        size = struct.calcsize(fmt)
        if off + size > len(blob):
            raise CheckpointError(f"{path}: truncated checkpoint")
        vals = struct.unpack_from(fmt, blob, off)
        off += size
        return vals

    magic = blob[:4]
    off = 4
    if magic != _CKPT_MAGIC:
        raise CheckpointError(f"{path}: bad checkpoint magic {magic!r}")
    (version,) = take("<I")
    if version != _CKPT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    d_app, d_mo, d_h, n_items = take("<4I")
    widths = []
    for _ in range(5):
        (n,) = take("<I")
        widths.append(tuple(take(f"<{n}I")))
    spec = NetworkSpec(
        d_app=d_app,
        d_mo=d_mo,
        d_h=d_h,
        n_items=n_items,
        app_widths=widths[0],
        mag_widths=widths[1],
        ang_widths=widths[2],
        fusion_widths=widths[3],
        decoder_widths=widths[4],
    )
    (train_loss,) = take("<d")
    params = init_params(spec, seed=0, dtype=np.float32)
    for _, tensor in params.tensors():
        n = tensor.size
        size = 4 * n
        if off + size > len(blob):
            raise CheckpointError(f"{path}: truncated tensor payload")
        tensor[...] = np.frombuffer(blob, dtype="<f4", count=n, offset=off).reshape(
            tensor.shape
        )
        off += size
    if off != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - off} trailing bytes")
    params.validate()
    return params, float(train_loss)
