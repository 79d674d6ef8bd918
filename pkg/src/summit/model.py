"""Transformer encoder over per-value tokens with first-stack missing-value masking."""
from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .embedding import EvatVariant, TokenBatch, TokenLayout, embed_tokens, init_embedding_params
from .numerics import Node, ParamSet, ShapeError, Tape, gelu, sigmoid


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 32
    num_head: int = 4
    ff_dim: int = 64
    num_layer: int = 2
    classifier_down_factor: int = 2
    max_len: int = 512

    def validate(self) -> None:
        for name in ("d_model", "num_head", "ff_dim", "num_layer", "classifier_down_factor", "max_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.d_model % self.num_head:
            raise ValueError(f"d_model {self.d_model} is not divisible by num_head {self.num_head}")
        if self.d_model % 2:
            raise ValueError("d_model must be even for the sinusoidal positional encoding")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.num_head

    @property
    def hidden(self) -> int:
        return max(1, self.d_model // self.classifier_down_factor)


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 0.25
    gamma: float = 2.0

    def validate(self) -> None:
        if not 0 < self.alpha <= 1:
            raise ValueError("focal alpha must lie in (0, 1]")
        if self.gamma < 0:
            raise ValueError("focal gamma must be non-negative")


def positional_encoding(L: int, d: int) -> np.ndarray:
    """Sinusoidal encoding over flattened token positions, shape (L, d)."""
    if L < 1 or d < 1:
        raise ValueError("L and d must be positive")
    if d % 2:
        raise ValueError("d must be even")
    pos = np.arange(L, dtype=np.float64)[:, None]
    freq = np.power(10000.0, -np.arange(0, d, 2, dtype=np.float64) / d)[None, :]
    pe = np.empty((L, d))
    pe[:, 0::2] = np.sin(pos * freq)
    pe[:, 1::2] = np.cos(pos * freq)
    return pe


def _glorot(rng, fan_in, fan_out):
    lim = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=(fan_in, fan_out))


def init_params(cfg: ModelConfig, layout: TokenLayout, variant: EvatVariant,
                rng: np.random.Generator, dtype=np.float32) -> ParamSet:
    cfg.validate()
    d, f = cfg.d_model, cfg.ff_dim
    ps = ParamSet()
    init_embedding_params(ps, layout, d, variant, rng)
    for i in range(cfg.num_layer):
        p = f"encoder.{i}."
        for name in ("q", "k", "v", "o"):
            ps[p + f"w_{name}"] = _glorot(rng, d, d)
            ps[p + f"b_{name}"] = np.zeros(d)
        ps[p + "ln1.g"] = np.ones(d)
        ps[p + "ln1.b"] = np.zeros(d)
        ps[p + "ff.w1"] = _glorot(rng, d, f)
        ps[p + "ff.b1"] = np.zeros(f)
        ps[p + "ff.w2"] = _glorot(rng, f, d)
        ps[p + "ff.b2"] = np.zeros(d)
        ps[p + "ln2.g"] = np.ones(d)
        ps[p + "ln2.b"] = np.zeros(d)
    h = cfg.hidden
    ps["head.w1"] = _glorot(rng, d, h)
    ps["head.b1"] = np.zeros(h)
    ps["head.w2"] = _glorot(rng, h, 1)
    ps["head.b2"] = np.zeros(1)
    return ps.astype(dtype)


@dataclass
class AttentionTrace:
    """Head-averaged attention weights per stack, each (B, L, L)."""
    weights: list[np.ndarray] = field(default_factory=list)
    guarded_rows: int = 0

    def sample(self, b: int) -> list[np.ndarray]:
        return [w[b] for w in self.weights]


def _linear(tape: Tape, x: Node, prefix: str, w: str, b: str) -> Node:
    return tape.add(tape.matmul(x, tape.param(prefix + w)), tape.param(prefix + b))


def multi_head_attention(tape: Tape, z: Node, prefix: str, cfg: ModelConfig,
                         key_mask: np.ndarray | None) -> tuple[Node, np.ndarray]:
    """Scaled dot-product attention over (B, L, d) input.

    ``key_mask`` is (B, L) with 0 at keys that must receive no attention.
    Returns the projected output and the head-averaged weights (B, L, L).
    """
    B, L, d = z.value.shape
    h, dh = cfg.num_head, cfg.head_dim

    def heads(x):
        return tape.transpose(tape.reshape(x, (B, L, h, dh)), (0, 2, 1, 3))

    q = heads(_linear(tape, z, prefix, "w_q", "b_q"))
    k = heads(_linear(tape, z, prefix, "w_k", "b_k"))
    v = heads(_linear(tape, z, prefix, "w_v", "b_v"))
    scores = tape.matmul(q, tape.transpose(k, (0, 1, 3, 2)))
    km = None if key_mask is None else key_mask[:, None, None, :]
    probs = tape.masked_softmax(scores, km, 1.0 / math.sqrt(dh))
    ctx = tape.matmul(probs, v)
    ctx = tape.reshape(tape.transpose(ctx, (0, 2, 1, 3)), (B, L, d))
    out = _linear(tape, ctx, prefix, "w_o", "b_o")
    return out, probs.value.mean(axis=1)


def encoder_forward(tape: Tape, tokens: Node, key_mask: np.ndarray, cfg: ModelConfig,
                    record: bool = False) -> tuple[Node, AttentionTrace]:
    """Post-norm encoder stacks; only the first stack masks missing keys.

    Returns the mean over all L token outputs, (B, d).
    """
    B, L, d = tokens.value.shape
    if L > cfg.max_len:
        raise ShapeError(f"sequence length {L} exceeds max_len {cfg.max_len}")
    if d != cfg.d_model:
        raise ShapeError(f"token width {d} != d_model {cfg.d_model}")
    trace = AttentionTrace()
    pe = tape.const(positional_encoding(L, d).astype(tokens.value.dtype))
    x = tape.add(tokens, pe)
    before = tape.guarded_rows
    for i in range(cfg.num_layer):
        p = f"encoder.{i}."
        attn, w = multi_head_attention(tape, x, p, cfg, key_mask if i == 0 else None)
        if record:
            trace.weights.append(w)
        x = tape.layer_norm(tape.add(x, attn), tape.param(p + "ln1.g"), tape.param(p + "ln1.b"))
        f = tape.gelu(_linear(tape, x, p, "ff.w1", "ff.b1"))
        f = _linear(tape, f, p, "ff.w2", "ff.b2")
        x = tape.layer_norm(tape.add(x, f), tape.param(p + "ln2.g"), tape.param(p + "ln2.b"))
    trace.guarded_rows = tape.guarded_rows - before
    return tape.mean(x, axis=1), trace


def classify(tape: Tape, pooled: Node) -> Node:
    """Dense (linear + GELU) then linear to one logit, squashed to a probability (B,)."""
    hdn = tape.gelu(_linear(tape, pooled, "head.", "w1", "b1"))
    logit = _linear(tape, hdn, "head.", "w2", "b2")
    B = pooled.value.shape[0]
    return tape.sigmoid(tape.reshape(logit, (B,)))


def classify_numpy(pooled: np.ndarray, params: ParamSet) -> np.ndarray:
    hdn = gelu(pooled @ params["head.w1"] + params["head.b1"])
    return sigmoid((hdn @ params["head.w2"] + params["head.b2"])[..., 0])


def forward(tape: Tape, batch: TokenBatch, cfg: ModelConfig, variant: EvatVariant,
            layout: TokenLayout, record: bool = False) -> tuple[Node, AttentionTrace]:
    dtype = tape.params[tape.params.paths()[0]].dtype
    tokens = embed_tokens(tape, batch, variant, layout, dtype=dtype)
    pooled, trace = encoder_forward(tape, tokens, batch.mask, cfg, record)
    return classify(tape, pooled), trace


def batch_loss(params: ParamSet, batch: TokenBatch, labels: np.ndarray, cfg: ModelConfig,
               variant: EvatVariant, layout: TokenLayout, loss_cfg: LossConfig,
               with_grad: bool = True):
    """Mean focal loss of a batch and (optionally) its parameter gradients."""
    tape = Tape(params, grad=with_grad)
    probs, _ = forward(tape, batch, cfg, variant, layout)
    loss = tape.focal_loss(probs, labels, loss_cfg.alpha, loss_cfg.gamma)
    if not with_grad:
        return float(loss.value), None
    grads = tape.backward(loss)
    return float(loss.value), grads


def predict(params: ParamSet, batch: TokenBatch, cfg: ModelConfig, variant: EvatVariant,
            layout: TokenLayout, chunk: int = 1024) -> np.ndarray:
    out = []
    for s in range(0, len(batch), chunk):
        tape = Tape(params, grad=False)
        probs, _ = forward(tape, batch.take(slice(s, s + chunk)), cfg, variant, layout)
        out.append(probs.value)
    return np.concatenate(out) if out else np.zeros(0)


# ---------------------------------------------------------------------------
# binary container (checkpoints and attention traces)
# ---------------------------------------------------------------------------

MAGIC = b"SUMMITCK"
FORMAT_VERSION = 1
_ALIGN = 8


def write_container(path, header: dict, arrays: dict[str, np.ndarray]) -> None:
    """MAGIC, u32 version, u64 header length, JSON header, then raw little-endian arrays."""
    manifest = []
    offset = 0
    blobs = []
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name])
        a = a.astype(a.dtype.newbyteorder("<"), copy=False)
        raw = a.tobytes()
        manifest.append({"name": name, "shape": list(a.shape), "dtype": a.dtype.str,
                         "offset": offset, "nbytes": len(raw)})
        pad = (-len(raw)) % _ALIGN
        blobs.append(raw + b"\0" * pad)
        offset += len(raw) + pad
    head = dict(header)
    head["format_version"] = FORMAT_VERSION
    head["arrays"] = manifest
    hb = json.dumps(head, sort_keys=True, separators=(",", ":"),
                    allow_nan=False).encode("utf-8")
    hb += b" " * ((-len(hb)) % _ALIGN)
    with open(Path(path), "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", FORMAT_VERSION, len(hb)))
        fh.write(hb)
        for b in blobs:
            fh.write(b)


def read_container(path) -> tuple[dict, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise ValueError(f"{path}: not a summit container")
    version, hlen = struct.unpack_from("<IQ", data, 8)
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported container version {version}")
    start = 8 + struct.calcsize("<IQ")
    header = json.loads(data[start:start + hlen].decode("utf-8"))
    base = start + hlen
    arrays = {}
    for item in header.pop("arrays"):
        buf = data[base + item["offset"]: base + item["offset"] + item["nbytes"]]
        arrays[item["name"]] = np.frombuffer(buf, dtype=np.dtype(item["dtype"])).reshape(item["shape"]).copy()
    return header, arrays


def config_to_json(cfg) -> dict:
    return asdict(cfg)
