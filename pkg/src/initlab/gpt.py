"""GPT-2-style decoder with hand-written backpropagation (numpy, float64).

Pre-LN residual blocks::

    x <- x + s * Attn(LN1(x))
    x <- x + s * MLP(LN2(x))        MLP = W2 . gelu(W1 . h)

followed by a final LayerNorm and a linear LM head.  ``s`` is the optional
residual scale (1 by default, ``1/sqrt(n_layers)`` via the config flag).
All linear weights are stored (out, in) and applied as ``h @ W.T + b``.

Parameters live in a flat, ordered ``dict[str, ndarray]`` so optimizers,
checkpoints and instrumentation address them by name.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import ndtr

from .activations import normal_pdf
from .init import FanSpec, InitScheme, init_matrix
from .nn import AdamConfig, AdamState, adam_step, global_norm
from .numerics import ParameterError, RngState, ShapeError, sample_normal

CHECKPOINT_MAGIC = b"INITLAB1"


class StaleCacheError(RuntimeError):
    pass


@dataclass
class GptConfig:
    n_layers: int = 12
    d_model: int = 64
    n_heads: int = 4
    d_ff: int = 256
    vocab_size: int = 256
    ctx_len: int = 128
    residual_scale: float | None = None
    proj_std: float = 0.02
    embedding_init: str = "xavier_normal"
    tie_head: bool = False
    ln_eps: float = 1e-5

    def __post_init__(self):
        if min(self.n_layers, self.d_model, self.n_heads, self.d_ff, self.vocab_size, self.ctx_len) < 1:
            raise ParameterError("all GPT dimensions must be >= 1")
        if self.d_model % self.n_heads:
            raise ParameterError(f"d_model {self.d_model} is not divisible by n_heads {self.n_heads}")
        if self.embedding_init not in ("xavier_normal", "normal"):
            raise ParameterError(f"unknown embedding_init {self.embedding_init!r}")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    @property
    def scale(self) -> float:
        return 1.0 if self.residual_scale is None else float(self.residual_scale)

    def to_json(self) -> dict:
        return asdict(self)


# block-local parameter suffixes and the instrumentation group they belong to
BLOCK_GROUPS = {
    "attn.q.w": "Q", "attn.k.w": "K", "attn.v.w": "V", "attn.o.w": "O",
    "mlp.fc.w": "MLP1", "mlp.proj.w": "MLP2",
}


def block_param_name(layer: int, suffix: str) -> str:
    return f"h{layer}.{suffix}"


class Gpt:
    def __init__(self, config: GptConfig, params: dict[str, np.ndarray] | None = None):
        self.config = config
        self.params = params if params is not None else self._zero_params()
        expected = {k: v.shape for k, v in self._zero_params().items()}
        got = {k: v.shape for k, v in self.params.items()}
        if expected != got:
            raise ShapeError("parameter set does not match the configuration")

    def _zero_params(self) -> dict[str, np.ndarray]:
        c = self.config
        d, f = c.d_model, c.d_ff
        p = {"wte": np.zeros((c.vocab_size, d)), "wpe": np.zeros((c.ctx_len, d))}
        for i in range(c.n_layers):
            b = f"h{i}."
            p[b + "ln1.g"] = np.ones(d)
            p[b + "ln1.b"] = np.zeros(d)
            for name in ("q", "k", "v", "o"):
                p[b + f"attn.{name}.w"] = np.zeros((d, d))
                p[b + f"attn.{name}.b"] = np.zeros(d)
            p[b + "ln2.g"] = np.ones(d)
            p[b + "ln2.b"] = np.zeros(d)
            p[b + "mlp.fc.w"] = np.zeros((f, d))
            p[b + "mlp.fc.b"] = np.zeros(f)
            p[b + "mlp.proj.w"] = np.zeros((d, f))
            p[b + "mlp.proj.b"] = np.zeros(d)
        p["lnf.g"] = np.ones(d)
        p["lnf.b"] = np.zeros(d)
        if not c.tie_head:
            p["head.w"] = np.zeros((c.vocab_size, d))
        return p

    @classmethod
    def initialize(cls, config: GptConfig, rng: RngState) -> "Gpt":
        """Normal(0, proj_std) for every matrix except the token embedding (Xavier-normal)."""
        model = cls(config)
        for name, p in model.params.items():
            if p.ndim != 2:
                continue
            sub = rng.child(name)
            if name == "wte" and config.embedding_init == "xavier_normal":
                # torch convention for a (vocab, d) tensor: fan_in = d, fan_out = vocab
                fan = FanSpec(p.shape[1], p.shape[0])
                model.params[name] = init_matrix(sub, InitScheme.xavier(), fan)
            else:
                model.params[name] = sample_normal(sub, p.size, 0.0, config.proj_std).reshape(p.shape)
        return model

    def decay_mask(self) -> list[bool]:
        """AdamW decay applies to matrices only (no LayerNorm params, no biases)."""
        return [p.ndim == 2 for p in self.params.values()]

    def checksum(self) -> str:
        import hashlib
        h = hashlib.sha256()
        for name, p in self.params.items():
            h.update(name.encode())
            h.update(np.ascontiguousarray(p).tobytes())
        return h.hexdigest()

    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())


# --------------------------------------------------------------------------
# primitives


def layer_norm(x: np.ndarray, gain: np.ndarray, bias: np.ndarray, eps: float = 1e-5):
    """LayerNorm over the last axis; returns ``(y, (xhat, inv_std))``."""
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = np.mean(np.square(xc), axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    return xhat * gain + bias, (xhat, inv)


def layer_norm_backward(dy, gain, cache):
    xhat, inv = cache
    dxhat = dy * gain
    dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                - xhat * np.mean(dxhat * xhat, axis=-1, keepdims=True))
    red = tuple(range(dy.ndim - 1))
    return dx, (dy * xhat).sum(axis=red), dy.sum(axis=red)


def gelu(x):
    return x * ndtr(x)


def gelu_grad(x, cdf=None):
    """Derivative of ``x * Phi(x)``; pass ``cdf = Phi(x)`` to skip recomputing it."""
    if cdf is None:
        cdf = ndtr(x)
    return cdf + x * normal_pdf(x)


_MASKS: dict[int, np.ndarray] = {}


def causal_mask(t: int) -> np.ndarray:
    """Additive (T, T) mask: 0 on and below the diagonal, -inf above."""
    if t not in _MASKS:
        _MASKS[t] = np.where(np.triu(np.ones((t, t), dtype=bool), k=1), -np.inf, 0.0)
    return _MASKS[t]


def masked_softmax(scores: np.ndarray) -> np.ndarray:
    s = scores + causal_mask(scores.shape[-1])
    s -= s.max(axis=-1, keepdims=True)
    np.exp(s, out=s)
    s /= s.sum(axis=-1, keepdims=True)
    return s


def _split_heads(x, n_heads):
    b, t, d = x.shape
    return x.reshape(b, t, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    b, h, t, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, t, h * dh)


def causal_attention(params: dict[str, np.ndarray], layer: int, h: np.ndarray, n_heads: int,
                     return_cache: bool = False):
    """Multi-head causal self-attention of ``h`` (B, T, d) for block ``layer``."""
    pre = f"h{layer}.attn."
    if h.ndim != 3 or h.shape[-1] != params[pre + "q.w"].shape[1]:
        raise ShapeError(f"attention input of shape {h.shape} does not match d_model")
    q = _split_heads(h @ params[pre + "q.w"].T + params[pre + "q.b"], n_heads)
    k = _split_heads(h @ params[pre + "k.w"].T + params[pre + "k.b"], n_heads)
    v = _split_heads(h @ params[pre + "v.w"].T + params[pre + "v.b"], n_heads)
    # scaling q is cheaper than scaling the (T, T) scores
    a = masked_softmax((q * (1.0 / math.sqrt(q.shape[-1]))) @ k.transpose(0, 1, 3, 2))
    o = _merge_heads(a @ v)
    out = o @ params[pre + "o.w"].T + params[pre + "o.b"]
    if return_cache:
        return out, (h, q, k, v, a, o)
    return out


def _attention_backward(params, layer, dout, cache, grads):
    pre = f"h{layer}.attn."
    h, q, k, v, a, o = cache
    b, t, d = dout.shape
    dout2 = dout.reshape(-1, d)
    grads[pre + "o.w"] += dout2.T @ o.reshape(-1, d)
    grads[pre + "o.b"] += dout2.sum(axis=0)
    do = _split_heads(dout @ params[pre + "o.w"], q.shape[1])
    da = do @ v.transpose(0, 1, 3, 2)
    dv = a.transpose(0, 1, 3, 2) @ do
    ds = da
    ds *= a
    ds -= a * ds.sum(axis=-1, keepdims=True)
    scale = 1.0 / math.sqrt(q.shape[-1])
    dq = (ds @ k) * scale
    dk = ds.transpose(0, 1, 3, 2) @ (q * scale)
    h2 = h.reshape(-1, d)
    dh = np.zeros_like(h2)
    for name, dproj in (("q", dq), ("k", dk), ("v", dv)):
        g = _merge_heads(dproj).reshape(-1, d)
        grads[pre + f"{name}.w"] += g.T @ h2
        grads[pre + f"{name}.b"] += g.sum(axis=0)
        dh += g @ params[pre + f"{name}.w"]
    return dh.reshape(b, t, d)


# --------------------------------------------------------------------------
# model forward / backward


@dataclass
class LmBatch:
    token_ids: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        self.token_ids = np.asarray(self.token_ids, dtype=np.int64)
        self.targets = np.asarray(self.targets, dtype=np.int64)
        if self.token_ids.ndim != 2 or self.token_ids.shape != self.targets.shape:
            raise ShapeError(f"token ids {self.token_ids.shape} and targets {self.targets.shape} must be equal 2-D shapes")
        if self.token_ids.shape[0] == 0:
            raise ParameterError("empty batch")


@dataclass
class GptCache:
    batch: LmBatch
    checksum_shapes: tuple
    x0: np.ndarray
    blocks: list = field(default_factory=list)
    lnf: tuple = ()
    hf: np.ndarray | None = None
    probs: np.ndarray | None = None


def _check_ids(config: GptConfig, batch: LmBatch):
    for arr in (batch.token_ids, batch.targets):
        if arr.size and (arr.min() < 0 or arr.max() >= config.vocab_size):
            raise ParameterError(f"token id outside [0, {config.vocab_size})")
    if batch.token_ids.shape[1] > config.ctx_len or batch.token_ids.shape[1] < 1:
        raise ParameterError(f"sequence length {batch.token_ids.shape[1]} outside [1, {config.ctx_len}]")


def _head(model: Gpt) -> np.ndarray:
    return model.params["wte"] if model.config.tie_head else model.params["head.w"]


def gpt_logits(model: Gpt, token_ids) -> tuple[np.ndarray, GptCache]:
    """Logits (B, T, V) plus the cache needed for backprop."""
    c, p = model.config, model.params
    ids = np.asarray(token_ids, dtype=np.int64)
    batch = LmBatch(ids, np.zeros_like(ids))
    _check_ids(c, batch)
    t = ids.shape[1]
    x = p["wte"][ids] + p["wpe"][:t]
    cache = GptCache(batch, tuple(v.shape for v in p.values()), x)
    s = c.scale
    for i in range(c.n_layers):
        b = f"h{i}."
        h1, ln1 = layer_norm(x, p[b + "ln1.g"], p[b + "ln1.b"], c.ln_eps)
        att, att_cache = causal_attention(p, i, h1, c.n_heads, return_cache=True)
        x = x + s * att
        h2, ln2 = layer_norm(x, p[b + "ln2.g"], p[b + "ln2.b"], c.ln_eps)
        u = h2 @ p[b + "mlp.fc.w"].T + p[b + "mlp.fc.b"]
        cdf = ndtr(u)
        g = u * cdf
        m = g @ p[b + "mlp.proj.w"].T + p[b + "mlp.proj.b"]
        x = x + s * m
        cache.blocks.append((ln1, att_cache, ln2, h2, u, cdf, g))
    hf, cache.lnf = layer_norm(x, p["lnf.g"], p["lnf.b"], c.ln_eps)
    cache.hf = hf
    return hf @ _head(model).T, cache


def gpt_forward_loss(model: Gpt, batch: LmBatch) -> tuple[float, GptCache]:
    """Mean next-token cross-entropy over every (row, position)."""
    _check_ids(model.config, batch)
    logits, cache = gpt_logits(model, batch.token_ids)
    cache.batch = batch
    b, t, v = logits.shape
    flat = logits.reshape(-1, v)
    flat = flat - flat.max(axis=1, keepdims=True)
    lse = np.log(np.exp(flat).sum(axis=1))
    tgt = batch.targets.reshape(-1)
    loss = float(np.mean(lse - flat[np.arange(flat.shape[0]), tgt]))
    probs = np.exp(flat - lse[:, None])
    cache.probs = probs
    return loss, cache


def gpt_backward(model: Gpt, cache: GptCache, dlogits: np.ndarray | None = None,
                 return_input_grad: bool = False):
    """Gradients for every parameter (same keys as ``model.params``).

    ``dlogits`` defaults to the gradient of the mean cross-entropy stored in
    the cache.  With ``return_input_grad`` the gradient w.r.t. the summed
    token+position embeddings is returned as well.
    """
    c, p = model.config, model.params
    if cache.checksum_shapes != tuple(v.shape for v in p.values()) or len(cache.blocks) != c.n_layers:
        raise StaleCacheError("cache does not match the model")
    b, t = cache.batch.token_ids.shape
    d, v = c.d_model, c.vocab_size
    if dlogits is None:
        if cache.probs is None:
            raise StaleCacheError("cache carries no loss; pass dlogits explicitly")
        dl = cache.probs.copy()
        dl[np.arange(b * t), cache.batch.targets.reshape(-1)] -= 1.0
        dl /= b * t
    else:
        dl = np.asarray(dlogits, dtype=np.float64).reshape(b * t, v)
    grads = {k: np.zeros_like(val) for k, val in p.items()}
    head_key = "wte" if c.tie_head else "head.w"
    grads[head_key] += dl.T @ cache.hf.reshape(-1, d)
    dhf = (dl @ _head(model)).reshape(b, t, d)
    dx, grads["lnf.g"], grads["lnf.b"] = layer_norm_backward(dhf, p["lnf.g"], cache.lnf)
    s = c.scale
    for i in range(c.n_layers - 1, -1, -1):
        pre = f"h{i}."
        ln1, att_cache, ln2, h2, u, cdf, g = cache.blocks[i]
        dm = (s * dx).reshape(-1, d)
        grads[pre + "mlp.proj.w"] += dm.T @ g.reshape(-1, c.d_ff)
        grads[pre + "mlp.proj.b"] += dm.sum(axis=0)
        du = (dm @ p[pre + "mlp.proj.w"]) * gelu_grad(u, cdf).reshape(-1, c.d_ff)
        grads[pre + "mlp.fc.w"] += du.T @ h2.reshape(-1, d)
        grads[pre + "mlp.fc.b"] += du.sum(axis=0)
        dh2 = (du @ p[pre + "mlp.fc.w"]).reshape(b, t, d)
        dln, grads[pre + "ln2.g"], grads[pre + "ln2.b"] = layer_norm_backward(dh2, p[pre + "ln2.g"], ln2)
        dx = dx + dln
        dh1 = _attention_backward(p, i, s * dx, att_cache, grads)
        dln, grads[pre + "ln1.g"], grads[pre + "ln1.b"] = layer_norm_backward(dh1, p[pre + "ln1.g"], ln1)
        dx = dx + dln
    ids = cache.batch.token_ids.reshape(-1)
    onehot = np.zeros((ids.size, v))
    onehot[np.arange(ids.size), ids] = 1.0
    grads["wte"] += onehot.T @ dx.reshape(-1, d)
    grads["wpe"][:t] += dx.sum(axis=0)
    if return_input_grad:
        return grads, dx
    return grads


# --------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class InvariantCheck:
    causal: bool
    max_row_sum_error: float
    probabilities_in_unit_interval: bool

    @property
    def ok(self) -> bool:
        return self.causal and self.max_row_sum_error <= 1e-12 and self.probabilities_in_unit_interval


def check_invariants(model: Gpt, token_ids, position: int | None = None) -> InvariantCheck:
    """Causality and attention-softmax checks on one probe batch.

    The token at ``position`` (default: the last) is replaced; logits at
    every earlier position must stay bit-identical.
    """
    ids = np.array(token_ids, dtype=np.int64, copy=True)
    t = ids.shape[1]
    position = t - 1 if position is None else position
    if not 0 < position < t:
        raise ParameterError(f"probe position {position} outside (0, {t})")
    logits, cache = gpt_logits(model, ids)
    ids[:, position] = (ids[:, position] + 1) % model.config.vocab_size
    perturbed, _ = gpt_logits(model, ids)
    causal = bool(np.array_equal(logits[:, :position], perturbed[:, :position]))
    row_err, in_unit = 0.0, True
    for block in cache.blocks:
        a = block[1][4]
        row_err = max(row_err, float(np.max(np.abs(a.sum(axis=-1) - 1.0))))
        in_unit = in_unit and bool(a.min() >= 0.0 and a.max() <= 1.0)
    return InvariantCheck(causal, row_err, in_unit)


def gpt_optimizer(model: Gpt, lr: float = 1e-4, weight_decay: float = 0.01, **kw) -> AdamState:
    cfg = AdamConfig(lr=lr, weight_decay=weight_decay, decoupled=True, **kw)
    return AdamState(list(model.params.values()), cfg, model.decay_mask())


@dataclass
class StepRecord:
    step: int
    loss: float
    grad_norm: float
    diverged: bool


def gpt_train_step(model: Gpt, optimizer: AdamState, batch: LmBatch) -> StepRecord:
    """One forward/backward/AdamW update; a non-finite loss or gradient skips the update."""
    with np.errstate(over="ignore", invalid="ignore"):
        loss, cache = gpt_forward_loss(model, batch)
        if not math.isfinite(loss):
            return StepRecord(optimizer.t, loss, float("nan"), True)
        grads = gpt_backward(model, cache)
    glist = [grads[k] for k in model.params]
    norm = global_norm(glist)
    ok = math.isfinite(norm) and adam_step(optimizer, list(model.params.values()), glist)
    return StepRecord(optimizer.t, loss, norm, not ok)


def sample_batch(tokens: np.ndarray, batch_size: int, ctx_len: int, rng: np.random.Generator) -> LmBatch:
    """Random contiguous windows; targets are the inputs shifted by one."""
    if len(tokens) < ctx_len + 1:
        raise ParameterError(f"need at least {ctx_len + 1} tokens, have {len(tokens)}")
    starts = rng.integers(0, len(tokens) - ctx_len, size=batch_size)
    idx = starts[:, None] + np.arange(ctx_len)[None, :]
    return LmBatch(tokens[idx], tokens[idx + 1])


# --------------------------------------------------------------------------
# checkpoints
#
# layout (little-endian):
#   8 bytes  magic "INITLAB1"
#   u64      config JSON length, then the UTF-8 JSON bytes
#   repeated until EOF, one record per tensor:
#     u32 name length, name bytes (UTF-8)
#     u32 ndim, ndim x u64 dims
#     prod(dims) x f64 row-major data


def save_checkpoint(model: Gpt, path) -> None:
    cfg = json.dumps(model.config.to_json(), sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<Q", len(cfg)))
        f.write(cfg)
        for name, arr in model.params.items():
            raw = name.encode()
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> Gpt:
    with open(path, "rb") as f:
        data = f.read()
    if data[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: bad checkpoint magic {data[:8]!r}")
    try:
        (n,) = struct.unpack_from("<Q", data, 8)
        config = GptConfig(**json.loads(data[16:16 + n].decode()))
        pos = 16 + n
        params = {}
        while pos < len(data):
            (ln,) = struct.unpack_from("<I", data, pos)
            name = data[pos + 4:pos + 4 + ln].decode()
            pos += 4 + ln
            (ndim,) = struct.unpack_from("<I", data, pos)
            shape = struct.unpack_from(f"<{ndim}Q", data, pos + 4)
            pos += 4 + 8 * ndim
            count = int(np.prod(shape)) if ndim else 1
            if pos + 8 * count > len(data):
                raise ValueError(f"{path}: tensor {name!r} truncated at offset {pos}")
            params[name] = np.frombuffer(data, dtype="<f8", count=count, offset=pos).reshape(shape).astype(np.float64)
            pos += 8 * count
    except struct.error as exc:
        raise ValueError(f"{path}: truncated checkpoint ({exc})") from None
    return Gpt(config, params)
