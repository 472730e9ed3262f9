"""Minimal decoder-only transformer over token sequences.

Pre-norm blocks (masked self-attention + GELU feed-forward), learned
positional embeddings, and an output projection tied to the token
embedding.  The batch sampler draws blocks from within single tracks only,
never across a track boundary.  Training is plain adaptive-moment descent
with gradient clipping and a warmup-cosine schedule; everything is
deterministic for a fixed seed when torch runs single-threaded.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import geocodec as gc
from .errors import (
    ConfigError,
    DataError,
    InputError,
    ParseError,
    TrainingDivergence,
)

IGNORE_INDEX = -1

CHECKPOINT_MAGIC = b"TGPT"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int = 65536
    block_size: int = 128
    n_layer: int = 4
    n_head: int = 4
    d_model: int = 128
    dropout: float = 0.0
    seed: int = 1337

    def __post_init__(self) -> None:
        if self.d_model % self.n_head != 0:
            raise ConfigError(f"d_model {self.d_model} not divisible by n_head {self.n_head}")
        if self.block_size < 2:
            raise ConfigError(f"block_size must be >= 2: {self.block_size}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1): {self.dropout}")
        if self.vocab_size < 2:
            raise ConfigError(f"vocab_size must be >= 2: {self.vocab_size}")
        if self.n_layer < 1 or self.n_head < 1 or self.d_model < 1:
            raise ConfigError("n_layer, n_head, d_model must be positive")


@dataclass(frozen=True)
class SamplerConfig:
    temperature: float = 0.92
    k_samples: int = 16
    max_steps: int = 48
    seed: int = 1337

    def __post_init__(self) -> None:
        if self.temperature <= 0:
            raise ConfigError(f"temperature must be positive: {self.temperature}")
        if self.k_samples < 1 or self.max_steps < 1:
            raise ConfigError("k_samples and max_steps must be positive")


@dataclass
class Batch:
    inputs: torch.Tensor  # [batch, block] int64
    targets: torch.Tensor  # [batch, block] int64, IGNORE_INDEX where padded


class _SelfAttention(nn.Module):
    def __init__(self, cfg: ModelConfig) -> None:
        super().__init__()
        self.n_head = cfg.n_head
        self.head_dim = cfg.d_model // cfg.n_head
        self.qkv = nn.Linear(cfg.d_model, 3 * cfg.d_model, bias=False)
        self.proj = nn.Linear(cfg.d_model, cfg.d_model, bias=False)
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, x, past_kv=None):
        B, T, C = x.shape
        q, k, v = self.qkv(x).split(C, dim=2)
        q = q.view(B, T, self.n_head, self.head_dim).transpose(1, 2)
        k = k.view(B, T, self.n_head, self.head_dim).transpose(1, 2)
        v = v.view(B, T, self.n_head, self.head_dim).transpose(1, 2)
        past_len = 0
        if past_kv is not None:
            pk, pv = past_kv
            past_len = pk.shape[2]
            k = torch.cat([pk, k], dim=2)
            v = torch.cat([pv, v], dim=2)
        att = (q @ k.transpose(-2, -1)) / math.sqrt(self.head_dim)
        if T > 1 or past_len == 0:
            # query i may attend keys 0..past_len+i
            total = past_len + T
            mask = torch.ones(T, total, dtype=torch.bool, device=x.device).tril(past_len)
            att = att.masked_fill(~mask, float("-inf"))
        att = F.softmax(att, dim=-1)
        att = self.drop(att)
        y = (att @ v).transpose(1, 2).reshape(B, T, C)
        return self.drop(self.proj(y)), (k, v)


class _Block(nn.Module):
    def __init__(self, cfg: ModelConfig) -> None:
        super().__init__()
        self.ln1 = nn.LayerNorm(cfg.d_model)
        self.attn = _SelfAttention(cfg)
        self.ln2 = nn.LayerNorm(cfg.d_model)
        self.fc1 = nn.Linear(cfg.d_model, 4 * cfg.d_model, bias=False)
        self.fc2 = nn.Linear(4 * cfg.d_model, cfg.d_model, bias=False)
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, x, past_kv=None):
        a, kv = self.attn(self.ln1(x), past_kv)
        x = x + a
        x = x + self.drop(self.fc2(F.gelu(self.fc1(self.ln2(x)))))
        return x, kv


class GPT(nn.Module):
    def __init__(self, cfg: ModelConfig) -> None:
        super().__init__()
        self.cfg = cfg
        self.wte = nn.Embedding(cfg.vocab_size, cfg.d_model)
        self.wpe = nn.Embedding(cfg.block_size, cfg.d_model)
        self.drop = nn.Dropout(cfg.dropout)
        self.blocks = nn.ModuleList(_Block(cfg) for _ in range(cfg.n_layer))
        self.ln_f = nn.LayerNorm(cfg.d_model)
        self.init_weights()

    def init_weights(self) -> None:
        g = torch.Generator().manual_seed(self.cfg.seed)
        with torch.no_grad():
            for name, p in self.named_parameters():
                if p.dim() >= 2:
                    p.copy_(torch.randn(p.shape, generator=g) * 0.02)
                elif "weight" in name:  # norm gains
                    p.fill_(1.0)
                else:
                    p.zero_()

    def backbone(self, idx, cache=None, use_cache=False):
        """Embeddings + blocks + final norm; returns hidden states (and kv cache)."""
        B, T = idx.shape
        past_len = cache[0][0].shape[2] if cache else 0
        if past_len + T > self.cfg.block_size:
            raise InputError(
                f"sequence length {past_len + T} exceeds block size {self.cfg.block_size}"
            )
        pos = torch.arange(past_len, past_len + T, device=idx.device)
        x = self.drop(self.wte(idx) + self.wpe(pos))
        new_cache = [] if use_cache else None
        for i, blk in enumerate(self.blocks):
            x, kv = blk(x, cache[i] if cache else None)
            if use_cache:
                new_cache.append(kv)
        return self.ln_f(x), new_cache

    def forward(self, idx, cache=None, use_cache=False):
        x, new_cache = self.backbone(idx, cache, use_cache)
        logits = F.linear(x, self.wte.weight)  # tied output projection
        if use_cache:
            return logits, new_cache
        return logits


@dataclass
class Checkpoint:
    config: ModelConfig
    model: GPT
    codec: gc.CodecConfig | None = None
    dt: float | None = None
    step: int = 0
    opt_state: dict | None = None


@dataclass(frozen=True)
class TrainParams:
    steps: int
    batch_size: int = 8
    lr: float = 3e-4
    min_lr: float | None = None  # defaults to lr / 10
    warmup_steps: int = 100
    total_steps: int | None = None  # cosine horizon; defaults to start + steps
    grad_clip: float = 1.0
    weight_decay: float = 0.0
    betas: tuple[float, float] = (0.9, 0.95)
    eps: float = 1e-8
    seed: int | None = None  # data order; defaults to the model seed
    log_every: int = 50
    log_path: str | None = None


def init_model(config: ModelConfig) -> Checkpoint:
    return Checkpoint(config=config, model=GPT(config))


def param_count(config: ModelConfig) -> int:
    d = config.d_model
    per_block = 4 * d * d + 8 * d * d + 2 * (2 * d)
    return (
        config.vocab_size * d
        + config.block_size * d
        + config.n_layer * per_block
        + 2 * d
    )


def _as_token_tensor(tokens, vocab_size: int) -> torch.Tensor:
    t = torch.as_tensor(tokens, dtype=torch.long)
    if t.dim() == 1:
        t = t.unsqueeze(0)
    if t.dim() != 2:
        raise InputError(f"tokens must be [batch, length], got shape {tuple(t.shape)}")
    if t.numel() == 0:
        raise InputError("empty token sequence")
    if int(t.min()) < 0 or int(t.max()) >= vocab_size:
        raise InputError("token id out of vocabulary range")
    return t


def forward(ckpt: Checkpoint, tokens) -> torch.Tensor:
    """Logits [batch, len, vocab] for token rows no longer than the block size."""
    t = _as_token_tensor(tokens, ckpt.config.vocab_size)
    ckpt.model.eval()
    with torch.no_grad():
        return ckpt.model(t)


def loss(logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Mean next-token cross-entropy; IGNORE_INDEX positions are masked out."""
    if logits.shape[:-1] != targets.shape:
        raise InputError(
            f"logits {tuple(logits.shape)} do not match targets {tuple(targets.shape)}"
        )
    return F.cross_entropy(
        logits.reshape(-1, logits.shape[-1]),
        targets.reshape(-1),
        ignore_index=IGNORE_INDEX,
    )


def _track_tokens(track) -> list[int]:
    return track.tokens if hasattr(track, "tokens") else track


def sample_batch(corpus, block_size: int, batch_size: int, rng: np.random.Generator) -> Batch:
    """Draw rows from single tracks at random offsets.

    A track is chosen with probability proportional to its eligible offset
    count, so every (track, offset) pair is uniform.  Tracks shorter than
    block+1 contribute one whole-track row padded with IGNORE_INDEX targets.
    """
    seqs = [_track_tokens(t) for t in corpus]
    eligible = []
    weights = []
    for i, s in enumerate(seqs):
        if len(s) < 2:
            continue
        eligible.append(i)
        weights.append(max(len(s) - block_size, 1))
    if not eligible:
        raise DataError("sample_batch: no track has at least 2 tokens")
    cum = np.cumsum(weights)
    inputs = torch.zeros(batch_size, block_size, dtype=torch.long)
    targets = torch.full((batch_size, block_size), IGNORE_INDEX, dtype=torch.long)
    for b in range(batch_size):
        pick = int(np.searchsorted(cum, rng.integers(cum[-1]), side="right"))
        s = seqs[eligible[pick]]
        if len(s) >= block_size + 1:
            off = int(rng.integers(len(s) - block_size))
            row = s[off : off + block_size + 1]
        else:
            row = s
        n = len(row) - 1
        inputs[b, :n] = torch.as_tensor(row[:-1], dtype=torch.long)
        targets[b, :n] = torch.as_tensor(row[1:], dtype=torch.long)
    return Batch(inputs=inputs, targets=targets)


def _batch_loss(model: GPT, batch: Batch) -> torch.Tensor:
    """Cross-entropy computed only at positions with real targets.

    Skipping padded positions keeps the vocab-wide projection, by far the
    dominant cost on CPU, proportional to the real token count.
    """
    h, _ = model.backbone(batch.inputs)
    mask = batch.targets.ne(IGNORE_INDEX)
    if not bool(mask.any()):
        raise DataError("batch contains no valid targets")
    logits = F.linear(h[mask], model.wte.weight)
    return F.cross_entropy(logits, batch.targets[mask])


def _lr_at(step: int, p: TrainParams, total: int) -> float:
    min_lr = p.min_lr if p.min_lr is not None else p.lr / 10.0
    if p.warmup_steps > 0 and step <= p.warmup_steps:
        return p.lr * step / p.warmup_steps
    if step >= total:
        return min_lr
    frac = (step - p.warmup_steps) / max(total - p.warmup_steps, 1)
    return min_lr + 0.5 * (1.0 + math.cos(math.pi * frac)) * (p.lr - min_lr)


def train(ckpt: Checkpoint, corpus, params: TrainParams) -> Checkpoint:
    """Run adaptive-moment descent; mutates and returns the checkpoint.

    Resumable: moment buffers and the global step live on the checkpoint,
    and data order is keyed by (seed, global step), so a save/load/continue
    reproduces the unbroken run exactly.
    """
    model = ckpt.model
    model.train()
    seed = params.seed if params.seed is not None else ckpt.config.seed
    torch.manual_seed(seed)  # only dropout draws from the global stream
    total = params.total_steps if params.total_steps is not None else ckpt.step + params.steps
    beta1, beta2 = params.betas
    named = [(n, p) for n, p in model.named_parameters()]
    if ckpt.opt_state is None:
        ckpt.opt_state = {
            n: (torch.zeros_like(p), torch.zeros_like(p)) for n, p in named
        }
    log_f = open(params.log_path, "a", encoding="utf-8") if params.log_path else None
    for _ in range(params.steps):
        rng = np.random.default_rng([seed, ckpt.step])
        batch = sample_batch(corpus, ckpt.config.block_size, params.batch_size, rng)
        step_loss = _batch_loss(model, batch)
        if not torch.isfinite(step_loss):
            raise TrainingDivergence(
                f"non-finite loss {step_loss.item()} at step {ckpt.step + 1}"
            )
        model.zero_grad(set_to_none=True)
        step_loss.backward()
        t = ckpt.step + 1
        lr_t = _lr_at(t, params, total)
        with torch.no_grad():
            if params.grad_clip > 0:
                sq = sum(float(p.grad.pow(2).sum()) for _, p in named if p.grad is not None)
                norm = math.sqrt(sq)
                if norm > params.grad_clip:
                    scale = params.grad_clip / norm
                    for _, p in named:
                        if p.grad is not None:
                            p.grad.mul_(scale)
            bc1 = 1.0 - beta1**t
            bc2 = 1.0 - beta2**t
            for n, p in named:
                if p.grad is None:
                    continue
                m, v = ckpt.opt_state[n]
                m.mul_(beta1).add_(p.grad, alpha=1.0 - beta1)
                v.mul_(beta2).addcmul_(p.grad, p.grad, value=1.0 - beta2)
                denom = (v / bc2).sqrt_().add_(params.eps)
                p.addcdiv_(m, denom, value=-lr_t / bc1)
                if params.weight_decay > 0 and p.dim() >= 2:
                    p.mul_(1.0 - lr_t * params.weight_decay)
        ckpt.step = t
        if log_f and params.log_every > 0 and (t % params.log_every == 0 or t == 1):
            log_f.write(f"{t} {step_loss.item():.6f} {lr_t:.6e}\n")
            log_f.flush()
    if log_f:
        log_f.close()
    return ckpt


def _sample_from_logits(logits: torch.Tensor, temperature: float, rng: np.random.Generator) -> int:
    z = logits.detach().to(torch.float64).numpy() / temperature
    z -= z.max()
    p = np.exp(z)
    p /= p.sum()
    u = rng.random()
    idx = int(np.searchsorted(np.cumsum(p), u, side="right"))
    return min(idx, len(p) - 1)


def generate(
    ckpt: Checkpoint, prompt: list[int], sampler: SamplerConfig, rng: np.random.Generator
) -> list[int]:
    """Append max_steps temperature-sampled tokens, sliding the context window."""
    if not prompt:
        raise InputError("generate: empty prompt")
    block = ckpt.config.block_size
    if len(prompt) > block:
        raise InputError(f"prompt length {len(prompt)} exceeds block size {block}")
    rows = generate_rows(ckpt, prompt, sampler, [rng])
    return rows[0]


def generate_rows(
    ckpt: Checkpoint,
    prompt: list[int],
    sampler: SamplerConfig,
    rngs: list[np.random.Generator],
) -> list[list[int]]:
    """Batched generation: one independent RNG stream per output row."""
    model = ckpt.model
    model.eval()
    block = ckpt.config.block_size
    K = len(rngs)
    prompt_t = _as_token_tensor(prompt, ckpt.config.vocab_size)
    with torch.no_grad():
        logits, cache = model(prompt_t, use_cache=True)
        cache = [
            (k.expand(K, -1, -1, -1).contiguous(), v.expand(K, -1, -1, -1).contiguous())
            for k, v in cache
        ]
        last = logits[0, -1].expand(K, -1)
        rows = [list(prompt) for _ in range(K)]
        out = [[] for _ in range(K)]
        for step in range(sampler.max_steps):
            toks = [
                _sample_from_logits(last[r], sampler.temperature, rngs[r])
                for r in range(K)
            ]
            for r in range(K):
                out[r].append(toks[r])
                rows[r].append(toks[r])
            if step == sampler.max_steps - 1:
                break
            if cache[0][0].shape[2] >= block:
                # window full: rebuild the cache from the trailing context
                windows = torch.as_tensor(
                    [r[-(block - 1) :] for r in rows], dtype=torch.long
                )
                logits, cache = model(windows, use_cache=True)
                last = logits[:, -1]
            else:
                step_t = torch.as_tensor(toks, dtype=torch.long).unsqueeze(1)
                logits, cache = model(step_t, cache=cache, use_cache=True)
                last = logits[:, -1]
    return out


def gradient_check(
    ckpt: Checkpoint,
    batch: Batch | None = None,
    n_coords: int = 40,
    step_size: float = 1e-5,
    seed: int = 0,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Runs a double-precision clone of the model; intended for small configs
    where a few hundred loss evaluations are cheap.
    """
    cfg = ckpt.config
    rng = np.random.default_rng(seed)
    if batch is None:
        toks = rng.integers(0, cfg.vocab_size, size=(2, min(cfg.block_size, 16)))
        batch = Batch(
            inputs=torch.as_tensor(toks[:, :-1]),
            targets=torch.as_tensor(toks[:, 1:]),
        )
    model64 = GPT(cfg).double()
    model64.load_state_dict(
        {k: v.double() for k, v in ckpt.model.state_dict().items()}
    )
    model64.eval()  # dropout off: the loss must be a deterministic function

    def eval_loss() -> torch.Tensor:
        return _batch_loss(model64, batch)

    loss_val = eval_loss()
    model64.zero_grad(set_to_none=True)
    loss_val.backward()
    params = [p for p in model64.parameters()]
    sizes = np.array([p.numel() for p in params])
    cum = np.cumsum(sizes)
    max_rel = 0.0
    with torch.no_grad():
        for _ in range(n_coords):
            flat_idx = int(rng.integers(cum[-1]))
            pi = int(np.searchsorted(cum, flat_idx, side="right"))
            off = flat_idx - (cum[pi - 1] if pi > 0 else 0)
            p = params[pi]
            orig = p.view(-1)[off].item()
            analytic = p.grad.view(-1)[off].item() if p.grad is not None else 0.0
            p.view(-1)[off] = orig + step_size
            lp = eval_loss().item()
            p.view(-1)[off] = orig - step_size
            lm = eval_loss().item()
            p.view(-1)[off] = orig
            fd = (lp - lm) / (2 * step_size)
            rel = abs(fd - analytic) / max(abs(fd), abs(analytic), 1e-8)
            max_rel = max(max_rel, rel)
    return max_rel


def _header_text(ckpt: Checkpoint) -> str:
    cfg = ckpt.config
    lines = [
        f"format_version = {CHECKPOINT_VERSION}",
        f"vocab_size = {cfg.vocab_size}",
        f"block_size = {cfg.block_size}",
        f"n_layer = {cfg.n_layer}",
        f"n_head = {cfg.n_head}",
        f"d_model = {cfg.d_model}",
        f"dropout = {cfg.dropout!r}",
        f"seed = {cfg.seed}",
        f"step = {ckpt.step}",
        f"dt = {'none' if ckpt.dt is None else repr(ckpt.dt)}",
    ]
    if ckpt.codec is not None:
        for k, v in ckpt.codec.to_fields().items():
            lines.append(f"codec_{k} = {v}")
    return "\n".join(lines) + "\n"


def _write_tensor(f, name: str, tensor: torch.Tensor) -> None:
    data = tensor.detach().to(torch.float32).contiguous().numpy()
    name_b = name.encode("utf-8")
    f.write(struct.pack("<H", len(name_b)))
    f.write(name_b)
    f.write(struct.pack("<B", data.ndim))
    for d in data.shape:
        f.write(struct.pack("<I", d))
    f.write(data.astype("<f4", copy=False).tobytes())


def save_checkpoint(ckpt: Checkpoint, path, include_optimizer: bool = True) -> None:
    """Versioned binary container: text header, then named float32 tensors."""
    tensors: list[tuple[str, torch.Tensor]] = list(ckpt.model.state_dict().items())
    if include_optimizer and ckpt.opt_state is not None:
        for n, (m, v) in ckpt.opt_state.items():
            tensors.append((f"opt.m.{n}", m))
            tensors.append((f"opt.v.{n}", v))
    header = _header_text(ckpt).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        f.write(struct.pack("<I", len(tensors)))
        for name, tensor in tensors:
            _write_tensor(f, name, tensor)


def _read_exact(f, n: int) -> bytes:
    b = f.read(n)
    if len(b) != n:
        raise ParseError("truncated checkpoint file")
    return b


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        if _read_exact(f, 4) != CHECKPOINT_MAGIC:
            raise ParseError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", _read_exact(f, 4))
        if version != CHECKPOINT_VERSION:
            raise ParseError(f"{path}: unsupported checkpoint version {version}")
        (hlen,) = struct.unpack("<I", _read_exact(f, 4))
        fields = {}
        for line in _read_exact(f, hlen).decode("utf-8").splitlines():
            if "=" in line:
                k, _, v = line.partition("=")
                fields[k.strip()] = v.strip()
        try:
            cfg = ModelConfig(
                vocab_size=int(fields["vocab_size"]),
                block_size=int(fields["block_size"]),
                n_layer=int(fields["n_layer"]),
                n_head=int(fields["n_head"]),
                d_model=int(fields["d_model"]),
                dropout=float(fields["dropout"]),
                seed=int(fields["seed"]),
            )
            step = int(fields["step"])
            dt = None if fields["dt"] == "none" else float(fields["dt"])
        except (KeyError, ValueError) as e:
            raise ParseError(f"{path}: bad checkpoint header: {e}") from e
        codec = None
        if "codec_prefix_bits" in fields:
            codec = gc.CodecConfig.from_fields(
                {k[len("codec_") :]: v for k, v in fields.items() if k.startswith("codec_")}
            )
        (n_tensors,) = struct.unpack("<I", _read_exact(f, 4))
        tensors: dict[str, torch.Tensor] = {}
        for _ in range(n_tensors):
            (name_len,) = struct.unpack("<H", _read_exact(f, 2))
            name = _read_exact(f, name_len).decode("utf-8")
            (rank,) = struct.unpack("<B", _read_exact(f, 1))
            dims = [struct.unpack("<I", _read_exact(f, 4))[0] for _ in range(rank)]
            count = int(np.prod(dims)) if dims else 1
            buf = _read_exact(f, 4 * count)
            arr = np.frombuffer(buf, dtype="<f4").reshape(dims).copy()
            tensors[name] = torch.from_numpy(arr)
    model = GPT(cfg)
    state = {k: v for k, v in tensors.items() if not k.startswith("opt.")}
    try:
        model.load_state_dict(state)
    except RuntimeError as e:
        raise ParseError(f"{path}: weight shapes do not match config: {e}") from e
    opt_state = None
    m_names = {k[len("opt.m.") :] for k in tensors if k.startswith("opt.m.")}
    if m_names:
        opt_state = {
            n: (tensors[f"opt.m.{n}"], tensors[f"opt.v.{n}"]) for n in sorted(m_names)
        }
    return Checkpoint(config=cfg, model=model, codec=codec, dt=dt, step=step, opt_state=opt_state)
