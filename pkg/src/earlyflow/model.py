"""Multi-domain transformer for early classification of flow prefixes.

The input series is widened with the real and imaginary parts of its 2D
inverse transform (keeping amplitude information that per-row normalization
would otherwise erase on narrow inputs), projected to the model width, tagged
with sinusoidal positions, and prefixed with a learned classification token.
Encoder blocks use multi-domain attention: the usual scaled-dot-product heads
plus an equal number of heads whose queries, keys and values are transformed
along the sequence axis; those heads score with the real part of the cross
spectrum and mix the real part of the transformed values. Both head families
share the same Q/K/V projections, so turning the frequency path off only
shrinks the output projection.

use_frequency_heads=False disables both the input widening and the frequency
heads, giving the plain transformer ablation.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, const, param
from .earliness import PrefixSpec, take_prefix
from .fourier import fft_2d

LN_EPS = 1e-5
CHECKPOINT_FORMAT = "earlyflow-checkpoint-v1"


@dataclass
class MdtConfig:
    d_in: int
    n_classes: int
    d_model: int = 64
    n_heads: int = 4
    n_blocks: int = 2
    d_ff: int = 128
    max_len: int = 512
    dropout: float = 0.1
    use_frequency_heads: bool = True

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        for name in ("d_in", "n_classes", "d_model", "n_heads", "n_blocks", "d_ff", "max_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


@dataclass
class MdMhaParams:
    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor


@dataclass
class BlockParams:
    attn: MdMhaParams
    ln1_gain: Tensor
    ln1_bias: Tensor
    ff_w1: Tensor
    ff_b1: Tensor
    ff_w2: Tensor
    ff_b2: Tensor
    ln2_gain: Tensor
    ln2_bias: Tensor


@dataclass
class AttentionTrace:
    """Numpy snapshots of one attention application, for inspection/tests."""
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    q_freq: np.ndarray
    k_freq: np.ndarray
    v_freq: np.ndarray
    time_scores: np.ndarray
    freq_scores: np.ndarray | None
    heads: np.ndarray


class MdtModel:
    def __init__(self, config: MdtConfig, seed: int):
        self.config = config
        self.seed = seed
        self.classes: tuple | None = None  # label order backing the head, set by training
        self.params: dict = {}
        self.blocks: list = []
        rng = np.random.default_rng(seed)

        def glorot(name, fan_in, fan_out, shape=None):
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            t = param(rng.uniform(-limit, limit, size=shape or (fan_in, fan_out)))
            self.params[name] = t
            return t

        def vector(name, size, fill):
            t = param(np.full(size, fill, dtype=np.float64))
            self.params[name] = t
            return t

        c = config
        d_feat = 3 * c.d_in if c.use_frequency_heads else c.d_in
        self.input_w = glorot("input_proj.weight", d_feat, c.d_model)
        self.input_b = vector("input_proj.bias", c.d_model, 0.0)
        self.cls_token = glorot("cls_token", 1, c.d_model, shape=(1, c.d_model))
        dv = c.d_model // c.n_heads
        concat_width = 2 * c.n_heads * dv if c.use_frequency_heads else c.n_heads * dv
        for b in range(c.n_blocks):
            prefix = f"blocks.{b}"
            attn = MdMhaParams(
                w_q=glorot(f"{prefix}.attn.w_q", c.d_model, c.d_model),
                w_k=glorot(f"{prefix}.attn.w_k", c.d_model, c.d_model),
                w_v=glorot(f"{prefix}.attn.w_v", c.d_model, c.d_model),
                w_o=glorot(f"{prefix}.attn.w_o", concat_width, c.d_model),
            )
            self.blocks.append(BlockParams(
                attn=attn,
                ln1_gain=vector(f"{prefix}.ln1.gain", c.d_model, 1.0),
                ln1_bias=vector(f"{prefix}.ln1.bias", c.d_model, 0.0),
                ff_w1=glorot(f"{prefix}.ff.w1", c.d_model, c.d_ff),
                ff_b1=vector(f"{prefix}.ff.b1", c.d_ff, 0.0),
                ff_w2=glorot(f"{prefix}.ff.w2", c.d_ff, c.d_model),
                ff_b2=vector(f"{prefix}.ff.b2", c.d_model, 0.0),
                ln2_gain=vector(f"{prefix}.ln2.gain", c.d_model, 1.0),
                ln2_bias=vector(f"{prefix}.ln2.bias", c.d_model, 0.0),
            ))
        self.head_w = glorot("head.weight", c.d_model, c.n_classes)
        self.head_b = vector("head.bias", c.n_classes, 0.0)
        self.positional = positional_encoding(c.max_len, c.d_model)

    def parameters(self):
        return list(self.params.values())

    def state_arrays(self):
        return {name: t.data for name, t in self.params.items()}

    def load_state(self, arrays):
        for name, t in self.params.items():
            t.data = np.array(arrays[name], dtype=np.float64)


def positional_encoding(max_len: int, d_model: int) -> np.ndarray:
    pos = np.arange(max_len)[:, None]
    i = np.arange(d_model)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d_model)
    enc = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return enc


def ifft_augment(x: np.ndarray) -> np.ndarray:
    """Concatenate the input with the real and imaginary parts of its 2D
    inverse transform (input treated as complex with zero imaginary part)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.size == 0:
        raise ValueError("expected a non-empty (length, features) matrix")
    spectrum = fft_2d(x, inverse=True)
    return np.concatenate([x, spectrum.real, spectrum.imag], axis=1)


def _split_heads(t: Tensor, length: int, n_heads: int, dv: int) -> Tensor:
    return ad.transpose(ad.reshape(t, (length, n_heads, dv)), (1, 0, 2))


def _merge_heads(t: Tensor, length: int, width: int) -> Tensor:
    return ad.reshape(ad.transpose(t, (1, 0, 2)), (length, width))


def md_mha(z: Tensor, params: MdMhaParams, n_heads: int,
           use_frequency: bool = True, mask=None, collect_trace: list | None = None) -> Tensor:
    """Multi-domain multi-head attention over a (length, d_model) sequence.

    mask, when given, is a boolean validity vector that must be a contiguous
    prefix (padding is trailing); padded rows produce zero output and are
    invisible to valid rows. Scores are scaled by 1/sqrt(d_model)."""
    length, d_model = z.shape
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (length,):
            raise ValueError("mask must be one flag per sequence position")
        valid = int(mask.sum())
        if valid == 0:
            raise ValueError("all positions masked")
        if not mask[:valid].all():
            raise ValueError("mask must be a contiguous valid prefix")
        if valid < length:
            core = md_mha(ad.slice_axis(z, 0, 0, valid), params, n_heads,
                          use_frequency, None, collect_trace)
            padding = const(np.zeros((length - valid, d_model)))
            return ad.concat([core, padding], axis=0)

    dv = d_model // n_heads
    scaling = 1.0 / math.sqrt(d_model)
    q = _split_heads(ad.matmul(z, params.w_q), length, n_heads, dv)
    k = _split_heads(ad.matmul(z, params.w_k), length, n_heads, dv)
    v = _split_heads(ad.matmul(z, params.w_v), length, n_heads, dv)

    time_scores = ad.softmax(
        ad.scale(ad.matmul(q, ad.transpose(k, (0, 2, 1))), scaling), axis=-1)
    time_heads = _merge_heads(ad.matmul(time_scores, v), length, n_heads * dv)

    freq_scores = None
    q_f = k_f = v_f = None
    if use_frequency:
        q_re, q_im = ad.fft_pair(q, None, axis=1)
        k_re, k_im = ad.fft_pair(k, None, axis=1)
        v_re, _v_im = ad.fft_pair(v, None, axis=1)
        q_f = q_re.data + 1j * q_im.data
        k_f = k_re.data + 1j * k_im.data
        v_f = v_re.data + 1j * _v_im.data
        # real part of the cross spectrum as similarity
        cross = ad.add(ad.matmul(q_re, ad.transpose(k_re, (0, 2, 1))),
                       ad.matmul(q_im, ad.transpose(k_im, (0, 2, 1))))
        freq_scores = ad.softmax(ad.scale(cross, scaling), axis=-1)
        freq_heads = _merge_heads(ad.matmul(freq_scores, v_re), length, n_heads * dv)
        merged = ad.concat([time_heads, freq_heads], axis=1)
    else:
        merged = time_heads

    out = ad.matmul(merged, params.w_o)
    if collect_trace is not None:
        collect_trace.append(AttentionTrace(
            q=q.data.copy(), k=k.data.copy(), v=v.data.copy(),
            q_freq=q_f, k_freq=k_f, v_freq=v_f,
            time_scores=time_scores.data.copy(),
            freq_scores=None if freq_scores is None else freq_scores.data.copy(),
            heads=merged.data.copy()))
    return out


def _dropout(t: Tensor, p: float, training: bool, rng) -> Tensor:
    if not training or p <= 0.0:
        return t
    if rng is None:
        raise ValueError("training with dropout requires an rng")
    keep = (rng.random(t.shape) >= p) / (1.0 - p)
    return ad.mul(t, const(keep))


def encoder_block(z: Tensor, block: BlockParams, config: MdtConfig,
                  training: bool = False, rng=None, mask=None,
                  collect_trace: list | None = None) -> Tensor:
    """Post-norm block: attention, residual + layer norm, feed-forward,
    residual + layer norm. Shape preserving."""
    attended = md_mha(z, block.attn, config.n_heads, config.use_frequency_heads,
                      mask, collect_trace)
    z = ad.layer_norm(ad.add(z, _dropout(attended, config.dropout, training, rng)),
                      block.ln1_gain, block.ln1_bias, eps=LN_EPS)
    hidden = ad.relu(ad.linear(z, block.ff_w1, block.ff_b1))
    ff = ad.linear(hidden, block.ff_w2, block.ff_b2)
    z = ad.layer_norm(ad.add(z, _dropout(ff, config.dropout, training, rng)),
                      block.ln2_gain, block.ln2_bias, eps=LN_EPS)
    return z


def forward(model: MdtModel, x, training: bool = False, rng=None,
            valid_len: int | None = None, collect_trace: list | None = None):
    """Run one prefix through the model.

    x: (l, d_in) array. valid_len, when given, marks trailing rows as padding;
    only the valid slice enters the pipeline, so padded twins give identical
    logits. Returns (logits Tensor (n_classes,), latent Tensor (d_model,))."""
    c = model.config
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != c.d_in:
        raise ValueError(f"expected (l, {c.d_in}) input, got {x.shape}")
    if valid_len is not None:
        if not 1 <= valid_len <= x.shape[0]:
            raise ValueError("valid_len outside the provided rows")
        x = x[:valid_len]
    length = x.shape[0]
    if length < 1:
        raise ValueError("empty input")
    if length > c.max_len:
        raise ValueError(f"prefix length {length} exceeds max_len {c.max_len}")
    if not np.isfinite(x).all():
        raise ValueError("non-finite input")

    feats = ifft_augment(x) if c.use_frequency_heads else x
    z = ad.add_bias(ad.matmul(const(feats), model.input_w), model.input_b)
    z = ad.add(z, const(model.positional[:length]))
    z = ad.concat([model.cls_token, z], axis=0)
    for block in model.blocks:
        z = encoder_block(z, block, c, training, rng, None, collect_trace)
    latent_row = ad.slice_axis(z, 0, 0, 1)
    logits = ad.reshape(ad.add_bias(ad.matmul(latent_row, model.head_w), model.head_b),
                        (c.n_classes,))
    latent = ad.reshape(latent_row, (c.d_model,))
    return logits, latent


def predict(model: MdtModel, x, valid_len=None) -> int:
    logits, _ = forward(model, x, training=False, valid_len=valid_len)
    return int(np.argmax(logits.data))


# ---------------------------------------------------------------------------
# checkpoints and latent export

def _blob_path(path: str) -> str:
    return str(path) + ".bin"


def save_checkpoint(model: MdtModel, path):
    """JSON manifest at path, parameter blob (little-endian float64, manifest
    order) at path + '.bin'."""
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "seed": model.seed,
        "config": asdict(model.config),
        "classes": list(model.classes) if model.classes else None,
        "parameters": [
            {"name": name, "shape": list(t.data.shape)}
            for name, t in model.params.items()
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    with open(_blob_path(path), "wb") as fh:
        for t in model.params.values():
            fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def load_checkpoint(path) -> MdtModel:
    with open(path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a checkpoint manifest")
    config = MdtConfig(**manifest["config"])
    model = MdtModel(config, seed=manifest["seed"])
    if manifest.get("classes"):
        model.classes = tuple(manifest["classes"])
    with open(_blob_path(path), "rb") as fh:
        blob = fh.read()
    offset = 0
    arrays = {}
    for entry in manifest["parameters"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        chunk = np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
        arrays[entry["name"]] = chunk.reshape(shape)
        offset += count * 8
    if offset != len(blob):
        raise ValueError(f"{path}: parameter blob size mismatch")
    if set(arrays) != set(model.params):
        raise ValueError(f"{path}: parameter names do not match the config")
    model.load_state(arrays)
    return model


def export_latents(model: MdtModel, samples, spec: PrefixSpec, out_path):
    """CSV of flow_id, label, and the d_model latent values per sample, so an
    external classifier can replace the built-in head."""
    d_model = model.config.d_model
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["flow_id", "label"] + [f"latent_{i}" for i in range(d_model)])
        for sample in samples:
            prefix, _ = take_prefix(sample, spec)
            _, latent = forward(model, prefix.values, training=False)
            writer.writerow([sample.flow_id, sample.label]
                            + [f"{v:.9f}" for v in latent.data])
    return out_path
