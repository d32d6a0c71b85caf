"""Three-layer perceptrons with hand-written reverse mode, Adam and a toy GAN.

Networks compute ``in -> h -> h -> out`` with a shared hidden activation and an
identity output. Weight matrices are stored as ``(fan_in, fan_out)`` so a batch
``X`` of shape ``(n, fan_in)`` maps through ``X @ W + b``.

A trained discriminator plays two roles downstream: its scalar logit is the
condition log-likelihood ``d(x)``, and its last hidden layer is the feature map
used by the kernels.
"""

from __future__ import annotations

import io
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DivergedTraining, IoFailure, ShapeMismatch
from .targets import GmmTarget, gmm_sample

logger = logging.getLogger(__name__)

ACTIVATIONS = ("tanh", "relu")
N_LAYERS = 3


@dataclass
class MlpNet:
    weights: list
    biases: list
    activation: str = "tanh"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if len(self.weights) != N_LAYERS or len(self.biases) != N_LAYERS:
            raise ShapeMismatch(f"an MlpNet has exactly {N_LAYERS} linear layers")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape[1] != b.shape[0]:
                raise ShapeMismatch(f"layer {i}: weight {w.shape} vs bias {b.shape}")
            if i and self.weights[i - 1].shape[1] != w.shape[0]:
                raise ShapeMismatch(f"layer {i} input does not match layer {i - 1} output")

    @property
    def sizes(self) -> list:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    def params(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "MlpNet":
        return MlpNet([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.activation)


def init_mlp(sizes, rng: np.random.Generator, activation="tanh") -> MlpNet:
    """Random net with ``N(0, 1/fan_in)`` weights and zero biases."""
    if len(sizes) != N_LAYERS + 1:
        raise ShapeMismatch(f"need {N_LAYERS + 1} layer sizes, got {sizes}")
    ws, bs = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        ws.append(rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in))
        bs.append(np.zeros(fan_out))
    return MlpNet(ws, bs, activation)


def identity_mlp(dim: int) -> MlpNet:
    """Net with identity weights; reproduces positive inputs under relu."""
    eye = np.eye(dim)
    return MlpNet([eye.copy(), eye.copy(), eye.copy()], [np.zeros(dim)] * 3, "relu")


def _act(net, a):
    return np.tanh(a) if net.activation == "tanh" else np.maximum(a, 0.0)


def _act_grad(net, a, h):
    # derivative of the activation, given pre-activation a and output h
    return 1.0 - h**2 if net.activation == "tanh" else (a > 0).astype(float)


def _as_batch(net, x):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xb = x[None] if single else x
    if xb.ndim != 2 or xb.shape[1] != net.in_dim:
        raise ShapeMismatch(f"input shape {x.shape} does not match net input {net.in_dim}")
    return xb, single


def _forward_cache(net, xb, upto):
    hs, pre = [xb], []
    h = xb
    for i in range(upto):
        a = h @ net.weights[i] + net.biases[i]
        pre.append(a)
        h = a if i == N_LAYERS - 1 else _act(net, a)
        hs.append(h)
    return hs, pre


def mlp_forward(net: MlpNet, x, layer: int = N_LAYERS):
    """Forward pass, optionally stopping after ``layer`` linear layers.

    ``layer=3`` is the network output; ``layer=1`` or ``2`` returns the
    activations of that hidden layer.
    """
    xb, single = _as_batch(net, x)
    hs, _ = _forward_cache(net, xb, layer)
    return hs[-1][0] if single else hs[-1]


def mlp_vjp(net: MlpNet, x, u, layer: int = N_LAYERS):
    """Vector-Jacobian product of the map ``x -> mlp_forward(net, x, layer)``.

    Parameters
    ----------
    x : (d,) or (n, d) array
    u : array matching the layer output, per row when batched

    Returns
    -------
    grad_input : array shaped like ``x``
        ``u^T d(out)/d(x)`` per row.
    grad_params : list of arrays
        ``u^T d(out)/d(params)`` summed over the batch, in the order of
        :meth:`MlpNet.params`. Layers above ``layer`` receive zeros.
    """
    xb, single = _as_batch(net, x)
    ub = np.asarray(u, dtype=float)
    ub = ub[None] if single else ub
    width = net.sizes[layer]
    if ub.shape != (xb.shape[0], width):
        raise ShapeMismatch(f"cotangent shape {np.shape(u)} does not match layer output width {width}")
    hs, pre = _forward_cache(net, xb, layer)
    grads = [np.zeros_like(p) for p in net.params()]
    g = ub
    for i in reversed(range(layer)):
        if i != N_LAYERS - 1:
            g = g * _act_grad(net, pre[i], hs[i + 1])
        grads[2 * i] = hs[i].T @ g
        grads[2 * i + 1] = g.sum(0)
        g = g @ net.weights[i].T
    return (g[0] if single else g), grads


# --------------------------------------------------------------------------- Adam


@dataclass
class AdamState:
    m: list
    v: list
    lr: float = 1e-3
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0

    @classmethod
    def for_params(cls, params, **kw):
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], **kw)


def adam_update(params, grads, state: AdamState) -> None:
    """In-place Adam step on ``params`` (descent direction ``-grads``)."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1 - b1**state.step
    c2 = 1 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


# --------------------------------------------------------------------------- GAN


@dataclass
class GanTrainConfig:
    latent_dim: int = 2
    hidden: int = 64
    activation: str = "tanh"
    lr: float = 1e-3
    beta1: float = 0.5
    beta2: float = 0.999
    batch_size: int = 256
    steps: int = 2000
    early_stop: int | None = 600
    log_every: int = 100

    def validate(self):
        if self.batch_size < 1 or self.steps < 0 or self.lr <= 0 or self.latent_dim < 1 or self.hidden < 1:
            raise ValueError("GAN config needs positive batch size, learning rate, widths and steps >= 0")
        if self.early_stop is not None and self.early_stop < 0:
            raise ValueError("early_stop must be >= 0")


@dataclass
class GanHistory:
    step: list = field(default_factory=list)
    d_loss: list = field(default_factory=list)
    g_loss: list = field(default_factory=list)
    mmd: list = field(default_factory=list)

    def rows(self):
        return list(zip(self.step, self.d_loss, self.g_loss, self.mmd))


def _softplus(a):
    return np.logaddexp(0.0, a)


def _sigmoid(a):
    return 0.5 * (1 + np.tanh(0.5 * a))


def train_toy_gan(target: GmmTarget, cfg: GanTrainConfig, rng: np.random.Generator):
    """Train a non-saturating GAN on samples of ``target``.

    Training runs ``min(cfg.steps, cfg.early_stop)`` alternating updates, one
    discriminator and one generator step each. The early stop is what leaves
    the generator under-fit.

    Returns
    -------
    generator, discriminator : MlpNet
    history : GanHistory
        Losses and MMD to fresh target samples every ``cfg.log_every`` steps.
    """
    from .metrics import mmd, median_bandwidth

    cfg.validate()
    dim = target.dim
    gen = init_mlp([cfg.latent_dim, cfg.hidden, cfg.hidden, dim], rng, cfg.activation)
    disc = init_mlp([dim, cfg.hidden, cfg.hidden, 1], rng, cfg.activation)
    opt_kw = dict(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2)
    g_opt = AdamState.for_params(gen.params(), **opt_kw)
    d_opt = AdamState.for_params(disc.params(), **opt_kw)
    history = GanHistory()
    n_steps = cfg.steps if cfg.early_stop is None else min(cfg.steps, cfg.early_stop)
    eval_rng = np.random.Generator(np.random.PCG64(rng.integers(2**63)))
    bs = cfg.batch_size

    def log(step, d_loss, g_loss):
        real = gmm_sample(target, 512, eval_rng)
        fake = mlp_forward(gen, eval_rng.standard_normal((512, cfg.latent_dim)))
        both = np.concatenate([real, fake])
        history.step.append(step)
        history.d_loss.append(float(d_loss))
        history.g_loss.append(float(g_loss))
        history.mmd.append(float(mmd(fake, real, median_bandwidth(both))))

    d_loss = g_loss = float("nan")
    for step in range(n_steps):
        if step % cfg.log_every == 0:
            log(step, d_loss, g_loss)
        real = gmm_sample(target, bs, rng)
        z = rng.standard_normal((bs, cfg.latent_dim))
        fake = mlp_forward(gen, z)

        d_real = mlp_forward(disc, real)[:, 0]
        d_fake = mlp_forward(disc, fake)[:, 0]
        d_loss = np.mean(_softplus(-d_real) + _softplus(d_fake))
        _, g_r = mlp_vjp(disc, real, ((_sigmoid(d_real) - 1) / bs)[:, None])
        _, g_f = mlp_vjp(disc, fake, (_sigmoid(d_fake) / bs)[:, None])
        adam_update(disc.params(), [a + b for a, b in zip(g_r, g_f)], d_opt)

        z = rng.standard_normal((bs, cfg.latent_dim))
        fake = mlp_forward(gen, z)
        d_fake = mlp_forward(disc, fake)[:, 0]
        g_loss = np.mean(_softplus(-d_fake))
        gx, _ = mlp_vjp(disc, fake, ((_sigmoid(d_fake) - 1) / bs)[:, None])
        _, g_g = mlp_vjp(gen, z, gx)
        adam_update(gen.params(), g_g, g_opt)

        if not (np.isfinite(d_loss) and np.isfinite(g_loss)):
            raise DivergedTraining(f"non-finite GAN loss at step {step}")
    log(n_steps, d_loss, g_loss)
    logger.info("trained toy GAN for %d steps, final MMD %.4g", n_steps, history.mmd[-1])
    return gen, disc, history


def discriminator_accuracy(disc: MlpNet, real, fake) -> float:
    """Fraction of held-out samples classified correctly at logit threshold 0."""
    hits = np.sum(mlp_forward(disc, real)[:, 0] > 0) + np.sum(mlp_forward(disc, fake)[:, 0] <= 0)
    return float(hits / (len(real) + len(fake)))


# --------------------------------------------------------------------------- persistence
#
# Little-endian layout, version 1:
#   magic   8 bytes  b"GMINET\x00\x01"
#   nsizes  u32      always 4
#   sizes   4 x u32  in, hidden, hidden, out
#   act     u32      0 = tanh, 1 = relu
#   then per layer: weight (fan_in * fan_out f64, row-major), bias (fan_out f64)

MAGIC = b"GMINET\x00\x01"


def net_to_bytes(net: MlpNet) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", N_LAYERS + 1))
    buf.write(struct.pack(f"<{N_LAYERS + 1}I", *net.sizes))
    buf.write(struct.pack("<I", ACTIVATIONS.index(net.activation)))
    for w, b in zip(net.weights, net.biases):
        buf.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
        buf.write(np.ascontiguousarray(b, dtype="<f8").tobytes())
    return buf.getvalue()


def net_from_bytes(data: bytes) -> MlpNet:
    if data[:8] != MAGIC:
        raise IoFailure("not a gminfer net file (bad magic or unsupported version)")
    off = 8
    (nsizes,) = struct.unpack_from("<I", data, off)
    off += 4
    if nsizes != N_LAYERS + 1:
        raise IoFailure(f"net file declares {nsizes} layer sizes")
    sizes = struct.unpack_from(f"<{nsizes}I", data, off)
    off += 4 * nsizes
    (act,) = struct.unpack_from("<I", data, off)
    off += 4
    ws, bs = [], []
    try:
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            ws.append(np.frombuffer(data, "<f8", fan_in * fan_out, off).reshape(fan_in, fan_out).astype(float))
            off += 8 * fan_in * fan_out
            bs.append(np.frombuffer(data, "<f8", fan_out, off).astype(float))
            off += 8 * fan_out
    except ValueError as exc:
        raise IoFailure("truncated net file") from exc
    if off != len(data):
        raise IoFailure("trailing bytes in net file")
    return MlpNet(ws, bs, ACTIVATIONS[act])


def save_net(net: MlpNet, path) -> None:
    try:
        Path(path).write_bytes(net_to_bytes(net))
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def load_net(path) -> MlpNet:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    return net_from_bytes(data)
