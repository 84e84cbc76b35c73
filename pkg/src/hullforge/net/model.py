"""Symmetric hourglass 3-D convolutional autoencoder with additive skips.

Encoder layer ``i`` convolves with ``channels[i]`` filters at ``strides[i]``
followed by ReLU.  The bottleneck flattens the last encoder tensor, maps it to
``latent_dim`` units and back (both fully connected, both ReLU).  Decoder layer
``j`` mirrors encoder layer ``i = L-1-j``: it up-samples x2 first when encoder
layer ``i`` down-sampled, convolves to ``channels[i]`` filters, adds encoder
layer ``i``'s activation when ``skips[i]`` is set, then applies ReLU.  A final
linear convolution maps to one channel at the input resolution.

With the default ladder (64, 64, 128, 128, 256), strides (2, 1, 2, 1, 2) and
skips (0, 1, 0, 1, 0), a 32^3 patch reaches 4^3 x 256 at the bottleneck.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .layers import (
    conv3d_backward,
    conv3d_forward,
    relu,
    relu_backward,
    upsample2,
    upsample2_backward,
)

FULL_CHANNELS = (64, 64, 128, 128, 256)


class ArchitectureMismatch(ValueError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # conv3d | downsample_conv3d | upsample_conv3d | relu | fully_connected
    in_channels: int
    out_channels: int
    kernel: int = 0
    stride: int = 1
    skip_tag: int | None = None

    def to_dict(self):
        return {
            "kind": self.kind,
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
            "kernel": self.kernel,
            "stride": self.stride,
            "skip_tag": self.skip_tag,
        }


@dataclass(frozen=True)
class Architecture:
    patch_size: int = 32
    channels: tuple = FULL_CHANNELS
    strides: tuple | None = None
    skips: tuple | None = None
    kernel: int = 3
    latent_dim: int = 100

    def __post_init__(self):
        ch = tuple(int(c) for c in self.channels)
        n = len(ch)
        strides = tuple(self.strides) if self.strides is not None else tuple(2 if i % 2 == 0 else 1 for i in range(n))
        skips = tuple(self.skips) if self.skips is not None else tuple(i % 2 for i in range(n))
        object.__setattr__(self, "channels", ch)
        object.__setattr__(self, "strides", tuple(int(s) for s in strides))
        object.__setattr__(self, "skips", tuple(int(bool(s)) for s in skips))
        if n == 0 or min(ch) < 1:
            raise ValueError("channel ladder must be non-empty and positive")
        if len(self.strides) != n or len(self.skips) != n:
            raise ValueError("strides and skips must match the channel ladder length")
        if any(s not in (1, 2) for s in self.strides):
            raise ValueError("strides must be 1 or 2")
        if self.kernel % 2 == 0 or self.kernel < 1:
            raise ValueError("kernel must be odd")
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be positive")
        for i, (s, k) in enumerate(zip(self.strides, self.skips)):
            if k and s != 1:
                raise ValueError(f"skip on encoder layer {i} requires stride 1")
        down = 2 ** sum(1 for s in self.strides if s == 2)
        if self.patch_size % down:
            raise ValueError(f"patch_size {self.patch_size} must be divisible by {down}")

    @property
    def depth(self):
        return len(self.channels)

    @property
    def bottleneck_side(self):
        return self.patch_size // 2 ** sum(1 for s in self.strides if s == 2)

    @property
    def bottleneck_size(self):
        return self.channels[-1] * self.bottleneck_side**3

    def to_dict(self):
        return {
            "patch_size": self.patch_size,
            "channels": list(self.channels),
            "strides": list(self.strides),
            "skips": list(self.skips),
            "kernel": self.kernel,
            "latent_dim": self.latent_dim,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            patch_size=d["patch_size"],
            channels=tuple(d["channels"]),
            strides=tuple(d["strides"]),
            skips=tuple(d["skips"]),
            kernel=d["kernel"],
            latent_dim=d["latent_dim"],
        )


def layer_chain(arch):
    """Flat list of :class:`LayerSpec` describing the network end to end."""
    k = arch.kernel
    chain = []
    prev = 1
    for i, (c, s, sk) in enumerate(zip(arch.channels, arch.strides, arch.skips)):
        kind = "downsample_conv3d" if s == 2 else "conv3d"
        chain.append(LayerSpec(kind, prev, c, k, s, i if sk else None))
        chain.append(LayerSpec("relu", c, c))
        prev = c
    chain.append(LayerSpec("fully_connected", arch.bottleneck_size, arch.latent_dim))
    chain.append(LayerSpec("relu", arch.latent_dim, arch.latent_dim))
    chain.append(LayerSpec("fully_connected", arch.latent_dim, arch.bottleneck_size))
    chain.append(LayerSpec("relu", arch.bottleneck_size, arch.bottleneck_size))
    for j in range(arch.depth):
        i = arch.depth - 1 - j
        c = arch.channels[i]
        kind = "upsample_conv3d" if arch.strides[i] == 2 else "conv3d"
        chain.append(LayerSpec(kind, prev, c, k, 1, i if arch.skips[i] else None))
        chain.append(LayerSpec("relu", c, c))
        prev = c
    chain.append(LayerSpec("conv3d", prev, 1, k, 1))
    return chain


def param_shapes(arch):
    """Ordered ``name -> shape`` for every learnable tensor."""
    k = arch.kernel
    shapes = {}
    prev = 1
    for i, c in enumerate(arch.channels):
        shapes[f"enc{i}.w"] = (c, prev, k, k, k)
        shapes[f"enc{i}.b"] = (c,)
        prev = c
    shapes["fc_in.w"] = (arch.latent_dim, arch.bottleneck_size)
    shapes["fc_in.b"] = (arch.latent_dim,)
    shapes["fc_out.w"] = (arch.bottleneck_size, arch.latent_dim)
    shapes["fc_out.b"] = (arch.bottleneck_size,)
    for j in range(arch.depth):
        c = arch.channels[arch.depth - 1 - j]
        shapes[f"dec{j}.w"] = (c, prev, k, k, k)
        shapes[f"dec{j}.b"] = (c,)
        prev = c
    shapes["out.w"] = (1, prev, k, k, k)
    shapes["out.b"] = (1,)
    return shapes


@dataclass
class ModelWeights:
    arch: Architecture
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        want = param_shapes(self.arch)
        if list(self.params) != list(want):
            raise ArchitectureMismatch("parameter names do not match the architecture")
        for name, shape in want.items():
            if tuple(self.params[name].shape) != shape:
                raise ArchitectureMismatch(f"{name}: shape {self.params[name].shape}, expected {shape}")

    @property
    def dtype(self):
        return self.params["out.w"].dtype

    def astype(self, dtype):
        return ModelWeights(self.arch, {k: v.astype(dtype) for k, v in self.params.items()})

    def copy(self):
        return ModelWeights(self.arch, {k: v.copy() for k, v in self.params.items()})

    def zeros_like(self):
        return {k: np.zeros_like(v) for k, v in self.params.items()}


def init_weights(arch, seed=0, dtype=np.float32):
    """He-uniform kernels (bound ``sqrt(6 / fan_in)``), zero biases.

    ``seed`` may be an int or a ``numpy.random.Generator``.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(arch).items():
        if name.endswith(".b"):
            params[name] = np.zeros(shape, dtype=dtype)
            continue
        fan_in = int(np.prod(shape[1:]))
        bound = np.sqrt(6.0 / fan_in)
        params[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return ModelWeights(arch, params)


@dataclass
class Tape:
    """Intermediates recorded by :func:`forward` for :func:`backward`."""

    use_skips: bool
    batch: int
    single: bool
    enc_in: list = field(default_factory=list)
    enc_pre: list = field(default_factory=list)
    enc_act: list = field(default_factory=list)
    flat: np.ndarray | None = None
    z_pre: np.ndarray | None = None
    z: np.ndarray | None = None
    h_pre: np.ndarray | None = None
    dec_in: list = field(default_factory=list)
    dec_pre: list = field(default_factory=list)
    out_in: np.ndarray | None = None


def _as_batch(patch, arch):
    x = np.asarray(patch)
    single = x.ndim == 3
    if single:
        x = x[None]
    n = arch.patch_size
    if x.ndim != 4 or x.shape[1:] != (n, n, n):
        raise ArchitectureMismatch(f"expected patches of shape ({n}, {n}, {n}), got {np.asarray(patch).shape}")
    return x, single


def forward(model, patch, use_skips=True):
    """Run the autoencoder on one ``(n, n, n)`` patch or a batch ``(B, n, n, n)``.

    Returns ``(output, tape)``; the output has the input's shape.
    """
    arch = model.arch
    p = model.params
    x, single = _as_batch(patch, arch)
    x = x.astype(model.dtype, copy=False)
    batch = x.shape[0]
    tape = Tape(use_skips=use_skips, batch=batch, single=single)

    a = x[None]
    for i, s in enumerate(arch.strides):
        pre = conv3d_forward(a, p[f"enc{i}.w"], p[f"enc{i}.b"], s)
        tape.enc_in.append(a)
        tape.enc_pre.append(pre)
        a = relu(pre)
        tape.enc_act.append(a)

    c, _, side = a.shape[0], a.shape[1], a.shape[2]
    flat = a.transpose(1, 0, 2, 3, 4).reshape(batch, -1)
    z_pre = flat @ p["fc_in.w"].T + p["fc_in.b"]
    z = relu(z_pre)
    h_pre = z @ p["fc_out.w"].T + p["fc_out.b"]
    a = relu(h_pre).reshape(batch, c, side, side, side).transpose(1, 0, 2, 3, 4)
    tape.flat, tape.z_pre, tape.z, tape.h_pre = flat, z_pre, z, h_pre

    for j in range(arch.depth):
        i = arch.depth - 1 - j
        if arch.strides[i] == 2:
            a = upsample2(a)
        tape.dec_in.append(a)
        pre = conv3d_forward(a, p[f"dec{j}.w"], p[f"dec{j}.b"], 1)
        if use_skips and arch.skips[i]:
            pre = pre + tape.enc_act[i]
        tape.dec_pre.append(pre)
        a = relu(pre)

    tape.out_in = a
    y = conv3d_forward(a, p["out.w"], p["out.b"], 1)[0]
    return (y[0] if single else y), tape


def backward(model, tape, dout):
    """Parameter gradients given ``dout = dLoss/dOutput`` (shape of the forward output)."""
    arch = model.arch
    p = model.params
    g = {}
    d = np.asarray(dout, dtype=model.dtype)
    if tape.single:
        d = d[None]
    d = d[None]

    d, g["out.w"], g["out.b"] = conv3d_backward(d, tape.out_in, p["out.w"], 1)

    skip_grads = {}
    for j in reversed(range(arch.depth)):
        i = arch.depth - 1 - j
        d = relu_backward(d, tape.dec_pre[j])
        if tape.use_skips and arch.skips[i]:
            skip_grads[i] = d
        d, g[f"dec{j}.w"], g[f"dec{j}.b"] = conv3d_backward(d, tape.dec_in[j], p[f"dec{j}.w"], 1)
        if arch.strides[i] == 2:
            d = upsample2_backward(d)

    batch = tape.batch
    c, side = arch.channels[-1], arch.bottleneck_side
    dh = d.transpose(1, 0, 2, 3, 4).reshape(batch, -1)
    dh = relu_backward(dh, tape.h_pre)
    g["fc_out.w"] = dh.T @ tape.z
    g["fc_out.b"] = dh.sum(axis=0)
    dz = relu_backward(dh @ p["fc_out.w"], tape.z_pre)
    g["fc_in.w"] = dz.T @ tape.flat
    g["fc_in.b"] = dz.sum(axis=0)
    d = (dz @ p["fc_in.w"]).reshape(batch, c, side, side, side).transpose(1, 0, 2, 3, 4)

    for i in reversed(range(arch.depth)):
        if i in skip_grads:
            d = d + skip_grads[i]
        d = relu_backward(d, tape.enc_pre[i])
        d, g[f"enc{i}.w"], g[f"enc{i}.b"] = conv3d_backward(d, tape.enc_in[i], p[f"enc{i}.w"], arch.strides[i])

    return {name: g[name] for name in p}


def mse_loss(output, target):
    """Mean squared error over all voxels (and patches, when batched)."""
    output = np.asarray(output)
    target = np.asarray(target)
    if output.shape != target.shape:
        raise ValueError(f"shape mismatch: {output.shape} vs {target.shape}")
    diff = output.astype(np.float64) - target
    return float(np.mean(diff * diff))


def mse_grad(output, target):
    """Gradient of :func:`mse_loss` with respect to ``output``."""
    output = np.asarray(output)
    return (2.0 / output.size) * (output - np.asarray(target, dtype=output.dtype))


def predict(model, patches, batch_size=16):
    """Forward pass over many patches without keeping tapes."""
    patches = np.asarray(patches)
    out = np.empty(patches.shape, dtype=model.dtype)
    for s in range(0, len(patches), batch_size):
        out[s : s + batch_size] = forward(model, patches[s : s + batch_size])[0]
    return out
