"""Network builders, forward passes and checkpoint I/O.

Four topologies share one parameter container (:class:`Weights`):

* ``GenAutoEnc`` / ``GenUnet`` -- stride-2 4x4 conv encoder with leaky-relu(0.2),
  4x4 transposed-conv decoder with relu, sigmoid output. The U-Net variant
  concatenates each encoder activation into the decoder stage of equal
  resolution; the auto-encoder does not.
* ``Discriminator`` -- conditioned on the image: ``concat(x, mask)`` on the
  channel axis, the same stride-2 encoder, then one linear unit and a sigmoid.
* ``ShapeCNN`` -- two 3x3 stride-2 convolutions and two fully connected layers.
"""

from __future__ import annotations

import os
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional, Union

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

KERNEL = 4
LEAK = 0.2
INIT_STD = 0.02
SHAPE_HIDDEN = 64
NUM_SHAPES = 4

MAGIC = b"CGANSEG1"
FORMAT_VERSION = 1


class Variant(str, Enum):
    GEN_AUTOENC = "GenAutoEnc"
    GEN_UNET = "GenUnet"
    DISCRIMINATOR = "Discriminator"
    SHAPE_CNN = "ShapeCNN"

    @property
    def is_generator(self) -> bool:
        return self in (Variant.GEN_AUTOENC, Variant.GEN_UNET)


_VARIANT_CODES = {v: i for i, v in enumerate(Variant)}


class InvalidSpecError(ValueError):
    pass


class CheckpointError(ValueError):
    """Unreadable, truncated or wrong-version checkpoint file."""


class SpecMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class NetworkSpec:
    variant: Variant
    input_resolution: int = 64
    depth: int = 4
    base_channels: int = 8
    dropout: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        r = self.input_resolution
        if r < 2 or r & (r - 1):
            raise InvalidSpecError(f"input_resolution must be a power of two, got {r}")
        if self.depth < 2:
            raise InvalidSpecError(f"depth must be >= 2, got {self.depth}")
        if self.base_channels < 4:
            raise InvalidSpecError(f"base_channels must be >= 4, got {self.base_channels}")
        if r % (2 ** self.depth):
            raise InvalidSpecError(
                f"input_resolution {r} is not divisible by 2^depth = {2 ** self.depth}")
        if not 0.0 <= self.dropout < 1.0:
            raise InvalidSpecError(f"dropout must lie in [0, 1), got {self.dropout}")

    def channels(self, stage: int) -> int:
        return self.base_channels * 2 ** min(stage, 3)

    @property
    def dropout_stages(self) -> int:
        """Number of leading decoder stages that apply dropout."""
        return self.depth // 2


@dataclass
class Weights:
    spec: NetworkSpec
    seed: int
    params: "OrderedDict[str, Tensor]" = field(default_factory=OrderedDict)

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def copy(self) -> "Weights":
        return Weights(self.spec, self.seed,
                       OrderedDict((k, ad.parameter(v.data)) for k, v in self.params.items()))

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}


# -- parameter layout -----------------------------------------------------------

def param_shapes(spec: NetworkSpec) -> "OrderedDict[str, tuple[int, ...]]":
    """Names and shapes of every parameter, in creation order."""
    shapes: OrderedDict[str, tuple[int, ...]] = OrderedDict()
    d = spec.depth
    if spec.variant.is_generator:
        in_c = 1
        for i in range(d):
            shapes[f"enc{i}.w"] = (spec.channels(i), in_c, KERNEL, KERNEL)
            shapes[f"enc{i}.b"] = (spec.channels(i),)
            in_c = spec.channels(i)
        skip = spec.variant is Variant.GEN_UNET
        for k in range(d):
            level = d - 1 - k
            dec_in = spec.channels(level) * (2 if skip and k > 0 else 1)
            dec_out = spec.channels(level - 1) if k < d - 1 else 1
            # transposed-conv kernels are [in, out, kH, kW]
            shapes[f"dec{k}.w"] = (dec_in, dec_out, KERNEL, KERNEL)
            shapes[f"dec{k}.b"] = (dec_out,)
    elif spec.variant is Variant.DISCRIMINATOR:
        in_c = 2
        for i in range(d):
            shapes[f"disc{i}.w"] = (spec.channels(i), in_c, KERNEL, KERNEL)
            shapes[f"disc{i}.b"] = (spec.channels(i),)
            in_c = spec.channels(i)
        side = spec.input_resolution // 2 ** d
        shapes["fc.w"] = (in_c * side * side, 1)
        shapes["fc.b"] = (1,)
    else:
        b = spec.base_channels
        side = spec.input_resolution // 4
        shapes["conv1.w"] = (b, 1, 3, 3)
        shapes["conv1.b"] = (b,)
        shapes["conv2.w"] = (2 * b, b, 3, 3)
        shapes["conv2.b"] = (2 * b,)
        shapes["fc1.w"] = (2 * b * side * side, SHAPE_HIDDEN)
        shapes["fc1.b"] = (SHAPE_HIDDEN,)
        shapes["fc2.w"] = (SHAPE_HIDDEN, NUM_SHAPES)
        shapes["fc2.b"] = (NUM_SHAPES,)
    return shapes


def _fan_in(shape: tuple[int, ...]) -> int:
    # conv kernels are [out, in, kH, kW]; dense weights are [in, out]
    return int(np.prod(shape[1:])) if len(shape) == 4 else shape[0]


def build(spec: NetworkSpec, seed: int) -> Weights:
    """Deterministic initialization from ``seed``; biases start at zero.

    GAN weights are normal(0, 0.02). The shape classifier uses He-normal
    scaling instead, which its plain ReLU stack needs to train reliably.
    """
    rng = np.random.default_rng(seed)
    he = spec.variant is Variant.SHAPE_CNN
    params: OrderedDict[str, Tensor] = OrderedDict()
    for name, shape in param_shapes(spec).items():
        if name.endswith(".b"):
            data = np.zeros(shape)
        else:
            std = np.sqrt(2.0 / _fan_in(shape)) if he else INIT_STD
            data = rng.normal(0.0, std, size=shape)
        params[name] = ad.parameter(data)
    return Weights(spec, seed, params)


# -- forward passes ---------------------------------------------------------------

def _conv(x: Tensor, w: Weights, name: str, stride: int, padding: int) -> Tensor:
    return ad.bias_add(ad.conv2d(x, w[f"{name}.w"], stride, padding), w[f"{name}.b"])


def _deconv(x: Tensor, w: Weights, name: str) -> Tensor:
    return ad.bias_add(ad.conv2d_transpose(x, w[f"{name}.w"], 2, 1), w[f"{name}.b"])


def _linear(x: Tensor, w: Weights, name: str) -> Tensor:
    return ad.add(ad.matmul(x, w[f"{name}.w"]), w[f"{name}.b"])


def _expect_variant(weights: Weights, *variants: Variant) -> None:
    if weights.spec.variant not in variants:
        names = ", ".join(v.value for v in variants)
        raise SpecMismatchError(f"expected {names} weights, got {weights.spec.variant.value}")


def _check_image_batch(x: Tensor, what: str) -> None:
    if x.ndim != 4 or x.shape[1] != 1 or x.shape[2] != x.shape[3]:
        raise ValueError(f"{what} must be [N, 1, R, R], got {x.shape}")


def _check_resolution(spec: NetworkSpec, res: int, exact: bool) -> None:
    if exact and res != spec.input_resolution:
        raise SpecMismatchError(
            f"{spec.variant.value} expects resolution {spec.input_resolution}, got {res}")
    if res % 2 ** spec.depth:
        raise SpecMismatchError(
            f"resolution {res} not divisible by 2^depth = {2 ** spec.depth}")


def encode(weights: Weights, x: Tensor, prefix: str = "enc") -> list[Tensor]:
    acts = []
    h = x
    for i in range(weights.spec.depth):
        h = ad.leaky_relu(_conv(h, weights, f"{prefix}{i}", 2, 1), LEAK)
        acts.append(h)
    return acts


def generator_forward(weights: Weights, x: Tensor, training: bool = False,
                      rng: Optional[np.random.Generator] = None,
                      stochastic: bool = False) -> Tensor:
    """Predicted mask ``G(x, z)`` in (0, 1), same shape as ``x``.

    The noise ``z`` enters only as dropout in the first decoder stages, active
    when ``training`` or ``stochastic`` is set (both need ``rng``).
    """
    _expect_variant(weights, Variant.GEN_AUTOENC, Variant.GEN_UNET)
    _check_image_batch(x, "generator input")
    spec = weights.spec
    _check_resolution(spec, x.shape[2], exact=False)
    if x.data.min() < 0.0 or x.data.max() > 1.0:
        raise ValueError("generator input must lie in [0, 1]")
    acts = encode(weights, x)
    noisy = training or stochastic
    skip = spec.variant is Variant.GEN_UNET
    d = spec.depth
    h = acts[-1]
    for k in range(d):
        if skip and k > 0:
            h = ad.concat([h, acts[d - 1 - k]], axis=1)
        h = _deconv(h, weights, f"dec{k}")
        if k == d - 1:
            return ad.sigmoid(h)
        h = ad.relu(h)
        if k < spec.dropout_stages:
            h = ad.dropout(h, spec.dropout, noisy, rng)
    raise AssertionError("unreachable")


def discriminator_forward(weights: Weights, x: Tensor, mask: Tensor) -> Tensor:
    """Realness score in (0, 1) for each (image, mask) pair; shape ``[N]``."""
    _expect_variant(weights, Variant.DISCRIMINATOR)
    if x.shape != mask.shape:
        raise ValueError(f"image {x.shape} and mask {mask.shape} differ in shape")
    _check_image_batch(x, "discriminator input")
    _check_resolution(weights.spec, x.shape[2], exact=True)
    h = ad.concat([x, mask], axis=1)
    h = encode(weights, h, prefix="disc")[-1]
    h = ad.reshape(h, (h.shape[0], -1))
    logit = _linear(h, weights, "fc")
    return ad.reshape(ad.sigmoid(logit), (x.shape[0],))


def shape_cnn_logits(weights: Weights, mask: Tensor) -> Tensor:
    _expect_variant(weights, Variant.SHAPE_CNN)
    _check_image_batch(mask, "shape classifier input")
    if mask.shape[2] != weights.spec.input_resolution:
        raise SpecMismatchError(
            f"ShapeCNN expects resolution {weights.spec.input_resolution}, got {mask.shape[2]}")
    h = ad.relu(_conv(mask, weights, "conv1", 2, 1))
    h = ad.relu(_conv(h, weights, "conv2", 2, 1))
    h = ad.reshape(h, (h.shape[0], -1))
    h = ad.relu(_linear(h, weights, "fc1"))
    return _linear(h, weights, "fc2")


def shape_cnn_forward(weights: Weights, mask: Tensor) -> Tensor:
    """Class probabilities ``[N, 4]`` (irregular, lobular, oval, round)."""
    if mask.data.min() < 0.0 or mask.data.max() > 1.0:
        raise ValueError("shape classifier input must lie in [0, 1]")
    return ad.softmax(shape_cnn_logits(weights, mask))


# -- checkpoints ----------------------------------------------------------------------

_HEADER = struct.Struct("<IIIIIdqI")  # version, variant, res, depth, base, dropout, seed, count


def save_weights(weights: Weights, path: Union[str, os.PathLike]) -> None:
    spec = weights.spec
    chunks = [MAGIC, _HEADER.pack(FORMAT_VERSION, _VARIANT_CODES[spec.variant],
                                  spec.input_resolution, spec.depth, spec.base_channels,
                                  spec.dropout, weights.seed, len(weights.params))]
    for name, t in weights.params.items():
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack(f"<I{t.ndim}I", t.ndim, *t.shape))
        chunks.append(t.data.astype("<f8").tobytes())
    Path(path).write_bytes(b"".join(chunks))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError("checkpoint is truncated")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_checkpoint(path: Union[str, os.PathLike]) -> Weights:
    """Load a checkpoint using the spec recorded inside it."""
    buf = Path(path).read_bytes()
    r = _Reader(buf)
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, vcode, res, depth, base, dropout, seed, count = r.unpack(_HEADER.format)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    if vcode >= len(Variant):
        raise CheckpointError(f"{path}: unknown network variant code {vcode}")
    try:
        spec = NetworkSpec(list(Variant)[vcode], res, depth, base, dropout)
    except InvalidSpecError as exc:
        raise CheckpointError(f"{path}: invalid recorded spec ({exc})") from None
    expected = param_shapes(spec)
    if count != len(expected):
        raise CheckpointError(f"{path}: {count} tensors recorded, spec needs {len(expected)}")
    params: OrderedDict[str, Tensor] = OrderedDict()
    for _ in range(count):
        (nlen,) = r.unpack("<I")
        try:
            name = r.take(nlen).decode("utf-8")
        except UnicodeDecodeError:
            raise CheckpointError(f"{path}: tensor name is not UTF-8") from None
        (rank,) = r.unpack("<I")
        if rank > 8:
            raise CheckpointError(f"{path}: implausible tensor rank {rank}")
        shape = r.unpack(f"<{rank}I")
        if expected.get(name) != tuple(shape):
            raise CheckpointError(f"{path}: tensor {name!r} {shape} does not match its spec")
        payload = r.take(8 * int(np.prod(shape)))
        data = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(shape)
        try:
            params[name] = ad.parameter(data)
        except ad.NonFiniteError:
            raise CheckpointError(f"{path}: tensor {name!r} holds non-finite values") from None
    if r.pos != len(buf):
        raise CheckpointError(f"{path}: trailing bytes after last tensor")
    return Weights(spec, seed, params)


def load_weights(spec: Optional[NetworkSpec], path: Union[str, os.PathLike]) -> Weights:
    """Load a checkpoint, requiring it to match ``spec`` when one is given."""
    weights = read_checkpoint(path)
    if spec is not None and weights.spec != spec:
        want = param_shapes(spec)
        got = {k: v.shape for k, v in weights.params.items()}
        if dict(want) != got:
            raise SpecMismatchError(f"{path}: parameter shapes do not match the requested spec")
        raise SpecMismatchError(f"{path}: recorded spec {weights.spec} != requested {spec}")
    return weights
