"""The three convolutional networks: DecomposeNet, ShadowNet and SynthesisNet.

Layer tables list the full-size channel counts; a scale factor ``s`` shrinks
every hidden width to ``max(4, ceil(s * c))``. Input widths of concatenating
layers are derived from their sources rather than copied from the tables, and
the output heads run at stride 1 so that predictions keep the input
resolution.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .autodiff import Tensor, concat
from .layers import conv2d, he_normal, leaky_relu, normalize_channels, same_padding, sigmoid

NAMES = ("decompose", "shadow", "synthesis")
IN_CHANNELS = {"decompose": 4, "shadow": 3, "synthesis": 17}


class NetworkConfigError(ValueError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: str  # conv | upconv | head
    kernel: int
    stride: int
    cin: int
    cout: int
    inputs: tuple  # layer names concatenated along channels; "input" is the network input
    activation: str = "leaky"  # leaky | sigmoid | normalize | none
    bias: bool = True


@dataclass(frozen=True)
class NetworkSpec:
    name: str
    scale: float
    in_channels: int
    layers: tuple
    outputs: tuple

    def to_dict(self) -> dict:
        d = asdict(self)
        d["layers"] = [asdict(l) for l in self.layers]
        return d

    @classmethod
    def from_dict(cls, d) -> "NetworkSpec":
        layers = tuple(LayerSpec(**{**l, "inputs": tuple(l["inputs"])}) for l in d["layers"])
        return cls(d["name"], float(d["scale"]), int(d["in_channels"]), layers, tuple(d["outputs"]))


def scaled(c: int, s: float) -> int:
    return max(4, math.ceil(c * s - 1e-9))


# (name, kernel, full-size output channels, skip source or None)
_ENC_DECOMPOSE = [("rgb_conv0", 6, 32), ("rgb_conv1", 4, 64), ("rgb_conv2", 4, 128), ("rgb_conv3", 4, 256), ("rgb_conv4", 4, 512)]
_DEC_DECOMPOSE = [256, 128, 128, 64, 64]
_ENC_SHADOW = [("conv0", 6, 32), ("conv1", 4, 64), ("conv2", 4, 128), ("conv3", 4, 256), ("conv4", 4, 256)]
_DEC_SHADOW = [256, 256, 128, 64, 32]
_ENC_SYNTH = [("conv0", 6, 64), ("conv1", 4, 128), ("conv2", 4, 128), ("conv3", 4, 256), ("conv4", 4, 256)]
_DEC_SYNTH = [512, 256, 128, 64, 32]


def _encoder(table, cin, s):
    layers, widths, prev = [], {"input": cin}, "input"
    for name, k, c in table:
        out = scaled(c, s)
        layers.append(LayerSpec(name, "conv", k, 2, widths[prev], out, (prev,)))
        widths[name] = out
        prev = name
    return layers, widths


def _decoder(enc_names, dec_table, widths, s, prefix=""):
    """U-Net decoder: upconv_i takes encoder level ``4 - i`` concatenated with upconv_{i-1}."""
    layers = []
    prev = None
    for i, c in enumerate(dec_table):
        name = f"{prefix}upconv{i}"
        srcs = (enc_names[-1],) if i == 0 else (enc_names[4 - i], prev)
        cin = sum(widths[x] for x in srcs)
        out = scaled(c, s)
        layers.append(LayerSpec(name, "upconv", 4, 2, cin, out, srcs))
        widths[name] = out
        prev = name
    return layers, prev


def network_spec(which: str, scale: float = 0.25) -> NetworkSpec:
    if which not in NAMES:
        raise NetworkConfigError(f"unknown network {which!r}; expected one of {NAMES}")
    if not 0.0 < scale <= 1.0:
        raise NetworkConfigError("scale must be in (0, 1]")
    cin = IN_CHANNELS[which]
    if which == "decompose":
        layers, widths = _encoder(_ENC_DECOMPOSE, cin, scale)
        enc = [n for n, _, _ in _ENC_DECOMPOSE]
        heads = [("albedo", 3, "none", False), ("normal", 3, "normalize", True), ("roughness", 1, "sigmoid", True)]
        for head, cout, act, bias in heads:
            dec, last = _decoder(enc, _DEC_DECOMPOSE, widths, scale, prefix=f"{head}/")
            layers += dec
            layers.append(LayerSpec(head, "head", 5, 1, widths[last], cout, (last,), act, bias))
        outputs = tuple(h for h, *_ in heads)
    elif which == "shadow":
        layers, widths = _encoder(_ENC_SHADOW, cin, scale)
        dec, last = _decoder([n for n, _, _ in _ENC_SHADOW], _DEC_SHADOW, widths, scale)
        layers += dec
        layers.append(LayerSpec("shadow", "head", 6, 1, widths[last], 1, (last,), "sigmoid", True))
        outputs = ("shadow",)
    else:
        layers, widths = _encoder(_ENC_SYNTH, cin, scale)
        dec, last = _decoder([n for n, _, _ in _ENC_SYNTH], _DEC_SYNTH, widths, scale)
        layers += dec
        layers.append(LayerSpec("relight", "head", 5, 1, widths[last], 3, (last,), "none", False))
        outputs = ("relight",)
    return NetworkSpec(which, float(scale), cin, tuple(layers), outputs)


class Network:
    """Parameters plus a forward pass for a :class:`NetworkSpec`."""

    def __init__(self, spec: NetworkSpec, params: dict):
        self.spec = spec
        self.params = params

    @classmethod
    def init(cls, spec: NetworkSpec, seed=0, dtype=np.float32) -> "Network":
        rng = np.random.default_rng(seed)
        params = {}
        for l in spec.layers:
            shape = (l.cout, l.cin, l.kernel, l.kernel) if l.kind != "upconv" else (l.cin, l.cout, l.kernel, l.kernel)
            w = he_normal(rng, shape, l.cin * l.kernel * l.kernel, dtype)
            params[f"{l.name}.weight"] = Tensor(w, requires_grad=True, name=f"{l.name}.weight")
            if l.bias:
                params[f"{l.name}.bias"] = Tensor(np.zeros(l.cout, dtype), requires_grad=True, name=f"{l.name}.bias")
        return cls(spec, params)

    def parameters(self) -> list:
        return list(self.params.values())

    def num_params(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def set_trainable(self, flag: bool):
        for p in self.params.values():
            p.requires_grad = flag
            p.grad = None

    def _layer(self, l: LayerSpec, x):
        w = self.params[f"{l.name}.weight"]
        b = self.params.get(f"{l.name}.bias")
        if l.kind == "upconv":
            y = conv2d(x, w, b, stride=2, padding=1, transposed=True)
        else:
            y = conv2d(x, w, b, stride=l.stride, padding=same_padding(l.kernel, l.stride))
        if l.activation == "leaky":
            return leaky_relu(y)
        if l.activation == "sigmoid":
            return sigmoid(y)
        if l.activation == "normalize":
            return normalize_channels(y)
        return y

    def forward(self, x) -> dict:
        x = x if isinstance(x, Tensor) else Tensor(x)
        if x.ndim != 4 or x.shape[1] != self.spec.in_channels:
            raise NetworkConfigError(f"{self.spec.name} expects (N, {self.spec.in_channels}, H, W), got {x.shape}")
        if x.shape[2] % 32 or x.shape[3] % 32:
            raise NetworkConfigError("spatial size must be a multiple of 32")
        acts = {"input": x}
        for l in self.spec.layers:
            srcs = [acts[s] for s in l.inputs]
            acts[l.name] = self._layer(l, srcs[0] if len(srcs) == 1 else concat(srcs, axis=1))
        return {k: acts[k] for k in self.spec.outputs}

    __call__ = forward


def build_network(which: str, scale: float = 0.25, seed: int = 0, dtype=np.float32) -> Network:
    return Network.init(network_spec(which, scale), seed, dtype)
