"""Programmatic builders for the reference workloads.

Weights are deterministic placeholders (seeded RNG); they exist so the
quantization and deployment pipeline has real payloads to move, not to
reproduce trained accuracy.
"""

from __future__ import annotations

import numpy as np

from j3dsim.ir import GraphIR, IRError, LayerNode, TensorSpec, infer_shapes


class _Builder:
    def __init__(self, seed: int = 7):
        self.rng = np.random.default_rng(seed)
        self.tensors: dict[str, TensorSpec] = {}
        self.layers: list[LayerNode] = []
        self.data: dict[str, np.ndarray] = {}
        self._n = 0

    def t(self, name: str, shape=None, dtype="float32") -> str:
        self.tensors[name] = TensorSpec(name, tuple(shape) if shape else None, dtype)
        return name

    def const(self, name: str, arr: np.ndarray) -> str:
        self.t(name, arr.shape)
        self.data[name] = arr.astype(np.float32)
        return name

    def layer(self, kind: str, inputs, attrs=None, name=None) -> str:
        self._n += 1
        lid = name or f"{kind.lower()}_{self._n}"
        out = self.t(f"{lid}_out")
        self.layers.append(LayerNode(lid, kind, list(inputs), [out], dict(attrs or {})))
        return out

    def conv(self, x: str, cin: int, cout: int, k: int, s: int, p: int,
             depthwise=False, act: str | None = "ReLU", name=None) -> str:
        self._n += 1
        lid = name or f"{'dw' if depthwise else 'conv'}_{self._n}"
        if depthwise:
            w = self.rng.normal(0, 0.3, (cout, 1, k, k))
            kind = "DepthwiseConv2D"
            attrs = {"kernel": [k, k], "stride": [s, s], "padding": [p, p], "groups": cout}
        else:
            w = self.rng.normal(0, 1.0 / np.sqrt(cin * k * k), (cout, cin, k, k))
            kind = "Conv2D"
            attrs = {"kernel": [k, k], "stride": [s, s], "padding": [p, p], "groups": 1}
        b = self.rng.uniform(-0.1, 0.1, (cout,))
        wn = self.const(f"{lid}_w", w)
        bn = self.const(f"{lid}_b", b)
        out = self.t(f"{lid}_out")
        self.layers.append(LayerNode(lid, kind, [x, wn, bn], [out], attrs))
        if act:
            out = self.layer(act, [out], name=f"{lid}_{act.lower()}")
        return out

    def dense(self, x: str, cin: int, cout: int, name="fc") -> str:
        w = self.rng.normal(0, 1.0 / np.sqrt(cin), (cout, cin))
        b = self.rng.uniform(-0.1, 0.1, (cout,))
        wn = self.const(f"{name}_w", w)
        bn = self.const(f"{name}_b", b)
        out = self.t(f"{name}_out")
        self.layers.append(LayerNode(name, "Dense", [x, wn, bn], [out], {}))
        return out

    def finish(self, inputs, outputs) -> GraphIR:
        g = GraphIR(self.tensors, self.layers, list(inputs), list(outputs), self.data)
        return infer_shapes(g)


def _scaled(ch: int, alpha: float) -> int:
    return max(8, int(round(ch * alpha)))


def build_mobilenet_v1(alpha: float, input_hw: tuple[int, int],
                       num_classes: int = 1000, seed: int = 7) -> GraphIR:
    """Standard 28-layer MobileNetV1 with channels scaled by alpha.

    Input height/width must be divisible by 16 (five stride-2 stages on a
    receptive field that the depthwise padding keeps aligned).
    """
    if alpha not in (0.25, 0.5, 0.75, 1.0):
        raise IRError(f"unsupported width multiplier {alpha}")
    h, w = input_hw
    if h % 16 or w % 16:
        raise IRError(f"input {h}x{w} must be divisible by 16")
    b = _Builder(seed)
    x = b.t("input", (1, 3, h, w))
    ch = _scaled(32, alpha)
    x = b.conv(x, 3, ch, k=3, s=2, p=1, name="conv1")
    blocks = [(64, 1), (128, 2), (128, 1), (256, 2), (256, 1), (512, 2),
              (512, 1), (512, 1), (512, 1), (512, 1), (512, 1), (1024, 2), (1024, 1)]
    for i, (cout, s) in enumerate(blocks, start=1):
        cout = _scaled(cout, alpha)
        x = b.conv(x, ch, ch, k=3, s=s, p=1, depthwise=True, name=f"dw{i}")
        x = b.conv(x, ch, cout, k=1, s=1, p=0, name=f"pw{i}")
        ch = cout
    x = b.layer("GlobalAvgPool", [x], name="gap")
    x = b.dense(x, ch, num_classes)
    return b.finish(["input"], [x])


def build_mobilenet_v2(input_hw: tuple[int, int], num_classes: int = 1000,
                       seed: int = 11) -> GraphIR:
    """Standard MobileNetV2: inverted residual blocks with linear
    bottlenecks, ReLU6 activations, residual Adds."""
    h, w = input_hw
    if h % 32 or w % 32:
        raise IRError(f"input {h}x{w} must be divisible by 32")
    b = _Builder(seed)
    x = b.t("input", (1, 3, h, w))
    x = b.conv(x, 3, 32, k=3, s=2, p=1, act="ReLU6", name="conv1")
    ch = 32
    cfg = [(1, 16, 1, 1), (6, 24, 2, 2), (6, 32, 3, 2), (6, 64, 4, 2),
           (6, 96, 3, 1), (6, 160, 3, 2), (6, 320, 1, 1)]
    bi = 0
    for t, c, n, s in cfg:
        for j in range(n):
            bi += 1
            stride = s if j == 0 else 1
            hidden = ch * t
            y = x
            if t != 1:
                y = b.conv(y, ch, hidden, k=1, s=1, p=0, act="ReLU6", name=f"b{bi}_exp")
            y = b.conv(y, hidden, hidden, k=3, s=stride, p=1, depthwise=True,
                       act="ReLU6", name=f"b{bi}_dw")
            y = b.conv(y, hidden, c, k=1, s=1, p=0, act=None, name=f"b{bi}_proj")
            if stride == 1 and ch == c:
                y = b.layer("Add", [x, y], name=f"b{bi}_add")
            x, ch = y, c
    x = b.conv(x, ch, 1280, k=1, s=1, p=0, act="ReLU6", name="conv_last")
    x = b.layer("GlobalAvgPool", [x], name="gap")
    x = b.dense(x, 1280, num_classes)
    return b.finish(["input"], [x])


def build_tiny_cnn(seed: int = 3) -> GraphIR:
    """Three-layer CNN fixture: conv3x3 + depthwise + pointwise on 8x8."""
    b = _Builder(seed)
    x = b.t("input", (1, 4, 8, 8))
    x = b.conv(x, 4, 8, k=3, s=1, p=1, name="conv1")
    x = b.conv(x, 8, 8, k=3, s=1, p=1, depthwise=True, name="dw1")
    x = b.conv(x, 8, 16, k=1, s=1, p=0, name="pw1")
    return b.finish(["input"], [x])


def build_pointwise_fixture(seed: int = 5) -> GraphIR:
    """Single 1x1 conv Cin=8, Cout=16 on a 4x4 map (capacity example)."""
    b = _Builder(seed)
    x = b.t("input", (1, 8, 4, 4))
    x = b.conv(x, 8, 16, k=1, s=1, p=0, act=None, name="pw")
    return b.finish(["input"], [x])


def build_overlap_fixture(seed: int = 9) -> GraphIR:
    """Two pointwise convs sized so layer 2's parameter load can hide
    behind layer 1's compute (scheduler masking fixture)."""
    b = _Builder(seed)
    x = b.t("input", (1, 32, 16, 16))
    x = b.conv(x, 32, 32, k=1, s=1, p=0, name="l1")
    x = b.conv(x, 32, 64, k=1, s=1, p=0, name="l2")
    return b.finish(["input"], [x])
