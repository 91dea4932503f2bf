"""Fixtures: ONNX files are generated on the fly with torch's legacy
exporter rather than checked in as binaries."""

import pytest

torch = pytest.importorskip("torch")
import torch.nn as nn  # noqa: E402


def export_onnx(model, x, path, **kw):
    """torch.onnx.export without requiring the onnx package (the exporter
    only needs it for an onnxscript post-pass that plain models never use)."""
    from torch.onnx._internal.torchscript_exporter import onnx_proto_utils
    orig = onnx_proto_utils._add_onnxscript_fn
    onnx_proto_utils._add_onnxscript_fn = lambda model_bytes, custom_opsets: model_bytes
    try:
        torch.onnx.export(model.eval(), x, str(path), dynamo=False, **kw)
    finally:
        onnx_proto_utils._add_onnxscript_fn = orig
    return str(path)


class SmallNet(nn.Module):
    def __init__(self):
        super().__init__()
        self.conv1 = nn.Conv2d(3, 8, 3, padding=1)
        self.pool = nn.MaxPool2d(2, 2)
        self.conv2 = nn.Conv2d(8, 16, 3, stride=2, padding=1)
        self.fc = nn.Linear(16, 10)

    def forward(self, x):
        x = torch.relu(self.conv1(x))
        x = self.pool(x)
        x = nn.functional.relu6(self.conv2(x))
        x = nn.functional.adaptive_avg_pool2d(x, 1)
        x = torch.flatten(x, 1)
        return self.fc(x)


@pytest.fixture(scope="session")
def small_net():
    torch.manual_seed(7)
    return SmallNet().eval()


@pytest.fixture(scope="session")
def small_onnx(small_net, tmp_path_factory):
    path = tmp_path_factory.mktemp("onnx") / "small.onnx"
    return export_onnx(small_net, torch.randn(1, 3, 16, 16), path)


@pytest.fixture(scope="session")
def mobilenet_v2_onnx(tmp_path_factory):
    torchvision = pytest.importorskip("torchvision")
    torch.manual_seed(0)
    m = torchvision.models.mobilenet_v2(weights=None)
    path = tmp_path_factory.mktemp("onnx") / "mnv2.onnx"
    return export_onnx(m, torch.randn(1, 3, 224, 224), path)
