"""Feature extractors (1D-CNN, 1D-ResNet18, TCN), the classifier head and
the checkpoint container."""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ArgumentError, LoadError

BACKBONES = ("cnn1d", "resnet18_1d", "tcn")
CHECKPOINT_MAGIC = b"TSDACKPT1"

# first-layer kernel/stride per dataset; override in config
DATASET_DEFAULTS = {
    "UCIHAR": {"kernel_size": 5, "stride": 1},
    "WISDM": {"kernel_size": 5, "stride": 1},
    "HHAR": {"kernel_size": 5, "stride": 1},
    "SSC": {"kernel_size": 25, "stride": 6},
    "MFD": {"kernel_size": 32, "stride": 6},
}


@dataclass(frozen=True)
class BackboneSpec:
    kind: str = "cnn1d"
    input_channels: int = 9
    kernel_size: int = 5
    stride: int = 1
    feature_dim: int = 128
    num_classes: int = 6
    width: int = 64

    def __post_init__(self):
        if self.kind not in BACKBONES:
            raise ArgumentError(f"unknown backbone kind {self.kind!r}; expected one of {BACKBONES}")
        for name in ("input_channels", "kernel_size", "stride", "feature_dim", "width"):
            if getattr(self, name) < 1:
                raise ArgumentError(f"{name} must be >= 1")
        if self.num_classes < 2:
            raise ArgumentError("num_classes must be >= 2")

    def to_dict(self) -> dict:
        return asdict(self)


class CNN1D(nn.Module):
    """Three conv -> batch-norm -> ReLU -> max-pool blocks, then global average pooling."""

    def __init__(self, spec: BackboneSpec):
        super().__init__()
        w = spec.width
        mid = 2 * w

        def block(cin, cout, k, s):
            return nn.Sequential(
                nn.Conv1d(cin, cout, k, stride=s, padding=k // 2, bias=False),
                nn.BatchNorm1d(cout, momentum=0.1),
                nn.ReLU(),
                nn.MaxPool1d(2, stride=2, padding=1),
            )

        self.blocks = nn.Sequential(
            block(spec.input_channels, w, spec.kernel_size, spec.stride),
            block(w, mid, 8, 1),
            block(mid, spec.feature_dim, 8, 1),
        )

    def forward(self, x):
        return self.blocks(x).mean(-1)


class BasicBlock1d(nn.Module):
    def __init__(self, cin, cout, stride):
        super().__init__()
        self.conv1 = nn.Conv1d(cin, cout, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm1d(cout)
        self.conv2 = nn.Conv1d(cout, cout, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm1d(cout)
        self.shortcut = None
        if stride != 1 or cin != cout:
            self.shortcut = nn.Sequential(nn.Conv1d(cin, cout, 1, stride=stride, bias=False), nn.BatchNorm1d(cout))

    def forward(self, x):
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        skip = x if self.shortcut is None else self.shortcut(x)
        return F.relu(out + skip)


class ResNet18_1D(nn.Module):
    """ResNet-18 layout ([2, 2, 2, 2] basic blocks) with 1-D convolutions."""

    def __init__(self, spec: BackboneSpec):
        super().__init__()
        w = spec.width
        self.stem = nn.Sequential(
            nn.Conv1d(spec.input_channels, w, spec.kernel_size, stride=spec.stride,
                      padding=spec.kernel_size // 2, bias=False),
            nn.BatchNorm1d(w),
            nn.ReLU(),
            nn.MaxPool1d(3, stride=2, padding=1),
        )
        layers, cin = [], w
        for i, cout in enumerate((w, 2 * w, 4 * w, 8 * w)):
            stride = 1 if i == 0 else 2
            layers += [BasicBlock1d(cin, cout, stride), BasicBlock1d(cout, cout, 1)]
            cin = cout
        self.layers = nn.Sequential(*layers)
        self.project = nn.Linear(cin, spec.feature_dim)

    def forward(self, x):
        return self.project(self.layers(self.stem(x)).mean(-1))


class CausalConv1d(nn.Conv1d):
    """Conv1d left-padded so output step t only sees inputs <= t."""

    def __init__(self, cin, cout, kernel_size, dilation):
        super().__init__(cin, cout, kernel_size, dilation=dilation)
        self.left = (kernel_size - 1) * dilation

    def forward(self, x):
        return super().forward(F.pad(x, (self.left, 0)))


class TemporalBlock(nn.Module):
    def __init__(self, cin, cout, kernel_size, dilation):
        super().__init__()
        self.conv1 = CausalConv1d(cin, cout, kernel_size, dilation)
        self.conv2 = CausalConv1d(cout, cout, kernel_size, dilation)
        self.downsample = nn.Conv1d(cin, cout, 1) if cin != cout else None

    def forward(self, x):
        out = F.relu(self.conv1(x))
        out = F.relu(self.conv2(out))
        skip = x if self.downsample is None else self.downsample(x)
        return F.relu(out + skip)


class TCN(nn.Module):
    """Causal dilated residual blocks with dilation 1, 2, 4."""

    def __init__(self, spec: BackboneSpec):
        super().__init__()
        w = spec.width
        channels = (w, 2 * w, spec.feature_dim)
        k = max(spec.kernel_size, 2)
        blocks, cin = [], spec.input_channels
        for level, cout in enumerate(channels):
            blocks.append(TemporalBlock(cin, cout, k, 2 ** level))
            cin = cout
        self.blocks = nn.ModuleList(blocks)

    def sequence(self, x, upto: int | None = None):
        """Pre-pooling activations after ``upto`` blocks (all by default)."""
        for blk in self.blocks[:upto]:
            x = blk(x)
        return x

    def forward(self, x):
        return self.sequence(x).mean(-1)


_KINDS = {"cnn1d": CNN1D, "resnet18_1d": ResNet18_1D, "tcn": TCN}


class Network(nn.Module):
    """Feature extractor followed by a linear classifier head."""

    def __init__(self, spec: BackboneSpec):
        super().__init__()
        self.spec = spec
        self.backbone = _KINDS[spec.kind](spec)
        self.classifier = nn.Linear(spec.feature_dim, spec.num_classes)

    def features(self, x):
        return self.backbone(x)

    def forward(self, x):
        return self.classifier(self.backbone(x))


def build_backbone(spec: BackboneSpec, seed: int = 0) -> Network:
    """Construct a network whose initial parameters depend only on ``seed``."""
    if spec.kind not in _KINDS:
        raise ArgumentError(f"unknown backbone kind {spec.kind!r}")
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return Network(spec)


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def forward(model: Network, x) -> tuple[torch.Tensor, torch.Tensor]:
    """Return ``(features, probs)`` for a ``(B, C, T)`` batch."""
    x = torch.as_tensor(x, dtype=next(model.parameters()).dtype)
    spec = model.spec
    if x.ndim != 3 or x.shape[1] != spec.input_channels:
        raise ArgumentError(f"expected (B, {spec.input_channels}, T) input, got {tuple(x.shape)}")
    if x.shape[0] == 0:
        return x.new_zeros((0, spec.feature_dim)), x.new_zeros((0, spec.num_classes))
    z = model.features(x)
    return z, F.softmax(model.classifier(z), dim=1)


@torch.no_grad()
def predict_proba(model: Network, x, batch_size: int = 256) -> np.ndarray:
    """Eval-mode class probabilities as float64 numpy."""
    was_training = model.training
    model.eval()
    try:
        x = np.array(x, dtype=np.float32)
        out = [forward(model, torch.from_numpy(x[i:i + batch_size]))[1].double().numpy()
               for i in range(0, len(x), batch_size)]
    finally:
        model.train(was_training)
    return np.concatenate(out) if out else np.zeros((0, model.spec.num_classes))


@torch.no_grad()
def extract_features(model: Network, x, batch_size: int = 256) -> np.ndarray:
    was_training = model.training
    model.eval()
    try:
        x = np.array(x, dtype=np.float32)
        out = [model.features(torch.from_numpy(x[i:i + batch_size])).double().numpy()
               for i in range(0, len(x), batch_size)]
    finally:
        model.train(was_training)
    return np.concatenate(out) if out else np.zeros((0, model.spec.feature_dim))


# --------------------------------------------------------------------------
# checkpoint container:
#   magic | u32 header length | JSON header | raw little-endian tensor blobs

_DTYPES = {torch.float32: "f32le", torch.int64: "i64le"}
_NP = {"f32le": "<f4", "i64le": "<i8"}


def save_checkpoint(path, model: Network, metadata: dict | None = None) -> None:
    index, blobs, offset = [], [], 0
    for name, tensor in model.state_dict().items():
        tensor = tensor.detach().cpu()
        if tensor.dtype not in _DTYPES:
            tensor = tensor.float()
        dtype = _DTYPES[tensor.dtype]
        raw = np.ascontiguousarray(tensor.numpy(), dtype=_NP[dtype]).tobytes()
        index.append({"name": name, "dtype": dtype, "shape": list(tensor.shape), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps(
        {"spec": model.spec.to_dict(), "tensors": index, "metadata": metadata or {}},
        sort_keys=True,
    ).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC + struct.pack("<I", len(header)) + header)
        for raw in blobs:
            fh.write(raw)


def load_checkpoint(path) -> tuple[Network, dict]:
    raw = Path(path).read_bytes()
    m = len(CHECKPOINT_MAGIC)
    if raw[:m] != CHECKPOINT_MAGIC:
        raise LoadError(f"{path}: not a checkpoint")
    (hlen,) = struct.unpack("<I", raw[m:m + 4])
    header = json.loads(raw[m + 4:m + 4 + hlen])
    body = raw[m + 4 + hlen:]
    model = Network(BackboneSpec(**header["spec"]))
    state = {}
    for t in header["tensors"]:
        chunk = body[t["offset"]:t["offset"] + t["nbytes"]]
        arr = np.frombuffer(chunk, dtype=_NP[t["dtype"]]).reshape(t["shape"])
        state[t["name"]] = torch.from_numpy(arr.copy())
    model.load_state_dict(state)
    return model, header["metadata"]
