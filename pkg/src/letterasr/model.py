"""Gated convolutional acoustic model.

A stack of 1-D gated linear unit blocks, h(X) = (X * W + b) o sigma(X * V + c),
followed by a gated kw=1 projection and a linear output layer that produces
one score per grapheme per frame. Kernels are stored weight-normalized
(direction tensor plus per-channel scale) and the backward pass computes
exact gradients for every parameter. Everything is plain numpy with an
explicit cache, so a training step is forward(train=True) then backward.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass

import numpy as np

from .criterion import TransitionTable

CHECKPOINT_MAGIC = b"LASRCKPT"
CHECKPOINT_VERSION = 1


@dataclass
class ArchSpec:
    """Architecture hyperparameters.

    Per-layer hidden units, kernel widths, and dropout retain probabilities
    are linearly interpolated between the first and last conv layer.
    """

    n_conv_layers: int
    dropout_first: float
    dropout_last: float
    hu_first: int
    hu_last: int
    kw_first: int
    kw_last: int
    fc_size: int
    n_labels: int = 30

    def validate(self) -> None:
        if self.n_conv_layers < 1:
            raise ValueError("n_conv_layers must be at least 1")
        for name in ("dropout_first", "dropout_last"):
            p = getattr(self, name)
            if not 0.0 < p <= 1.0:
                raise ValueError(f"{name} must be a retain probability in (0, 1]")
        for name in ("hu_first", "hu_last", "kw_first", "kw_last", "fc_size", "n_labels"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")

    def to_dict(self) -> dict:
        return {
            "n_conv_layers": self.n_conv_layers,
            "dropout_first": self.dropout_first,
            "dropout_last": self.dropout_last,
            "hu_first": self.hu_first,
            "hu_last": self.hu_last,
            "kw_first": self.kw_first,
            "kw_last": self.kw_last,
            "fc_size": self.fc_size,
            "n_labels": self.n_labels,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ArchSpec":
        known = set(cls.__dataclass_fields__)
        extra = set(data) - known
        if extra:
            raise ValueError(f"unknown architecture field(s): {', '.join(sorted(extra))}")
        missing = known - set(data) - {"n_labels"}
        if missing:
            raise ValueError(f"missing architecture field(s): {', '.join(sorted(missing))}")
        spec = cls(**data)
        spec.validate()
        return spec


@dataclass(frozen=True)
class LayerShape:
    hu: int
    kw: int
    retain_p: float


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def expand_arch(spec: ArchSpec) -> list[LayerShape]:
    """Per-layer (hidden units, kernel width, retain probability).

    Integer quantities round half up, dropout stays fractional.
    """
    spec.validate()
    n = spec.n_conv_layers
    shapes = []
    for i in range(n):
        f = i / (n - 1) if n > 1 else 0.0
        shapes.append(
            LayerShape(
                hu=_round_half_up(spec.hu_first + f * (spec.hu_last - spec.hu_first)),
                kw=_round_half_up(spec.kw_first + f * (spec.kw_last - spec.kw_first)),
                retain_p=spec.dropout_first + f * (spec.dropout_last - spec.dropout_first),
            )
        )
    return shapes


def total_padding(spec: ArchSpec) -> int:
    """Frames lost by the conv stack; pad the input by this much."""
    return sum(shape.kw - 1 for shape in expand_arch(spec))


# ---------------------------------------------------------------------------
# Weight normalization
# ---------------------------------------------------------------------------


def effective_weight(v: np.ndarray, g: np.ndarray) -> np.ndarray:
    """w = g * v / ||v||, with the norm taken per output channel."""
    flat = v.reshape(v.shape[0], -1)
    norms = np.sqrt((flat.astype(np.float64) ** 2).sum(axis=1))
    if np.any(norms == 0):
        raise ValueError("zero-norm direction tensor")
    scale = (g / norms).astype(v.dtype)
    return v * scale.reshape((-1,) + (1,) * (v.ndim - 1))


def effective_weight_backward(v: np.ndarray, g: np.ndarray, dw: np.ndarray):
    """Chain d loss / d w back to the direction v and scale g."""
    out = v.shape[0]
    flat_v = v.reshape(out, -1).astype(np.float64)
    flat_dw = dw.reshape(out, -1).astype(np.float64)
    norms = np.sqrt((flat_v**2).sum(axis=1))
    dot = (flat_dw * flat_v).sum(axis=1)
    dg = dot / norms
    dv = (g / norms)[:, None] * flat_dw - (g * dot / norms**3)[:, None] * flat_v
    return dv.reshape(v.shape).astype(v.dtype), dg.astype(v.dtype)


# ---------------------------------------------------------------------------
# Dropout
# ---------------------------------------------------------------------------


def dropout_mask(shape, retain_p: float, rng: np.random.Generator) -> np.ndarray:
    """Binary keep-mask with P(keep) = retain_p."""
    if not 0.0 < retain_p <= 1.0:
        raise ValueError("retain probability must be in (0, 1]")
    if retain_p == 1.0:
        return np.ones(shape, dtype=np.float64)
    return (rng.random(shape) < retain_p).astype(np.float64)


def apply_dropout(x: np.ndarray, mask: np.ndarray, retain_p: float) -> np.ndarray:
    """Inverted dropout: keep and rescale by 1 / retain_p."""
    if not 0.0 < retain_p <= 1.0:
        raise ValueError("retain probability must be in (0, 1]")
    return x * mask.astype(x.dtype) / x.dtype.type(retain_p)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _windows(x: np.ndarray, kw: int) -> np.ndarray:
    # (t_out, in_dim, kw) strided view over the time axis.
    return np.lib.stride_tricks.sliding_window_view(x, kw, axis=0)


class GLUConvLayer:
    """One gated convolution block, with dropout on its output.

    Kernels W and V have shape (out, in, kw); the layer shortens the
    sequence by kw - 1 frames.
    """

    def __init__(self, in_dim: int, out_dim: int, kw: int, retain_p: float, rng, dtype=np.float32):
        if kw < 1:
            raise ValueError("kernel width must be at least 1")
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.kw = kw
        self.retain_p = float(retain_p)
        bound = 1.0 / math.sqrt(in_dim * kw)

        def kernel():
            v = rng.uniform(-bound, bound, size=(out_dim, in_dim, kw)).astype(dtype)
            g = np.sqrt((v.reshape(out_dim, -1).astype(np.float64) ** 2).sum(axis=1)).astype(dtype)
            return v, g

        self.w_v, self.w_g = kernel()
        self.v_v, self.v_g = kernel()
        self.b = np.zeros(out_dim, dtype=dtype)
        self.c = np.zeros(out_dim, dtype=dtype)
        self._cache = None
        self.grads: dict[str, np.ndarray] = {}

    def parameters(self) -> dict[str, np.ndarray]:
        return {
            "W.v": self.w_v,
            "W.g": self.w_g,
            "b": self.b,
            "V.v": self.v_v,
            "V.g": self.v_g,
            "c": self.c,
        }

    def forward(self, x: np.ndarray, train: bool = False, rng=None) -> np.ndarray:
        if x.shape[0] < self.kw:
            raise ValueError(
                f"sequence of {x.shape[0]} frames is shorter than kernel width {self.kw}"
            )
        w_eff = effective_weight(self.w_v, self.w_g)
        v_eff = effective_weight(self.v_v, self.v_g)
        win = _windows(x, self.kw)
        a = np.tensordot(win, w_eff, axes=[(1, 2), (1, 2)]) + self.b
        z = np.tensordot(win, v_eff, axes=[(1, 2), (1, 2)]) + self.c
        sig = _sigmoid(z)
        y = a * sig
        mask = None
        if train and self.retain_p < 1.0:
            mask = dropout_mask(y.shape, self.retain_p, rng)
            y = apply_dropout(y, mask, self.retain_p)
        if train:
            self._cache = (x, a, sig, mask)
        return y

    def backward(self, dy: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise RuntimeError("backward called without a preceding train-mode forward")
        x, a, sig, mask = self._cache
        if mask is not None:
            dy = dy * mask.astype(dy.dtype) / dy.dtype.type(self.retain_p)
        da = dy * sig
        dz = dy * a * sig * (1.0 - sig)

        win = _windows(x, self.kw)
        dw_eff = np.tensordot(da, win, axes=[(0,), (0,)])
        dv_eff = np.tensordot(dz, win, axes=[(0,), (0,)])
        w_eff = effective_weight(self.w_v, self.w_g)
        v_eff = effective_weight(self.v_v, self.v_g)

        dwv, dwg = effective_weight_backward(self.w_v, self.w_g, dw_eff)
        dvv, dvg = effective_weight_backward(self.v_v, self.v_g, dv_eff)
        self.grads = {
            "W.v": dwv,
            "W.g": dwg,
            "b": da.sum(axis=0),
            "V.v": dvv,
            "V.g": dvg,
            "c": dz.sum(axis=0),
        }

        # Fold the per-window input gradients back with overlap-add.
        dcols = np.tensordot(da, w_eff, axes=[(1,), (0,)]) + np.tensordot(
            dz, v_eff, axes=[(1,), (0,)]
        )
        dx = np.zeros_like(x)
        t_out = dy.shape[0]
        for k in range(self.kw):
            dx[k : k + t_out] += dcols[:, :, k]
        self._cache = None
        return dx

    def n_params(self) -> int:
        return sum(p.size for p in self.parameters().values())


class DenseLayer:
    """Plain linear output layer: y = x W^T + b."""

    def __init__(self, in_dim: int, out_dim: int, rng, dtype=np.float32):
        bound = 1.0 / math.sqrt(in_dim)
        self.w = rng.uniform(-bound, bound, size=(out_dim, in_dim)).astype(dtype)
        self.b = np.zeros(out_dim, dtype=dtype)
        self._cache = None
        self.grads: dict[str, np.ndarray] = {}

    def parameters(self) -> dict[str, np.ndarray]:
        return {"W": self.w, "b": self.b}

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        if train:
            self._cache = x
        return x @ self.w.T + self.b

    def backward(self, dy: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise RuntimeError("backward called without a preceding train-mode forward")
        x = self._cache
        self.grads = {"W": dy.T @ x, "b": dy.sum(axis=0)}
        self._cache = None
        return dy @ self.w

    def n_params(self) -> int:
        return self.w.size + self.b.size


class GatedConvNet:
    """Conv stack from an ArchSpec plus gated projection and output layer.

    The gated projection reuses the conv block with kernel width 1 and the
    deepest conv layer's dropout; the output layer is linear with no
    dropout after it. Forward expects input pre-padded by ``total_padding``
    frames so the output length equals the original frame count.
    """

    def __init__(self, spec: ArchSpec, input_dim: int = 40, seed: int = 0, dtype=np.float32):
        spec.validate()
        self.spec = spec
        self.input_dim = input_dim
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        shapes = expand_arch(spec)
        self.conv_layers: list[GLUConvLayer] = []
        in_dim = input_dim
        for shape in shapes:
            self.conv_layers.append(
                GLUConvLayer(in_dim, shape.hu, shape.kw, shape.retain_p, rng, dtype)
            )
            in_dim = shape.hu
        self.fc1 = GLUConvLayer(in_dim, spec.fc_size, 1, shapes[-1].retain_p, rng, dtype)
        self.out = DenseLayer(spec.fc_size, spec.n_labels, rng, dtype)
        self._ready_for_backward = False

    @property
    def total_padding(self) -> int:
        return sum(layer.kw - 1 for layer in self.conv_layers)

    @property
    def n_labels(self) -> int:
        return self.spec.n_labels

    def _blocks(self):
        for i, layer in enumerate(self.conv_layers, 1):
            yield f"conv{i}", layer
        yield "fc1", self.fc1
        yield "out", self.out

    def parameters(self) -> dict[str, np.ndarray]:
        """Live parameter arrays keyed by name, in declaration order."""
        params = {}
        for prefix, layer in self._blocks():
            for name, arr in layer.parameters().items():
                params[f"{prefix}.{name}"] = arr
        return params

    def n_params(self) -> int:
        return sum(p.size for p in self.parameters().values())

    def forward(self, feats: np.ndarray, train: bool = False, seed: int | None = None) -> np.ndarray:
        """Per-frame label scores, shape (frames - total_padding, n_labels).

        Train mode records the intermediates backward() needs and draws
        dropout masks from a generator seeded with ``seed``; the result is
        deterministic given (parameters, input, seed, mode).
        """
        x = np.asarray(feats, dtype=self.dtype)
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ValueError(f"expected (frames, {self.input_dim}) input, got {x.shape}")
        rng = np.random.default_rng(seed) if train else None
        for layer in self.conv_layers:
            x = layer.forward(x, train=train, rng=rng)
        x = self.fc1.forward(x, train=train, rng=rng)
        y = self.out.forward(x, train=train)
        self._ready_for_backward = train
        return y

    def backward(self, d_emissions: np.ndarray) -> dict[str, np.ndarray]:
        """Gradients for every parameter given d loss / d emissions."""
        if not self._ready_for_backward:
            raise RuntimeError("backward requires a preceding train-mode forward")
        d = np.asarray(d_emissions, dtype=self.dtype)
        d = self.out.backward(d)
        d = self.fc1.backward(d)
        for layer in reversed(self.conv_layers):
            d = layer.backward(d)
        self._ready_for_backward = False
        grads = {}
        for prefix, layer in self._blocks():
            for name, arr in layer.grads.items():
                grads[f"{prefix}.{name}"] = arr
        return grads

    def describe(self) -> list[dict]:
        """Per-layer rows: name, shape of the block, parameter count."""
        rows = []
        in_dim = self.input_dim
        for i, layer in enumerate(self.conv_layers, 1):
            rows.append(
                {
                    "layer": f"conv{i}",
                    "in": in_dim,
                    "out": layer.out_dim,
                    "kw": layer.kw,
                    "retain_p": layer.retain_p,
                    "params": layer.n_params(),
                }
            )
            in_dim = layer.out_dim
        rows.append(
            {
                "layer": "fc1",
                "in": in_dim,
                "out": self.fc1.out_dim,
                "kw": 1,
                "retain_p": self.fc1.retain_p,
                "params": self.fc1.n_params(),
            }
        )
        rows.append(
            {
                "layer": "out",
                "in": self.fc1.out_dim,
                "out": self.spec.n_labels,
                "kw": 1,
                "retain_p": 1.0,
                "params": self.out.n_params(),
            }
        )
        return rows


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------
# Layout: magic, u32 header length, JSON header (version, arch, input dim,
# criterion name, tensor names and shapes), then each tensor as little-endian
# float32 in header order.


def save_checkpoint(path, model: GatedConvNet, transitions: TransitionTable | None = None,
                    criterion: str = "asg") -> None:
    params = dict(model.parameters())
    if transitions is not None:
        params["transitions.trans"] = transitions.trans
        params["transitions.start"] = transitions.start
    header = {
        "version": CHECKPOINT_VERSION,
        "arch": model.spec.to_dict(),
        "input_dim": model.input_dim,
        "criterion": criterion,
        "has_transitions": transitions is not None,
        "tensors": [{"name": k, "shape": list(v.shape)} for k, v in params.items()],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for v in params.values():
            f.write(np.ascontiguousarray(v, dtype="<f4").tobytes())


def load_checkpoint(path, dtype=np.float32):
    """Returns (model, transitions or None, header dict)."""
    with open(path, "rb") as f:
        magic = f.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (blob_len,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(blob_len).decode("utf-8"))
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {header.get('version')}")
        spec = ArchSpec.from_dict(header["arch"])
        model = GatedConvNet(spec, input_dim=header["input_dim"], seed=0, dtype=dtype)
        params = dict(model.parameters())
        loaded: dict[str, np.ndarray] = {}
        for entry in header["tensors"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(f.read(count * 4), dtype="<f4")
            if data.size != count:
                raise ValueError(f"{path}: truncated tensor {entry['name']}")
            loaded[entry["name"]] = data.reshape(shape)
    for name, arr in params.items():
        if name not in loaded:
            raise ValueError(f"{path}: checkpoint is missing tensor {name}")
        if loaded[name].shape != arr.shape:
            raise ValueError(f"{path}: tensor {name} has shape {loaded[name].shape}, expected {arr.shape}")
        arr[...] = loaded[name].astype(arr.dtype)
    transitions = None
    if header.get("has_transitions"):
        transitions = TransitionTable(
            loaded["transitions.trans"].astype(np.float64).copy(),
            loaded["transitions.start"].astype(np.float64).copy(),
        )
    return model, transitions, header
