"""Differentiable-classifier substrate.

Small MLP / CNN / linear architectures wrapped behind a uniform interface:
forward evaluation to logits/probabilities/labels, per-block hidden
activations, and gradients of a selectable loss with respect to the input.
Autograd is torch; every public boundary speaks numpy.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .validation import ConfigurationError, NumericError, ValidationError, require

INPUT_LOSSES = ("ce", "kl", "cw")


@dataclass(frozen=True)
class ArchitectureSpec:
    """Declarative model description; round-trips through checkpoints."""

    kind: str  # "linear" | "mlp" | "cnn"
    input_shape: tuple[int, ...]
    n_classes: int
    hidden: tuple[int, ...] = ()
    channels: tuple[int, ...] = ()

    def __post_init__(self):
        require(self.kind in ("linear", "mlp", "cnn"), f"unknown architecture kind: {self.kind!r}")
        require(self.n_classes >= 2, "n_classes must be >= 2")
        if self.kind == "cnn":
            require(len(self.input_shape) == 3, "cnn expects (C, H, W) input shape")
            require(len(self.channels) >= 1, "cnn needs at least one conv block")

    @property
    def input_dim(self) -> int:
        return int(np.prod(self.input_shape))

    @property
    def depth(self) -> int:
        """Number of recorded blocks (post-activation maps plus the logit head)."""
        if self.kind == "linear":
            return 1
        if self.kind == "mlp":
            return len(self.hidden) + 1
        return len(self.channels) + 1

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "input_shape": list(self.input_shape),
            "n_classes": self.n_classes,
            "hidden": list(self.hidden),
            "channels": list(self.channels),
        }

    @staticmethod
    def from_dict(d: dict) -> "ArchitectureSpec":
        return ArchitectureSpec(
            kind=d["kind"],
            input_shape=tuple(d["input_shape"]),
            n_classes=int(d["n_classes"]),
            hidden=tuple(d.get("hidden", ())),
            channels=tuple(d.get("channels", ())),
        )


def mlp_spec(input_dim: int, n_classes: int, hidden: tuple[int, ...] = (64, 64)) -> ArchitectureSpec:
    return ArchitectureSpec("mlp", (input_dim,), n_classes, hidden=hidden)


def linear_spec(input_dim: int, n_classes: int) -> ArchitectureSpec:
    return ArchitectureSpec("linear", (input_dim,), n_classes)


def cnn_spec(n_classes: int, channels: tuple[int, ...] = (16, 32, 32, 64),
             input_shape: tuple[int, int, int] = (3, 32, 32)) -> ArchitectureSpec:
    return ArchitectureSpec("cnn", input_shape, n_classes, channels=channels)


@dataclass
class Prediction:
    """Forward-pass outputs for a batch."""

    logits: np.ndarray        # (B, K)
    probabilities: np.ndarray  # (B, K), rows on the simplex
    labels: np.ndarray        # (B,), argmax with lowest-index tie break


class _BlockNet(nn.Module):
    """Feed-forward net as an explicit block list; block outputs are the
    recorded hidden activations, the final block emitting logits."""

    def __init__(self, spec: ArchitectureSpec):
        super().__init__()
        self.spec = spec
        blocks: list[nn.Module] = []
        if spec.kind in ("linear", "mlp"):
            dims = [spec.input_dim, *spec.hidden, spec.n_classes]
            for i in range(len(dims) - 1):
                layers: list[nn.Module] = [nn.Linear(dims[i], dims[i + 1])]
                if i < len(dims) - 2:
                    layers.append(nn.ReLU())
                blocks.append(nn.Sequential(*layers))
        else:
            in_c, height, width = spec.input_shape
            strides = [1 if i % 2 == 0 else 2 for i in range(len(spec.channels))]
            for out_c, s in zip(spec.channels, strides):
                blocks.append(nn.Sequential(nn.Conv2d(in_c, out_c, 3, stride=s, padding=1), nn.ReLU()))
                in_c = out_c
                height = (height + 1) // 2 if s == 2 else height
                width = (width + 1) // 2 if s == 2 else width
            blocks.append(nn.Sequential(
                nn.Flatten(), nn.Linear(in_c * height * width, spec.n_classes)))
        self.blocks = nn.ModuleList(blocks)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for block in self.blocks:
            x = block(x)
        return x

    def forward_collect(self, x: torch.Tensor) -> list[torch.Tensor]:
        outs = []
        for block in self.blocks:
            x = block(x)
            outs.append(x)
        return outs


class Classifier:
    """A parameterized map from inputs in [0, 1]^d to class logits."""

    def __init__(self, spec: ArchitectureSpec, dtype: str = "float64",
                 rng: np.random.Generator | None = None):
        require(dtype in ("float32", "float64"), f"unsupported dtype {dtype!r}")
        self.spec = spec
        self.dtype = dtype
        self.torch_dtype = torch.float64 if dtype == "float64" else torch.float32
        self.module = _BlockNet(spec).to(self.torch_dtype)
        self.train_mode = False
        if rng is not None:
            self.initialize(rng)

    # ------------------------------------------------------------------ setup

    def initialize(self, rng: np.random.Generator) -> "Classifier":
        """He-style init with all randomness drawn from ``rng``.

        The logit head starts at zero so training begins from the uniform
        prediction instead of a random high-loss state.
        """
        weights = [p for p in self.module.parameters() if p.ndim >= 2]
        with torch.no_grad():
            for p in self.module.parameters():
                random_init = p.ndim >= 2 and (len(weights) == 1 or p is not weights[-1])
                if random_init:
                    fan_in = int(np.prod(p.shape[1:]))
                    w = rng.standard_normal(tuple(p.shape)) * np.sqrt(2.0 / fan_in)
                    p.copy_(torch.from_numpy(w).to(self.torch_dtype))
                else:
                    p.zero_()
        return self

    def zero_parameters(self) -> "Classifier":
        with torch.no_grad():
            for p in self.module.parameters():
                p.zero_()
        return self

    @property
    def n_classes(self) -> int:
        return self.spec.n_classes

    def set_train_mode(self, flag: bool) -> None:
        self.train_mode = flag
        self.module.train(flag)

    # ------------------------------------------------------------- parameters

    def get_parameters(self) -> list[np.ndarray]:
        return [p.detach().cpu().numpy().copy() for p in self.module.parameters()]

    def set_parameters(self, params: list[np.ndarray]) -> None:
        own = list(self.module.parameters())
        require(len(own) == len(params), "parameter count mismatch", ValidationError)
        with torch.no_grad():
            for p, new in zip(own, params):
                arr = np.asarray(new)
                require(tuple(arr.shape) == tuple(p.shape),
                        f"parameter shape mismatch: {arr.shape} vs {tuple(p.shape)}", ValidationError)
                p.copy_(torch.from_numpy(arr.astype(p.detach().cpu().numpy().dtype)))

    def clone(self) -> "Classifier":
        other = Classifier(self.spec, dtype=self.dtype)
        other.set_parameters(self.get_parameters())
        other.set_train_mode(self.train_mode)
        return other

    def parameters_finite(self) -> bool:
        return all(bool(torch.isfinite(p).all()) for p in self.module.parameters())

    def checksum(self) -> str:
        h = hashlib.sha256()
        for p in self.module.parameters():
            h.update(p.detach().cpu().numpy().tobytes())
        return h.hexdigest()

    # ----------------------------------------------------------------- tensor

    def to_input_tensor(self, x, requires_grad: bool = False) -> torch.Tensor:
        """Validate and shape a numpy/torch batch for the module."""
        if isinstance(x, torch.Tensor):
            t = x.to(self.torch_dtype)
        else:
            t = torch.from_numpy(np.ascontiguousarray(x, dtype=np.float64)).to(self.torch_dtype)
        if not bool(torch.isfinite(t).all()):
            raise ValidationError("input contains non-finite values")
        shape = self.spec.input_shape
        if t.shape == shape:
            t = t.unsqueeze(0)
        elif self.spec.kind == "cnn" and t.ndim == 2 and t.shape[1] == self.spec.input_dim:
            t = t.reshape(-1, *shape)
        elif t.ndim == len(shape) + 1 and tuple(t.shape[1:]) == shape:
            pass
        else:
            raise ValidationError(f"input shape {tuple(t.shape)} does not match architecture {shape}")
        if requires_grad:
            t = t.clone().requires_grad_(True)
        return t

    def logits_t(self, x_t: torch.Tensor) -> torch.Tensor:
        return self.module(x_t)

    # ---------------------------------------------------------------- forward

    def forward(self, x) -> Prediction:
        """Logits, softmax probabilities, and argmax labels for a batch."""
        single = not isinstance(x, torch.Tensor) and np.asarray(x).shape == self.spec.input_shape
        t = self.to_input_tensor(x)
        with torch.no_grad():
            logits = self.module(t)
            probs = torch.softmax(logits, dim=1)
        logits_np = logits.cpu().numpy()
        probs_np = probs.cpu().numpy()
        labels = np.argmax(logits_np, axis=1).astype(np.int64)
        if single:
            logits_np, probs_np, labels = logits_np[0], probs_np[0], labels[0]
        return Prediction(logits=logits_np, probabilities=probs_np, labels=labels)

    def predict(self, x) -> np.ndarray:
        return self.forward(x).labels

    def hidden_activations(self, x) -> list[np.ndarray]:
        """Per-block activations in forward order; last entry is the logits."""
        single = not isinstance(x, torch.Tensor) and np.asarray(x).shape == self.spec.input_shape
        t = self.to_input_tensor(x)
        with torch.no_grad():
            outs = self.module.forward_collect(t)
        arrays = [o.cpu().numpy() for o in outs]
        if single:
            arrays = [a[0] for a in arrays]
        return arrays

    # --------------------------------------------------------------- gradient

    def input_loss_t(self, x_t: torch.Tensor, y: torch.Tensor | None,
                     loss_kind: str, reference: torch.Tensor | None = None) -> torch.Tensor:
        """Summed-over-batch attack loss used for input gradients."""
        logits = self.module(x_t)
        if loss_kind == "ce":
            require(y is not None, "ce loss needs labels", ValidationError)
            return F.cross_entropy(logits, y, reduction="sum")
        if loss_kind == "kl":
            require(reference is not None, "kl loss needs reference probabilities", ValidationError)
            logp = F.log_softmax(logits, dim=1)
            ref = torch.clamp(reference, min=1e-12)
            return (ref * (torch.log(ref) - logp)).sum()
        if loss_kind == "cw":
            require(y is not None, "cw loss needs labels", ValidationError)
            true = logits.gather(1, y.view(-1, 1)).squeeze(1)
            masked = logits.clone()
            masked.scatter_(1, y.view(-1, 1), float("-inf"))
            return (masked.max(dim=1).values - true).sum()
        raise ConfigurationError(f"unsupported loss_kind {loss_kind!r}; expected one of {INPUT_LOSSES}")

    def input_gradient(self, x, y=None, loss_kind: str = "ce", reference=None) -> np.ndarray:
        """Gradient of the chosen loss w.r.t. the input, parameters frozen."""
        single = not isinstance(x, torch.Tensor) and np.asarray(x).shape == self.spec.input_shape
        t = self.to_input_tensor(x, requires_grad=True)
        y_t = None
        if y is not None:
            y_t = torch.as_tensor(np.atleast_1d(np.asarray(y)), dtype=torch.int64)
        ref_t = None
        if reference is not None:
            ref_t = torch.as_tensor(np.atleast_2d(np.asarray(reference)), dtype=self.torch_dtype)
        loss = self.input_loss_t(t, y_t, loss_kind, ref_t)
        grad, = torch.autograd.grad(loss, t)
        if not bool(torch.isfinite(grad).all()):
            raise NumericError("non-finite input gradient")
        out = grad.cpu().numpy()
        return out[0] if single else out


# ----------------------------------------------------------------- checkpoints

_MAGIC = b"ADVLAB1\n"


def save_checkpoint(classifier: Classifier, path: str | Path, metadata: dict | None = None) -> Path:
    """Write a deterministic binary parameter blob plus a JSON sidecar.

    The blob layout is magic, a length-prefixed JSON manifest (architecture,
    dtype, per-array shapes), then the raw little-endian array bytes in
    parameter order. Identical parameters always produce identical bytes.
    """
    path = Path(path)
    params = classifier.get_parameters()
    manifest = {
        "arch": classifier.spec.to_dict(),
        "dtype": classifier.dtype,
        "params": [{"shape": list(p.shape), "dtype": str(p.dtype)} for p in params],
    }
    manifest_bytes = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(len(manifest_bytes).to_bytes(8, "little"))
        f.write(manifest_bytes)
        for p in params:
            f.write(np.ascontiguousarray(p).tobytes())
    sidecar = Path(str(path) + ".json")
    with open(sidecar, "w", encoding="utf-8") as f:
        json.dump(metadata or {}, f, sort_keys=True, indent=2)
        f.write("\n")
    return path


def load_checkpoint(path: str | Path) -> tuple[Classifier, dict]:
    """Rebuild a classifier from a blob written by :func:`save_checkpoint`."""
    path = Path(path)
    with open(path, "rb") as f:
        magic = f.read(len(_MAGIC))
        if magic != _MAGIC:
            raise ValidationError(f"{path} is not a checkpoint blob")
        n = int.from_bytes(f.read(8), "little")
        manifest = json.loads(f.read(n).decode("utf-8"))
        params = []
        for entry in manifest["params"]:
            shape = tuple(entry["shape"])
            dtype = np.dtype(entry["dtype"])
            count = int(np.prod(shape)) if shape else 1
            raw = f.read(count * dtype.itemsize)
            if len(raw) != count * dtype.itemsize:
                raise ValidationError(f"{path} is truncated")
            params.append(np.frombuffer(raw, dtype=dtype).reshape(shape).copy())
    spec = ArchitectureSpec.from_dict(manifest["arch"])
    clf = Classifier(spec, dtype=manifest["dtype"])
    clf.set_parameters(params)
    metadata = {}
    sidecar = Path(str(path) + ".json")
    if sidecar.exists():
        metadata = json.loads(sidecar.read_text(encoding="utf-8"))
    return clf, metadata
