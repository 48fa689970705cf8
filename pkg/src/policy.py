"""
Fixing policies: trace of recent iterates -> probability that the variable converges to 1

The network clamps its logits to [-LOGIT_BOUND, LOGIT_BOUND] before the double precision sigmoid,
so every probability lies in [sigmoid(-30), sigmoid(30)], strictly inside (0, 1).
"""
import logging
from json import dumps, loads
from math import sqrt
from struct import pack, unpack
from typing import Any, Dict, List
import numpy as np
import torch
from torch import nn
from errors import ModelFormatError, ValidationError

logger = logging.getLogger(__name__)

MODEL_FORMAT_VERSION = 1
INFERENCE_CHUNK = 8192
LOGIT_BOUND = 30.0


class PolicyConfig:
    """
    Shape of the policy network

    Args:
        beta: length of the iterate window seen by the policy
        window: width d_h of one sliding-window node
        stride: step between consecutive windows
        d_n: model width
        H: attention heads
        L: attention layers
        d_ff: feed-forward width inside an attention layer
        mlp_dims: hidden sizes of the classification head
        use_attention: False gives the ablation without the attention stack
        seed: weight initialisation seed
    """
    FIELDS = ("beta", "window", "stride", "d_n", "H", "L", "d_ff", "mlp_dims", "use_attention", "seed")

    def __init__(self, beta: int = 100, window: int = 10, stride: int = 10, d_n: int = 128, H: int = 8,
                 L: int = 2, d_ff: int = 512, mlp_dims=(256, 128, 16), use_attention: bool = True,
                 seed: int = 0):
        if not 1 <= window <= beta or stride < 1:
            raise ValidationError(f"need 1 <= window <= beta and stride >= 1 (beta={beta}, window={window}, stride={stride})")
        if (beta - window) % stride:
            raise ValidationError(f"beta - window ({beta - window}) must be divisible by stride {stride}")
        if d_n % H:
            raise ValidationError(f"d_n={d_n} must be divisible by H={H}")
        self.beta = int(beta)
        self.window = int(window)
        self.stride = int(stride)
        self.d_n = int(d_n)
        self.H = int(H)
        self.L = int(L)
        self.d_ff = int(d_ff)
        self.mlp_dims = [int(d) for d in mlp_dims]
        self.use_attention = bool(use_attention)
        self.seed = int(seed)
        return

    @property
    def alpha(self) -> int:
        """Number of window nodes"""
        return (self.beta - self.window) // self.stride + 1

    def to_dict(self) -> Dict[str, Any]:
        return {name: getattr(self, name) for name in self.FIELDS}

    @classmethod
    def from_dict(cls, values: Dict[str, Any]) -> "PolicyConfig":
        return cls(**{k: v for k, v in values.items() if k in cls.FIELDS})

    @classmethod
    def from_settings(cls, settings, mrf: bool = False, **overrides) -> "PolicyConfig":
        values = settings.category("policy", "policy_mrf" if mrf else None)
        values.update({k: v for k, v in overrides.items() if v is not None})
        if overrides.get("beta") is not None and overrides.get("window") is None:
            values["window"] = values["stride"] = max(1, overrides["beta"] // 10)
        return cls.from_dict(values)


def embed_window(trace, cfg: PolicyConfig) -> np.ndarray:
    """
    alpha x d_h matrix whose row k is trace[k*stride : k*stride + d_h]

    Together with positional_encoding and attach_pe this is the numpy reference for
    FixingPolicy.embed, which does the same with Tensor.unfold and the registered "pe" buffer.
    """
    trace = np.asarray(trace, dtype=np.float64)
    if trace.shape != (cfg.beta,):
        raise ValidationError(f"expected a trace of length {cfg.beta}, got shape {trace.shape}")
    return np.lib.stride_tricks.sliding_window_view(trace, cfg.window)[::cfg.stride].copy()


def positional_encoding(alpha: int, d_h: int) -> np.ndarray:
    """Sinusoidal encoding of the positions 1..alpha; even columns sine, odd columns cosine"""
    position = np.arange(1, alpha + 1, dtype=np.float64)[:, None]
    column = np.arange(d_h)
    angle = position / np.power(10000.0, 2 * (column // 2) / d_h)
    return np.where(column % 2 == 0, np.sin(angle), np.cos(angle))


def attach_pe(z: np.ndarray, pe: np.ndarray) -> np.ndarray:
    if z.shape != pe.shape:
        raise ValidationError(f"embedding shape {z.shape} does not match encoding shape {pe.shape}")
    return np.concatenate([z, pe], axis=1)


class AttentionLayer(nn.Module):
    """h <- BN(h + MHA(h)); h <- BN(h + FF(h)), batch norm over all nodes of the batch"""
    def __init__(self, d_n: int, H: int, d_ff: int):
        super().__init__()
        self.attention = nn.MultiheadAttention(d_n, H, batch_first=True)
        self.norm1 = nn.BatchNorm1d(d_n, momentum=0.1)
        self.feed_forward = nn.Sequential(nn.Linear(d_n, d_ff), nn.ReLU(), nn.Linear(d_ff, d_n))
        self.norm2 = nn.BatchNorm1d(d_n, momentum=0.1)
        return

    @staticmethod
    def _normalize(norm: nn.BatchNorm1d, h: torch.Tensor) -> torch.Tensor:
        return norm(h.reshape(-1, h.shape[-1])).reshape(h.shape)

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        attended, _ = self.attention(h, h, h, need_weights=False)
        h = self._normalize(self.norm1, h + attended)
        return self._normalize(self.norm2, h + self.feed_forward(h))


class FixingPolicy(nn.Module):
    """
    Policy network over a batch of u traces of length beta

    sliding windows -> [windows | positional encoding] -> projection to d_n ->
    L attention layers -> flattened node embeddings -> MLP head -> sigmoid.
    Without attention the flattened [windows | encoding] goes straight to the head.
    """
    def __init__(self, cfg: PolicyConfig):
        super().__init__()
        self.cfg = cfg
        self.register_buffer("pe", torch.tensor(positional_encoding(cfg.alpha, cfg.window), dtype=torch.float32))
        if cfg.use_attention:
            self.input_projection = nn.Linear(2 * cfg.window, cfg.d_n)
            self.layers = nn.ModuleList(AttentionLayer(cfg.d_n, cfg.H, cfg.d_ff) for _ in range(cfg.L))
            head_in = cfg.alpha * cfg.d_n
        else:
            head_in = cfg.alpha * 2 * cfg.window
        blocks: List[nn.Module] = []
        for width in cfg.mlp_dims:
            blocks += [nn.Linear(head_in, width), nn.ReLU()]
            head_in = width
        blocks.append(nn.Linear(head_in, 1))
        self.head = nn.Sequential(*blocks)
        self.reset_parameters(cfg.seed)
        return

    def reset_parameters(self, seed: int) -> None:
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every weight and bias"""
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            for module in self.modules():
                if isinstance(module, nn.Linear):
                    bound = 1.0 / sqrt(module.in_features)
                    nn.init.uniform_(module.weight, -bound, bound)
                    if module.bias is not None:
                        nn.init.uniform_(module.bias, -bound, bound)
                elif isinstance(module, nn.MultiheadAttention):
                    bound = 1.0 / sqrt(module.embed_dim)
                    nn.init.uniform_(module.in_proj_weight, -bound, bound)
                    nn.init.uniform_(module.in_proj_bias, -bound, bound)
                elif isinstance(module, nn.BatchNorm1d):
                    module.reset_parameters()
        return

    def embed(self, traces: torch.Tensor) -> torch.Tensor:
        """u x alpha x 2 d_h tensor of windows with the positional encoding attached"""
        z = traces.unfold(1, self.cfg.window, self.cfg.stride)
        return torch.cat([z, self.pe.to(z.dtype).expand(z.shape[0], -1, -1)], dim=-1)

    def logits(self, traces: torch.Tensor) -> torch.Tensor:
        if traces.dim() != 2 or traces.shape[1] != self.cfg.beta:
            raise ValidationError(f"expected traces of shape (u, {self.cfg.beta}), got {tuple(traces.shape)}")
        if torch.isnan(traces).any():
            raise ValidationError("traces contain NaN")
        h = self.embed(traces)
        if self.cfg.use_attention:
            h = self.input_projection(h)
            for layer in self.layers:
                h = layer(h)
        return self.head(h.reshape(h.shape[0], -1)).squeeze(-1)

    def forward(self, traces: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.logits(traces).double().clamp(-LOGIT_BOUND, LOGIT_BOUND))


def forward(traces, model: FixingPolicy) -> np.ndarray:
    """Inference-mode probabilities for a u x beta array of traces"""
    model.eval()
    traces = np.asarray(traces, dtype=np.float32)
    if traces.ndim != 2:
        raise ValidationError(f"expected a 2-D batch of traces, got shape {traces.shape}")
    dtype = next(model.parameters()).dtype
    out = np.empty(traces.shape[0])
    with torch.no_grad():
        for start in range(0, traces.shape[0], INFERENCE_CHUNK):
            chunk = torch.from_numpy(traces[start:start + INFERENCE_CHUNK]).to(dtype)
            out[start:start + chunk.shape[0]] = model(chunk).numpy()
    return out


def heuristic_policy(trace) -> float:
    """Fraction of the iterates strictly above 0.5"""
    return float(np.mean(np.asarray(trace) > 0.5))


class HeuristicPolicy:
    name = "heuristic"
    beta = None

    def __call__(self, windows: np.ndarray) -> np.ndarray:
        return np.mean(np.asarray(windows) > 0.5, axis=1)


class LearnedPolicy:
    """Callable wrapper of a trained network, always in inference mode"""
    def __init__(self, model: FixingPolicy):
        self.model = model.eval()
        self.name = "learned" if model.cfg.use_attention else "learned-noatt"
        self.beta = model.cfg.beta
        return

    def __call__(self, windows: np.ndarray) -> np.ndarray:
        return forward(windows, self.model)


def save_policy(model: FixingPolicy, path) -> None:
    """
    Model file: uint64 header length, JSON header, little-endian float32 tensors

    The header holds the format version, the config, the mode and the tensor
    manifest (name -> shape) in blob order, batch-norm running statistics included.
    """
    state = model.state_dict()
    header = {
        "format_version": MODEL_FORMAT_VERSION,
        "config": model.cfg.to_dict(),
        "mode": "train" if model.training else "inference",
        "tensors": [{"name": name, "shape": list(t.shape)} for name, t in state.items()]
    }
    raw_header = dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(pack("<Q", len(raw_header)))
        f.write(raw_header)
        for tensor in state.values():
            f.write(tensor.detach().cpu().numpy().astype("<f4").tobytes())
    return


def load_policy(path) -> FixingPolicy:
    with open(path, "rb") as f:
        raw = f.read()
    try:
        (length,) = unpack("<Q", raw[:8])
        header = loads(raw[8:8 + length].decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as e:
        raise ModelFormatError(f"{path}: unreadable header: {e}")
    if header.get("format_version") != MODEL_FORMAT_VERSION:
        raise ModelFormatError(f"{path}: unsupported format version {header.get('format_version')!r}")
    model = FixingPolicy(PolicyConfig.from_dict(header["config"]))
    expected = model.state_dict()
    offset = 8 + length
    loaded = {}
    for entry in header["tensors"]:
        name, shape = entry["name"], tuple(entry["shape"])
        if name not in expected or tuple(expected[name].shape) != shape:
            raise ModelFormatError(f"{path}: tensor {name} with shape {shape} does not fit the config")
        count = int(np.prod(shape)) if shape else 1
        try:
            values = np.frombuffer(raw, dtype="<f4", count=count, offset=offset).reshape(shape)
        except ValueError:
            raise ModelFormatError(f"{path}: truncated tensor data for {name}")
        offset += 4 * count
        loaded[name] = torch.from_numpy(values.copy()).to(expected[name].dtype)
    if set(loaded) != set(expected):
        raise ModelFormatError(f"{path}: missing tensors {sorted(set(expected) - set(loaded))}")
    model.load_state_dict(loaded)
    if header.get("mode") == "inference":
        model.eval()
    return model
