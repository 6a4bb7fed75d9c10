"""RP-CATE forward graph.

One repetition of the loop body is

    y_RP   = RP(input)                       recurrent perceptron over PSD order
    att    = softmax(σ(FFN¹(maxpool(PID)) + FFN²(avgpool(PID))))
    y_FFM  = FFN³(y_RP ⊙ att)

and the prediction head is an affine map of the final y_FFM. Repetition r > 1
consumes ``y_FFM^(r-1) + I`` where ``I`` is the sorted input (``residual="text"``),
or the cumulative ``input^(r-1) + I`` (``residual="literal"``).
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from . import tensor as T
from .data import Dataset, MinMaxScaler, psd_order, to_pid, window_side
from .tensor import Tensor

ABLATIONS = ("full", "no_rp", "no_ca")
RESIDUAL_MODES = ("text", "literal")
REG_MODES = ("norm", "squared")
CHECKPOINT_FORMAT = "rpcate-checkpoint/1"


@dataclass
class HyperParams:
    x_prime: int = 0
    w: int = 25
    N: int = 2
    lr: float = 0.001
    d_h: Optional[int] = None
    d_m: Optional[int] = None
    n1: Optional[int] = None
    n2: Optional[int] = None
    n3: Optional[int] = None
    n4: Optional[int] = None
    lam: float = 0.0
    epochs: int = 2000
    seed: int = 0
    residual: str = "text"
    reg: str = "norm"
    share_params: bool = False
    ablation: str = "full"
    batch_size: Optional[int] = 60
    standardize_target: bool = True

    def __post_init__(self):
        window_side(self.w)
        if self.N < 1:
            raise ValueError(f"N must be ≥ 1, got {self.N}")
        if self.lam < 0:
            raise ValueError(f"lambda must be ≥ 0, got {self.lam}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be ≥ 1, got {self.epochs}")
        if self.lr < 0:
            raise ValueError(f"lr must be ≥ 0, got {self.lr}")
        if self.batch_size is not None and self.batch_size < self.w:
            raise ValueError(f"batch_size must be ≥ w={self.w}, got {self.batch_size}")
        if self.residual not in RESIDUAL_MODES:
            raise ValueError(f"residual must be one of {RESIDUAL_MODES}, got {self.residual!r}")
        if self.reg not in REG_MODES:
            raise ValueError(f"reg must be one of {REG_MODES}, got {self.reg!r}")
        if self.ablation not in ABLATIONS:
            raise ValueError(f"unknown ablation variant {self.ablation!r}; expected one of {ABLATIONS}")

    def widths(self, n: int) -> dict:
        """Resolve unset widths for ``n`` features and check the width constraints."""
        wd = {
            "d_h": self.d_h or 4 * n,
            "d_m": self.d_m or 4 * n,
            "n1": self.n1 or 2 * n,
            "n2": self.n2 or 2 * n,
            "n3": self.n3 or 2 * n,
            "n4": self.n4 or 2 * n,
        }
        if not wd["n1"] == wd["n2"] > n:
            raise ValueError(f"attention widths need n1 = n2 > n, got n1={wd['n1']}, n2={wd['n2']}, n={n}")
        if not (wd["n3"] > n and wd["n4"] > n):
            raise ValueError(f"feed-forward widths need n3 > n and n4 > n, got {wd['n3']}, {wd['n4']}, n={n}")
        return wd

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "HyperParams":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown hyperparameters: {sorted(unknown)}")
        return cls(**d)


def _rep_layout(n: int, wd: dict, ablation: str) -> list:
    """(name, shape, is_weight) for one repetition, in a fixed order."""
    layout = []
    if ablation != "no_rp":
        d_h, d_m = wd["d_h"], wd["d_m"]
        layout += [
            ("U", (n, d_h), True),
            ("W", (d_h, d_h), True),
            ("b_HL1", (1, d_h), False),
            ("V", (d_h, d_m), True),
            ("b_HL2", (1, d_m), False),
            ("W_HL2", (d_m, n), True),
            ("b", (1, n), False),
        ]
    if ablation != "no_ca":
        for net, width in (("FFN1", wd["n1"]), ("FFN2", wd["n2"])):
            layout += [
                (f"{net}.W1", (n, width), True),
                (f"{net}.b1", (1, width), False),
                (f"{net}.W2", (width, n), True),
                (f"{net}.b2", (1, n), False),
            ]
    layout += [
        ("FFN3.W1", (n, wd["n3"]), True),
        ("FFN3.b1", (1, wd["n3"]), False),
        ("FFN3.W2", (wd["n3"], wd["n4"]), True),
        ("FFN3.b2", (1, wd["n4"]), False),
        ("FFN3.W3", (wd["n4"], n), True),
        ("FFN3.b3", (1, n), False),
    ]
    return layout


@dataclass
class ModelParams:
    """Trainable arrays keyed ``<symbol>.<repetition>`` plus the shared head ``W_L``, ``b_L``."""

    tensors: dict
    N: int
    shared: bool = False

    def rep(self, r: int) -> dict:
        """Parameters of repetition ``r`` (1-based) with the suffix stripped."""
        key = 1 if self.shared else r
        suffix = f".{key}"
        return {name[: -len(suffix)]: t for name, t in self.tensors.items() if name.endswith(suffix)}

    def head(self) -> tuple:
        return self.tensors["W_L"], self.tensors["b_L"]

    def values(self) -> list:
        return list(self.tensors.values())

    def copy(self) -> "ModelParams":
        return ModelParams(
            {k: Tensor(t.data.copy(), requires_grad=True, name=k) for k, t in self.tensors.items()},
            self.N,
            self.shared,
        )


def init_params(n: int, hp: HyperParams) -> ModelParams:
    """Uniform(±1/√fan_in) weights, zero biases, drawn from ``hp.seed`` in a fixed order."""
    wd = hp.widths(n)
    rng = np.random.default_rng(hp.seed)
    reps = 1 if hp.share_params else hp.N
    tensors = {}
    for r in range(1, reps + 1):
        for name, shape, is_weight in _rep_layout(n, wd, hp.ablation):
            if is_weight:
                bound = 1.0 / math.sqrt(shape[0])
                data = rng.uniform(-bound, bound, size=shape)
            else:
                data = np.zeros(shape)
            key = f"{name}.{r}"
            tensors[key] = Tensor(data, requires_grad=True, name=key)
    bound = 1.0 / math.sqrt(n)
    tensors["W_L"] = Tensor(rng.uniform(-bound, bound, size=(n, 1)), requires_grad=True, name="W_L")
    tensors["b_L"] = Tensor(np.zeros((1, 1)), requires_grad=True, name="b_L")
    return ModelParams(tensors, hp.N, hp.share_params)


def zero_params(n: int, hp: HyperParams) -> ModelParams:
    params = init_params(n, hp)
    for t in params.values():
        t.data[...] = 0.0
    return params


def _dense(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return T.add(T.matmul(x, w), b)


def rp_forward(psd: Tensor, p: dict) -> Tensor:
    """Recurrent perceptron: h_i = σ(PSD_i·U + h_{i-1}·W + b_HL1), y_i = σ(σ(h_i·V + b_HL2)·W_HL2 + b)."""
    h = T.recurrent_scan(_dense(psd, p["U"], p["b_HL1"]), p["W"])
    hidden = T.sigmoid(_dense(h, p["V"], p["b_HL2"]))
    return T.sigmoid(_dense(hidden, p["W_HL2"], p["b"]))


def _two_layer_relu(x: Tensor, p: dict, net: str) -> Tensor:
    hidden = T.relu(_dense(x, p[f"{net}.W1"], p[f"{net}.b1"]))
    return _dense(hidden, p[f"{net}.W2"], p[f"{net}.b2"])


def channel_attention(y_rp: Tensor, w: int, p: dict) -> Tensor:
    """Per-sample feature weights from max/avg pooled pseudo-image windows; rows sum to 1."""
    pid = to_pid(y_rp, w).data
    h1 = _two_layer_relu(T.pool_spatial(pid, "max"), p, "FFN1")
    h2 = _two_layer_relu(T.pool_spatial(pid, "avg"), p, "FFN2")
    return T.softmax_lastaxis(T.sigmoid(T.add(h1, h2)))


def ffm_forward(x: Tensor, p: dict) -> Tensor:
    """Three sigmoid layers n → n³ → n⁴ → n."""
    x = T.sigmoid(_dense(x, p["FFN3.W1"], p["FFN3.b1"]))
    x = T.sigmoid(_dense(x, p["FFN3.W2"], p["FFN3.b2"]))
    return T.sigmoid(_dense(x, p["FFN3.W3"], p["FFN3.b3"]))


def predict_head(y_ffm: Tensor, params: ModelParams) -> Tensor:
    w_l, b_l = params.head()
    return T.add(T.matmul(y_ffm, w_l), b_l)


@dataclass
class ForwardResult:
    y_hat: Tensor  # m×1, PSD order
    perm: np.ndarray
    attentions: list = field(default_factory=list)  # one m×n array per repetition, PSD order


def model_forward(X, hp: HyperParams, params: ModelParams) -> ForwardResult:
    X = X.data if isinstance(X, Tensor) else np.asarray(X, dtype=np.float64)
    m, n = X.shape
    if m < hp.w:
        raise ValueError(f"need at least w={hp.w} samples, got {m}")
    perm = psd_order(X[:, hp.x_prime])
    initial = Tensor(X[perm])
    uniform = Tensor(np.full((m, n), 1.0 / n))

    attentions = []
    x = initial
    y_ffm = None
    for r in range(1, hp.N + 1):
        if r > 1:
            x = T.add(y_ffm if hp.residual == "text" else x, initial)
        p = params.rep(r)
        y_rp = x if hp.ablation == "no_rp" else rp_forward(x, p)
        att = uniform if hp.ablation == "no_ca" else channel_attention(y_rp, hp.w, p)
        attentions.append(att.data.copy())
        y_ffm = ffm_forward(T.hadamard(y_rp, att), p)
    return ForwardResult(y_hat=predict_head(y_ffm, params), perm=perm, attentions=attentions)


@dataclass
class RPCATE:
    """A hyperparameter set, its parameters and the feature scaling it was trained with."""

    hp: HyperParams
    params: ModelParams
    n_features: int
    feature_names: list = field(default_factory=list)
    scaler: Optional[MinMaxScaler] = None

    @property
    def variant(self) -> str:
        return self.hp.ablation

    def prepare(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            got = X.shape[1] if X.ndim == 2 else X.shape
            raise ValueError(f"dataset has {got} features but the checkpoint expects {self.n_features}")
        return self.scaler.transform(X) if self.scaler is not None else X

    def forward(self, X: np.ndarray) -> ForwardResult:
        return model_forward(self.prepare(X), self.hp, self.params)

    def predict(self, d: Dataset) -> tuple:
        """Corrections in original sample order and per-repetition attention (original order)."""
        res = self.forward(d.X)
        y_hat = np.empty(d.m)
        y_hat[res.perm] = res.y_hat.data[:, 0]
        atts = []
        for a in res.attentions:
            out = np.empty_like(a)
            out[res.perm] = a
            atts.append(out)
        return y_hat, atts


def build_ablation(hp: HyperParams, n: int, variant: Optional[str] = None, feature_names=None,
                   scaler: Optional[MinMaxScaler] = None) -> RPCATE:
    """Fresh model for ``variant`` (defaults to ``hp.ablation``)."""
    if variant is not None:
        if variant not in ABLATIONS:
            raise ValueError(f"unknown ablation variant {variant!r}; expected one of {ABLATIONS}")
        hp = dataclasses.replace(hp, ablation=variant)
    return RPCATE(hp, init_params(n, hp), n, list(feature_names or [f"x{j}" for j in range(n)]), scaler)


def save_checkpoint(model: RPCATE, path: Union[str, Path]) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "variant": model.variant,
        "hyperparams": model.hp.to_dict(),
        "n_features": model.n_features,
        "feature_names": list(model.feature_names),
        "scaler": model.scaler.to_dict() if model.scaler is not None else None,
        "params": {
            name: {"shape": list(t.shape), "values": [float(v) for v in t.data.reshape(-1)]}
            for name, t in model.params.tensors.items()
        },
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=1, allow_nan=False) + "\n", encoding="utf-8")


def load_checkpoint(path: Union[str, Path]) -> RPCATE:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not an RP-CATE checkpoint")
    hp = HyperParams.from_dict(doc["hyperparams"])
    n = int(doc["n_features"])
    expected = init_params(n, hp)
    tensors = {}
    for name, ref in expected.tensors.items():
        if name not in doc["params"]:
            raise ValueError(f"{path}: missing parameter {name!r}")
        entry = doc["params"][name]
        data = np.array(entry["values"], dtype=np.float64).reshape(entry["shape"])
        if data.shape != ref.shape:
            raise ValueError(f"{path}: parameter {name!r} has shape {data.shape}, expected {ref.shape}")
        tensors[name] = Tensor(data, requires_grad=True, name=name)
    scaler = MinMaxScaler.from_dict(doc["scaler"]) if doc.get("scaler") else None
    return RPCATE(hp, ModelParams(tensors, hp.N, hp.share_params), n, doc.get("feature_names") or [], scaler)
