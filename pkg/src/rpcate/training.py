"""Adam training, grid search and evaluation."""

from __future__ import annotations

import csv
import dataclasses
import itertools
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from . import tensor as T
from .data import Dataset, MinMaxScaler, psd_order
from .metrics import MetricsReport, full_report
from .model import RPCATE, HyperParams, ModelParams, build_ablation, model_forward
from .tensor import NonFiniteError, Tape, Tensor

logger = logging.getLogger(__name__)

# Search ranges for window size, repetitions and learning rate.
SEARCH_GRID = {"w": (9, 25), "N": (1, 2, 3, 4, 5), "lr": (0.01, 0.001)}


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, detail: str = ""):
        super().__init__(f"training diverged at epoch {epoch}" + (f": {detail}" if detail else ""))
        self.epoch = epoch


def loss(y_hat: Tensor, y: Tensor, params: Sequence[Tensor], lam: float, reg: str = "norm") -> Tensor:
    """Mean squared error plus ``lam`` times the Euclidean norm of all parameters.

    ``reg="squared"`` uses the squared norm (weight decay) instead.
    """
    if lam < 0:
        raise ValueError(f"lambda must be ≥ 0, got {lam}")
    mse = T.mean_squared_error(y_hat, y)
    if lam == 0:
        return mse
    return T.add(mse, T.scale(T.global_norm(params, squared=(reg == "squared")), lam))


class Adam:
    def __init__(self, params: Sequence[Tensor], lr: float = 0.001, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


@dataclass
class TrainResult:
    model: RPCATE
    history: list


def _check_m(m: int, hp: HyperParams) -> None:
    if m < hp.w:
        raise ValueError(f"training split has {m} samples, fewer than window size w={hp.w}")


def _batches(m: int, hp: HyperParams, rng: np.random.Generator) -> list:
    """Row subsets for one epoch: everything, or a shuffled partition into ``hp.batch_size`` chunks.

    A trailing chunk smaller than ``w`` is merged into the previous one.
    """
    if hp.batch_size is None or hp.batch_size >= m:
        return [np.arange(m)]
    order = rng.permutation(m)
    chunks = [order[i:i + hp.batch_size] for i in range(0, m, hp.batch_size)]
    if len(chunks) > 1 and chunks[-1].size < hp.w:
        tail = chunks.pop()
        chunks[-1] = np.concatenate([chunks[-1], tail])
    return chunks


def train(d: Dataset, hp: HyperParams, scale: bool = False) -> TrainResult:
    """Train one model on ``d``.

    Each Adam step sees one batch as a whole (sorted and windowed together).
    Loss history holds the mean pre-update loss over each epoch's batches.
    With ``hp.standardize_target`` the model is fitted to the z-scored target
    (so the history is in those units) and the scaling is folded into
    ``W_L``/``b_L`` afterwards.
    """
    _check_m(d.m, hp)
    scaler = MinMaxScaler.fit(d.X) if scale else None
    model = build_ablation(hp, d.n, feature_names=d.feature_names, scaler=scaler)
    X = model.prepare(d.X)
    y = d.y
    shift, spread = 0.0, 1.0
    if hp.standardize_target:
        shift, spread = float(y.mean()), float(y.std())
        spread = spread if spread > 0 else 1.0
        y = (y - shift) / spread
    params = model.params.values()
    opt = Adam(params, lr=hp.lr)
    rng = np.random.default_rng([hp.seed, 1])
    history = []
    for epoch in range(1, hp.epochs + 1):
        total = 0.0
        batches = _batches(d.m, hp, rng)
        for rows in batches:
            Xb, yb = X[rows], y[rows]
            target = Tensor(yb[psd_order(Xb[:, hp.x_prime])].reshape(-1, 1))
            try:
                with Tape() as tape:
                    res = model_forward(Xb, hp, model.params)
                    L = loss(res.y_hat, target, params, hp.lam, hp.reg)
            except NonFiniteError as exc:
                raise TrainingDiverged(epoch, str(exc)) from exc
            total += L.item()
            tape.backward(L, wrt=params)
            opt.step()
            if not all(np.all(np.isfinite(p.data)) for p in params):
                raise TrainingDiverged(epoch, "non-finite parameters after update")
        history.append(total / len(batches))
    w_l, b_l = model.params.head()
    w_l.data *= spread
    b_l.data[...] = b_l.data * spread + shift
    return TrainResult(model, history)


def evaluate(model: RPCATE, d: Dataset) -> tuple:
    """(mechanistic, hybrid) reports on ``d`` evaluated as one batch."""
    _check_m(d.m, model.hp)
    y_hat, _ = model.predict(d)
    return full_report(y_hat, d, variant=model.variant)


def validate_grid(grid: dict) -> dict:
    """Canonical (sorted, de-duplicated) grid restricted to the declared search ranges."""
    if not grid:
        raise ValueError("empty grid")
    out = {}
    for key, allowed in SEARCH_GRID.items():
        values = grid.get(key)
        if not values:
            raise ValueError(f"grid needs a non-empty {key!r} list")
        bad = [v for v in values if v not in allowed]
        if bad:
            raise ValueError(f"grid {key} values {bad} outside the allowed set {list(allowed)}")
        out[key] = sorted(set(values))
    extra = set(grid) - set(SEARCH_GRID)
    if extra:
        raise ValueError(f"unknown grid keys {sorted(extra)}")
    return out


@dataclass
class GridCell:
    index: int
    hp: HyperParams
    status: str = "ok"
    report: Optional[MetricsReport] = None
    error: str = ""


@dataclass
class GridResult:
    cells: list
    best: Optional[GridCell] = None

    @property
    def best_hp(self) -> Optional[HyperParams]:
        return self.best.hp if self.best else None


def grid_cells(hp: HyperParams, grid: dict) -> list:
    grid = validate_grid(grid)
    cells = []
    for idx, (w, N, lr) in enumerate(itertools.product(grid["w"], grid["N"], grid["lr"])):
        cells.append(GridCell(idx, dataclasses.replace(hp, w=w, N=N, lr=lr, seed=hp.seed + idx)))
    return cells


def _run_cell(cell: GridCell, d_train: Dataset, d_val: Dataset, scale: bool) -> GridCell:
    try:
        result = train(d_train, cell.hp, scale=scale)
        _, hybrid = evaluate(result.model, d_val)
        return dataclasses.replace(cell, status="ok", report=hybrid)
    except Exception as exc:  # failures are recorded per cell
        logger.warning("grid cell w=%d N=%d lr=%g failed: %s", cell.hp.w, cell.hp.N, cell.hp.lr, exc)
        return dataclasses.replace(cell, status="failed", error=f"{type(exc).__name__}: {exc}")


def _selection_key(cell: GridCell):
    r = cell.report
    return (-r.mir_percent, r.mae, cell.hp.N, cell.hp.w, cell.hp.lr)


def grid_search(d_train: Dataset, d_val: Dataset, hp: HyperParams, grid: dict = SEARCH_GRID,
                jobs: int = 1, scale: bool = False) -> GridResult:
    """Train every (w, N, lr) cell and pick the best by validation MIR.

    Ties go to lower MAE, then smaller N, then smaller w. Cell ``i`` of the
    canonical (sorted) grid is seeded with ``hp.seed + i``.
    """
    cells = grid_cells(hp, grid)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_run_cell, c, d_train, d_val, scale) for c in cells]
            done = [f.result() for f in futures]
    else:
        done = [_run_cell(c, d_train, d_val, scale) for c in cells]
    ok = [c for c in done if c.status == "ok"]
    best = min(ok, key=_selection_key) if ok else None
    return GridResult(done, best)


GRID_COLUMNS = ["w", "N", "lr", "MAE", "RMSE", "ARE(%)", "#Err<1%", "#Err>5%", "MIR(%)", "status"]


def write_grid_csv(result: GridResult, path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(GRID_COLUMNS)
        for c in result.cells:
            r = c.report
            if r is None:
                writer.writerow([c.hp.w, c.hp.N, repr(c.hp.lr), "", "", "", "", "", "", c.status])
            else:
                writer.writerow([c.hp.w, c.hp.N, repr(c.hp.lr), repr(r.mae), repr(r.rmse), repr(r.are_percent),
                                 r.err_lt_1pct, r.err_gt_5pct, repr(r.mir_percent), c.status])


def write_loss_history(history: Sequence[float], path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "train_loss"])
        for i, v in enumerate(history, start=1):
            writer.writerow([i, repr(float(v))])


def params_norm(params: ModelParams) -> float:
    return float(np.sqrt(sum(np.sum(t.data * t.data) for t in params.values())))
