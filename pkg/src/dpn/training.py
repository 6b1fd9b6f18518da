"""CTR training and evaluation loops."""
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from .data import Batch, batch_iter, stack
from .metrics import auc
from .model import DPN, TrainConfig, click_probability, ctr_loss
from .optim import Adam

log = logging.getLogger(__name__)


@dataclass
class EvalResult:
    scores: np.ndarray
    loss: float
    auc: float


def evaluate(model: DPN, data, batch_size: int = 256) -> EvalResult:
    data = data if isinstance(data, Batch) else stack(data)
    scores = np.concatenate([model.predict(b) for b in batch_iter(data, batch_size)])
    p = np.clip(scores, 1e-7, 1 - 1e-7)
    y = data.label
    loss = float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))
    try:
        score = auc(scores, y)
    except ValueError:
        score = float("nan")
    return EvalResult(scores, loss, score)


def train_step(model: DPN, opt: Adam, batch: Batch) -> float:
    with ad.Tape() as tape:
        loss = ctr_loss(click_probability(model.forward(batch)), batch.label)
    opt.step(tape.backward(loss))
    return float(loss.data)


def train(train_data, test_data, n_items: int, n_categories: int, config: TrainConfig,
          sprm=None, dtype=np.float64, log_rows: Optional[list] = None):
    """Train a DPN; keep the parameters with the best held-out AUC.

    Returns ``(model, rows)`` where `rows` are dicts with ``epoch``, ``split``,
    ``loss`` and ``auc``.
    """
    if not (config.base_only or config.no_sprm) and sprm is None:
        raise ValueError("no refinement checkpoint: run `pretrain` first, or train with no_sprm")
    train_data = train_data if isinstance(train_data, Batch) else stack(train_data)
    test_data = test_data if isinstance(test_data, Batch) else stack(test_data)
    model = DPN(n_items, n_categories, config, sprm, dtype)
    opt = Adam(model.parameters(), lr=config.lr)
    rows = log_rows if log_rows is not None else []
    best_auc, best_state = -np.inf, None
    for epoch in range(1, config.epochs + 1):
        losses, sizes = [], []
        for batch in batch_iter(train_data, config.batch_size, seed=config.seed * 100_003 + epoch):
            losses.append(train_step(model, opt, batch))
            sizes.append(len(batch))
        train_loss = float(np.average(losses, weights=sizes))
        res = evaluate(model, test_data, config.batch_size)
        rows.append({"epoch": epoch, "split": "train", "loss": train_loss, "auc": float("nan")})
        rows.append({"epoch": epoch, "split": "test", "loss": res.loss, "auc": res.auc})
        log.info("epoch %d train loss %.4f test loss %.4f auc %.4f", epoch, train_loss, res.loss, res.auc)
        if res.auc > best_auc or best_state is None:
            best_auc = res.auc
            best_state = {k: v.copy() for k, v in model.state_dict().items()}
    model.load_state_dict(best_state)
    return model, rows
