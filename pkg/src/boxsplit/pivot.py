"""Pivot classifier: a categorical distribution over the boxes of a set.

A set transformer (6 self-attention layers, width 512, 4 heads by default)
scores each box with a scalar logit; the cardinality of the set conditions
every block through adaLN modulation. The logit head is zero-initialized so
the untrained model is exactly uniform.
"""
from __future__ import annotations

import contextlib
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from boxsplit.checkpoint import load_checkpoint, save_checkpoint, state_dict_to_tensors, tensors_to_state_dict
from boxsplit.config import RunConfig
from boxsplit.data import Dataset
from boxsplit.geometry import PARAM_DIM, Box, validate_box
from boxsplit.nets import AdaLNSelfAttentionBlock, apply_perm, canonical_perm, lengths_to_mask
from boxsplit.seeding import derive_seed


class SetTooLargeError(ValueError):
    pass


class PivotNet(nn.Module):
    def __init__(self, width: int, layers: int, heads: int, max_boxes: int):
        super().__init__()
        self.max_boxes = max_boxes
        self.embed = nn.Linear(PARAM_DIM, width)
        self.card_emb = nn.Embedding(max_boxes + 1, width)
        self.blocks = nn.ModuleList(AdaLNSelfAttentionBlock(width, heads) for _ in range(layers))
        self.final_ln = nn.LayerNorm(width)
        self.head = nn.Linear(width, 1)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def forward(self, feats: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        """feats: (B, n, 15) standardized; returns (B, n) logits (garbage in padding)."""
        mask = lengths_to_mask(lengths, feats.shape[1])
        perm, inv = canonical_perm(feats, mask)
        x = self.embed(apply_perm(feats, perm))
        kpm = ~apply_perm(mask, perm)
        cond = self.card_emb(lengths)
        for blk in self.blocks:
            x = blk(x, cond, key_padding_mask=kpm)
        logits = self.head(self.final_ln(x)).squeeze(-1)
        return apply_perm(logits, inv)


@dataclass
class PivotModel:
    """Inference wrapper: network + feature normalization + provenance."""

    net: PivotNet
    mean: np.ndarray
    scale: np.ndarray
    config: RunConfig
    family: str

    def standardize(self, params: np.ndarray) -> np.ndarray:
        return (np.asarray(params, dtype=float) - self.mean) / self.scale

    def _feats(self, boxes) -> np.ndarray:
        if len(boxes) == 0:
            raise ValueError("empty box set")
        if len(boxes) > self.config.max_boxes:
            raise SetTooLargeError(f"{len(boxes)} boxes > max {self.config.max_boxes}")
        if isinstance(boxes[0], Box):
            for b in boxes:
                validate_box(b)
            params = np.stack([b.params() for b in boxes])
        else:
            params = np.asarray(boxes, dtype=float).reshape(len(boxes), PARAM_DIM)
        return self.standardize(params)

    def logits(self, boxes) -> np.ndarray:
        feats = torch.from_numpy(self._feats(boxes)).float().unsqueeze(0)
        lengths = torch.tensor([feats.shape[1]])
        self.net.eval()
        with torch.no_grad():
            out = self.net(feats, lengths)[0]
        return out.numpy().astype(float)

    def save(self, path: str) -> None:
        meta = {
            "family": self.family,
            "config": self.config.to_dict(),
            "normalization": {"mean": self.mean.tolist(), "scale": self.scale.tolist()},
        }
        save_checkpoint(path, "pivot", state_dict_to_tensors(self.net.state_dict()), meta)

    @staticmethod
    def load(path: str) -> "PivotModel":
        kind, tensors, meta = load_checkpoint(path)
        if kind != "pivot":
            raise ValueError(f"checkpoint kind {kind!r} is not a pivot model")
        cfg = RunConfig.from_dict(meta["config"])
        net = PivotNet(cfg.width, cfg.layers, cfg.heads, cfg.max_boxes)
        net.load_state_dict(tensors_to_state_dict(tensors))
        net.eval()
        return PivotModel(
            net=net,
            mean=np.array(meta["normalization"]["mean"]),
            scale=np.array(meta["normalization"]["scale"]),
            config=cfg,
            family=meta.get("family", "unknown"),
        )


def pivot_logits(model: PivotModel, boxes) -> np.ndarray:
    """One scalar logit per box; softmax gives p(pivot | set)."""
    return model.logits(boxes)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max()
    e = np.exp(z)
    return e / e.sum()


def sample_pivot(model: PivotModel, boxes, temperature: float = 1.0, rng_seed=0) -> int:
    """Categorical draw from softmax(logits / temperature); T -> 0 is argmax."""
    logits = pivot_logits(model, boxes)
    return sample_index(logits, temperature, rng_seed)


def sample_index(logits: np.ndarray, temperature: float, rng_seed) -> int:
    if temperature <= 1e-8:
        return int(np.argmax(logits))  # ties: lowest index, argmax convention
    probs = softmax(logits / temperature)
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    return int(rng.choice(len(probs), p=probs))


def records_to_tensors(dataset: Dataset, split: str, max_boxes: int):
    """Pad record contexts to a common length; returns (feats, lengths, pivots)."""
    records = dataset.records(split)
    if not records:
        raise ValueError(f"no records in split {split!r}")
    n_max = min(max(r.cardinality for r in records), max_boxes)
    feats = np.zeros((len(records), n_max, PARAM_DIM), dtype=np.float32)
    lengths = np.zeros(len(records), dtype=np.int64)
    pivots = np.zeros(len(records), dtype=np.int64)
    for i, rec in enumerate(records):
        n = rec.cardinality
        feats[i, :n] = dataset.standardize(rec.context)
        lengths[i] = n
        pivots[i] = rec.pivot
    return torch.from_numpy(feats), torch.from_numpy(lengths), torch.from_numpy(pivots)


def _masked_cross_entropy(logits: torch.Tensor, lengths: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    mask = lengths_to_mask(lengths, logits.shape[1])
    masked = logits.masked_fill(~mask, float("-inf"))
    return nn.functional.cross_entropy(masked, targets)


@contextlib.contextmanager
def _local_torch_seed(seed: int):
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        yield


def train_pivot(dataset: Dataset, config: RunConfig, log=None) -> tuple[PivotModel, dict]:
    """Cross-entropy training of (context -> pivot index); deterministic per seed.

    Returns the trained model and a history dict with per-epoch train/val loss.
    """
    if not dataset.records("train"):
        raise ValueError("empty dataset")
    with _local_torch_seed(derive_seed(config.seed, "pivot-init")):
        net = PivotNet(config.width, config.layers, config.heads, config.max_boxes)

    feats, lengths, pivots = records_to_tensors(dataset, "train", config.max_boxes)
    vfeats, vlengths, vpivots = records_to_tensors(dataset, "val", config.max_boxes)
    opt = torch.optim.Adam(net.parameters(), lr=config.lr)
    order_rng = np.random.default_rng(derive_seed(config.seed, "pivot-batches"))
    history = {"train": [], "val": []}

    for epoch in range(config.epochs):
        net.train()
        perm = order_rng.permutation(len(feats))
        losses = []
        for start in range(0, len(perm), config.batch_size):
            idx = torch.from_numpy(perm[start : start + config.batch_size])
            logits = net(feats[idx], lengths[idx])
            loss = _masked_cross_entropy(logits, lengths[idx], pivots[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(float(loss.detach()) * len(idx))
        net.eval()
        with torch.no_grad():
            val_loss = float(_masked_cross_entropy(net(vfeats, vlengths), vlengths, vpivots))
        history["train"].append(sum(losses) / len(feats))
        history["val"].append(val_loss)
        if log:
            log(f"pivot epoch {epoch + 1}/{config.epochs} train {history['train'][-1]:.4f} val {val_loss:.4f}")

    net.eval()
    model = PivotModel(net=net, mean=dataset.mean.copy(), scale=dataset.scale.copy(), config=config, family=dataset.family)
    return model, history


def pivot_accuracy(model: PivotModel, dataset: Dataset, split: str = "val") -> float:
    """Top-1 rate of recovering the recorded pivot."""
    feats, lengths, pivots = records_to_tensors(dataset, split, model.config.max_boxes)
    model.net.eval()
    with torch.no_grad():
        logits = model.net(feats, lengths)
    mask = lengths_to_mask(lengths, logits.shape[1])
    logits = logits.masked_fill(~mask, float("-inf"))
    return float((logits.argmax(dim=1) == pivots).float().mean())


def uniform_baseline_accuracy(dataset: Dataset, split: str = "val") -> float:
    """Expected top-1 accuracy of a uniform guesser: 1 / E[|B_s|]."""
    sizes = [r.cardinality for r in dataset.records(split)]
    return 1.0 / (sum(sizes) / len(sizes))
