"""Child-boxes diffusion: p(children | pivot, box set) and the splitting loop.

The noise net is an encoder/decoder transformer. The encoder runs 6
self-attention layers over the context boxes; a pivot-indicator class
embedding and a cardinality embedding are added to every layer's output. The
decoder attends from the 2 noisy child tokens into the encoder latent through
interleaved self/cross-attention layers, with the timestep embedding added to
the child token stream.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from boxsplit.checkpoint import load_checkpoint, save_checkpoint, state_dict_to_tensors, tensors_to_state_dict
from boxsplit.config import RunConfig
from boxsplit.data import Dataset
from boxsplit.diffusion import DiffusionSchedule, ddim_sample, forward_diffuse, schedule_new
from boxsplit.geometry import (
    PARAM_DIM,
    Box,
    DegenerateOrientationError,
    orthonormalize,
    unit_cube,
    validate_box,
)
from boxsplit.hierarchy import apply_split
from boxsplit.nets import (
    CrossAttentionBlock,
    SelfAttentionBlock,
    SinusoidalEmbedding,
    apply_perm,
    canonical_perm,
    lengths_to_mask,
)
from boxsplit.pivot import PivotModel, _local_torch_seed, sample_index, softmax
from boxsplit.seeding import derive_seed

MIN_SIDE = 1e-4
MAX_SAMPLE_RETRIES = 8
# standardized features of real boxes stay within ~4 sigma; 6 keeps headroom
CLIP_X0 = 6.0


class DegenerateSampleError(RuntimeError):
    pass


class ConditionEncoder(nn.Module):
    """h = E(context, pivot, |context|), permutation-equivariant with the
    indicator bit carried per box."""

    def __init__(self, width: int, layers: int, heads: int, max_boxes: int, in_dim: int = PARAM_DIM):
        super().__init__()
        self.embed = nn.Linear(in_dim, width)
        self.indicator_emb = nn.Embedding(2, width)
        self.card_emb = nn.Embedding(max_boxes + 2, width)
        self.blocks = nn.ModuleList(SelfAttentionBlock(width, heads) for _ in range(layers))

    def forward(self, feats: torch.Tensor, indicator: torch.Tensor, lengths: torch.Tensor):
        """feats (B, n, in_dim), indicator (B, n) in {0,1}; returns (h, padding mask)."""
        mask = lengths_to_mask(lengths, feats.shape[1])
        keys = torch.cat([feats, indicator.unsqueeze(-1).float()], dim=-1)
        perm, inv = canonical_perm(keys, mask)
        e_c = self.indicator_emb(apply_perm(indicator, perm))
        e_d = self.card_emb(lengths).unsqueeze(1)
        # indicator marks the pivot already at the input, then again per layer
        x = self.embed(apply_perm(feats, perm)) + e_c + e_d
        kpm = ~apply_perm(mask, perm)
        for blk in self.blocks:
            x = blk(x, key_padding_mask=kpm) + e_c + e_d
        return apply_perm(x, inv), ~mask


class ChildDecoder(nn.Module):
    """Predicts the injected noise on the 2 child tokens given the latent h."""

    def __init__(self, width: int, layers: int, heads: int):
        super().__init__()
        self.embed = nn.Linear(PARAM_DIM, width)
        self.t_emb = SinusoidalEmbedding(width)
        self.blocks = nn.ModuleList(CrossAttentionBlock(width, heads) for _ in range(layers))
        self.out_ln = nn.LayerNorm(width)
        self.out = nn.Linear(width, PARAM_DIM)
        # zero-initialized head: the untrained net is exactly the zero predictor
        nn.init.zeros_(self.out.weight)
        nn.init.zeros_(self.out.bias)

    def forward(self, x_t: torch.Tensor, t: torch.Tensor, h: torch.Tensor, h_padding: torch.Tensor):
        x = self.embed(x_t) + self.t_emb(t).unsqueeze(1)
        for blk in self.blocks:
            x = blk(x, h, context_padding_mask=h_padding)
        return self.out(self.out_ln(x))


class SplitNet(nn.Module):
    def __init__(self, width: int, layers: int, heads: int, max_boxes: int):
        super().__init__()
        self.encoder = ConditionEncoder(width, layers, heads, max_boxes)
        self.decoder = ChildDecoder(width, layers, heads)

    def forward(self, x_t, t, feats, indicator, lengths):
        h, pad = self.encoder(feats, indicator, lengths)
        return self.decoder(x_t, t, h, pad)


@dataclass
class SplitModel:
    net: SplitNet
    schedule: DiffusionSchedule
    mean: np.ndarray
    scale: np.ndarray
    config: RunConfig
    family: str

    def standardize(self, params: np.ndarray) -> np.ndarray:
        return (np.asarray(params, dtype=float) - self.mean) / self.scale

    def destandardize(self, feats: np.ndarray) -> np.ndarray:
        return np.asarray(feats, dtype=float) * self.scale + self.mean

    def save(self, path: str) -> None:
        meta = {
            "family": self.family,
            "config": self.config.to_dict(),
            "normalization": {"mean": self.mean.tolist(), "scale": self.scale.tolist()},
            "schedule": {"T": self.schedule.T, "beta_start": float(self.schedule.betas[0]), "beta_end": float(self.schedule.betas[-1])},
        }
        save_checkpoint(path, "cond_split", state_dict_to_tensors(self.net.state_dict()), meta)

    @staticmethod
    def load(path: str) -> "SplitModel":
        kind, tensors, meta = load_checkpoint(path)
        if kind != "cond_split":
            raise ValueError(f"checkpoint kind {kind!r} is not a cond_split model")
        cfg = RunConfig.from_dict(meta["config"])
        net = SplitNet(cfg.width, cfg.layers, cfg.heads, cfg.max_boxes)
        net.load_state_dict(tensors_to_state_dict(tensors))
        net.eval()
        sched = schedule_new(meta["schedule"]["T"], meta["schedule"]["beta_start"], meta["schedule"]["beta_end"])
        return SplitModel(
            net=net,
            schedule=sched,
            mean=np.array(meta["normalization"]["mean"]),
            scale=np.array(meta["normalization"]["scale"]),
            config=cfg,
            family=meta.get("family", "unknown"),
        )


def _context_tensors(model: SplitModel, contexts: np.ndarray, pivots: np.ndarray):
    feats = torch.from_numpy(model.standardize(contexts)).float()
    B, n = feats.shape[0], feats.shape[1]
    indicator = torch.zeros(B, n, dtype=torch.long)
    indicator[torch.arange(B), torch.from_numpy(np.asarray(pivots, dtype=np.int64))] = 1
    lengths = torch.full((B,), n, dtype=torch.long)
    return feats, indicator, lengths


def encode_condition(model: SplitModel, boxes, pivot: int) -> np.ndarray:
    """The (|set|, width) conditioning latent for one box set and pivot."""
    if isinstance(boxes[0], Box):
        for b in boxes:
            validate_box(b)
        params = np.stack([b.params() for b in boxes])
    else:
        params = np.asarray(boxes, dtype=float).reshape(len(boxes), PARAM_DIM)
    if not 0 <= pivot < len(params):
        raise IndexError(f"pivot {pivot} out of range for {len(params)} boxes")
    feats, indicator, lengths = _context_tensors(model, params[None], np.array([pivot]))
    model.net.eval()
    with torch.no_grad():
        h, _ = model.net.encoder(feats, indicator, lengths)
    return h[0].numpy().astype(float)


def _finalize_children(model: SplitModel, raw: np.ndarray) -> np.ndarray:
    """De-standardize, clamp sides, project orientations; raises on degeneracy."""
    params = model.destandardize(raw)
    out = np.empty_like(params)
    for i, p in enumerate(params):
        sides = np.maximum(p[3:6], MIN_SIDE)
        orient = orthonormalize(p[6:])  # DegenerateOrientationError propagates
        out[i] = np.concatenate([p[:3], sides, orient])
    return out


def split_many(
    model: SplitModel,
    contexts: np.ndarray,
    pivots: np.ndarray,
    steps: int = 50,
    rng_seed=0,
) -> np.ndarray:
    """Batched split: (B, n, 15) contexts -> (B, n+1, 15) with children appended.

    All sets must share the same cardinality; one seeded torch stream drives the
    whole batch, so results are deterministic per (weights, contexts, seed).
    """
    contexts = np.asarray(contexts, dtype=float)
    B, n = contexts.shape[0], contexts.shape[1]
    pivots = np.asarray(pivots, dtype=np.int64)
    if np.any(pivots < 0) or np.any(pivots >= n):
        raise IndexError("pivot out of range")
    feats, indicator, lengths = _context_tensors(model, contexts, pivots)
    model.net.eval()
    with torch.no_grad():
        h, pad = model.net.encoder(feats, indicator, lengths)

    children = np.empty((B, 2, PARAM_DIM))
    pending = np.arange(B)
    for attempt in range(MAX_SAMPLE_RETRIES + 1):
        gen = torch.Generator()
        gen.manual_seed(derive_seed(rng_seed, "split-ddim", attempt) & 0x7FFFFFFFFFFFFFFF)
        hp = h[pending]
        padp = pad[pending]

        def predictor(x_t, t, _cond):
            tt = torch.full((x_t.shape[0],), int(t), dtype=torch.long)
            return model.net.decoder(x_t, tt, hp, padp)

        x0 = ddim_sample(
            predictor, None, (len(pending), 2, PARAM_DIM), model.schedule, steps=steps, rng=gen, clip_x0=CLIP_X0
        )
        still_bad = []
        for row, b_idx in enumerate(pending):
            try:
                children[b_idx] = _finalize_children(model, x0[row].numpy())
            except DegenerateOrientationError:
                still_bad.append(b_idx)
        if not still_bad:
            break
        pending = np.asarray(still_bad)
    else:
        raise DegenerateSampleError(f"degenerate orientation after {MAX_SAMPLE_RETRIES} retries")

    out = np.empty((B, n + 1, PARAM_DIM))
    for b in range(B):
        out[b] = apply_split(contexts[b], int(pivots[b]), children[b])
    return out


def split_once(model: SplitModel, boxes, pivot: int, steps: int = 50, rng_seed=0) -> list[Box]:
    """One split step on a box set; returns the new set as Box objects."""
    if isinstance(boxes[0], Box):
        params = np.stack([b.params() for b in boxes])
    else:
        params = np.asarray(boxes, dtype=float).reshape(len(boxes), PARAM_DIM)
    if not 0 <= pivot < len(params):
        raise IndexError(f"pivot {pivot} out of range for {len(params)} boxes")
    new_params = split_many(model, params[None], np.array([pivot]), steps=steps, rng_seed=rng_seed)[0]
    out = [Box.from_params(p) for p in new_params]
    for b in out:
        validate_box(b)
    return out


@dataclass
class SamplerBundle:
    """Everything generation needs: the pivot model plus named splitters.

    A splitter maps (contexts (B, n, 15), pivots (B,), steps, rng_seed) to the
    split sets (B, n+1, 15).
    """

    pivot: PivotModel | None
    splitters: dict


def conditional_splitter(model: SplitModel):
    def run(contexts, pivots, steps, rng_seed):
        return split_many(model, contexts, pivots, steps=steps, rng_seed=rng_seed)

    return run


def _choose_pivots(
    bundle: SamplerBundle,
    contexts: np.ndarray,
    rng_seed,
    strategy: str,
    temperature: float = 1.0,
) -> np.ndarray:
    B, n = contexts.shape[0], contexts.shape[1]
    rng = np.random.default_rng(derive_seed(rng_seed, "pivot-choice"))
    if strategy == "random" or (strategy == "classifier" and bundle.pivot is None):
        return rng.integers(0, n, size=B)
    if strategy != "classifier":
        raise ValueError(f"unknown pivot strategy {strategy!r}")
    model = bundle.pivot
    feats = torch.from_numpy(model.standardize(contexts)).float()
    lengths = torch.full((B,), n, dtype=torch.long)
    model.net.eval()
    with torch.no_grad():
        logits = model.net(feats, lengths).numpy()
    picks = np.empty(B, dtype=np.int64)
    for b in range(B):
        picks[b] = sample_index(logits[b].astype(float), temperature, rng)
    return picks


def generate_paths(
    bundle: SamplerBundle,
    target_count: int,
    rng_seed,
    n_paths: int = 1,
    sampler: str = "conditional",
    pivot_strategy: str = "classifier",
    steps: int = 50,
    max_boxes: int = 32,
) -> list[np.ndarray]:
    """Batched granularity paths from {unit cube}; element s has shape (n_paths, s+1, 15)."""
    if not 1 <= target_count <= max_boxes:
        raise ValueError(f"target_count must be in [1, {max_boxes}]")
    if sampler not in bundle.splitters and target_count > 1:
        raise KeyError(f"no splitter named {sampler!r}")
    state = np.repeat(unit_cube().params()[None, None, :], n_paths, axis=0)
    path = [state]
    for step in range(target_count - 1):
        pivots = _choose_pivots(bundle, state, derive_seed(rng_seed, "step", step), pivot_strategy)
        state = bundle.splitters[sampler](state, pivots, steps, derive_seed(rng_seed, "split", step))
        path.append(state)
    return path


def generate_abstraction(
    bundle: SamplerBundle,
    target_count: int,
    rng_seed,
    sampler: str = "conditional",
    pivot_strategy: str = "classifier",
    steps: int = 50,
    max_boxes: int = 32,
) -> list[list[Box]]:
    """The whole granularity path for one shape: sets of cardinality 1..target."""
    path = generate_paths(
        bundle,
        target_count,
        rng_seed,
        n_paths=1,
        sampler=sampler,
        pivot_strategy=pivot_strategy,
        steps=steps,
        max_boxes=max_boxes,
    )
    return [[Box.from_params(p) for p in level[0]] for level in path]


def _record_batches(dataset: Dataset, split: str, max_boxes: int):
    """Group records by cardinality so each batch is rectangular."""
    by_n: dict[int, list] = {}
    for rec in dataset.records(split):
        if rec.cardinality <= max_boxes:
            by_n.setdefault(rec.cardinality, []).append(rec)
    out = []
    for n, recs in sorted(by_n.items()):
        ctx = torch.from_numpy(np.stack([dataset.standardize(r.context) for r in recs])).float()
        piv = torch.from_numpy(np.array([r.pivot for r in recs], dtype=np.int64))
        kids = torch.from_numpy(np.stack([dataset.standardize(r.children) for r in recs])).float()
        out.append((ctx, piv, kids))
    return out


def _split_loss(net: SplitNet, schedule, ctx, piv, kids, gen: torch.Generator) -> torch.Tensor:
    """Eq.-style eps MSE, evaluated under both child orderings, min per item."""
    B, n = ctx.shape[0], ctx.shape[1]
    indicator = torch.zeros(B, n, dtype=torch.long)
    indicator[torch.arange(B), piv] = 1
    lengths = torch.full((B,), n, dtype=torch.long)
    t = torch.randint(0, schedule.T, (B,), generator=gen)
    eps = torch.randn(B, 2, PARAM_DIM, generator=gen)
    h, pad = net.encoder(ctx, indicator, lengths)
    losses = []
    for order in ((0, 1), (1, 0)):
        x0 = kids[:, list(order), :]
        x_t = forward_diffuse(x0, t, eps, schedule)
        pred = net.decoder(x_t, t, h, pad)
        losses.append(((pred - eps) ** 2).mean(dim=(1, 2)))
    return torch.minimum(losses[0], losses[1]).mean()


def train_split(dataset: Dataset, config: RunConfig, log=None) -> tuple[SplitModel, dict]:
    """Noise-prediction training over split records; deterministic per seed."""
    if not dataset.records("train"):
        raise ValueError("empty dataset")
    schedule = schedule_new(config.diffusion_T, config.beta_start, config.beta_end)
    with _local_torch_seed(derive_seed(config.seed, "split-init")):
        net = SplitNet(config.width, config.layers, config.heads, config.max_boxes)

    train_batches = _record_batches(dataset, "train", config.max_boxes)
    val_batches = _record_batches(dataset, "val", config.max_boxes)
    opt = torch.optim.Adam(net.parameters(), lr=config.lr)
    gen = torch.Generator()
    gen.manual_seed(derive_seed(config.seed, "split-noise") & 0x7FFFFFFFFFFFFFFF)
    val_gen_seed = derive_seed(config.seed, "split-val") & 0x7FFFFFFFFFFFFFFF
    history = {"train": [], "val": []}

    for epoch in range(config.epochs):
        net.train()
        total = count = 0.0
        for ctx, piv, kids in train_batches:
            for start in range(0, len(ctx), config.batch_size):
                sl = slice(start, start + config.batch_size)
                loss = _split_loss(net, schedule, ctx[sl], piv[sl], kids[sl], gen)
                opt.zero_grad()
                loss.backward()
                opt.step()
                total += float(loss.detach()) * len(ctx[sl])
                count += len(ctx[sl])
        net.eval()
        vgen = torch.Generator()
        vgen.manual_seed(val_gen_seed)
        with torch.no_grad():
            vtotal = sum(
                float(_split_loss(net, schedule, c, p, k, vgen)) * len(c) for c, p, k in val_batches
            )
            vcount = sum(len(c) for c, _, _ in val_batches)
        history["train"].append(total / count)
        history["val"].append(vtotal / max(vcount, 1))
        if log:
            log(f"split epoch {epoch + 1}/{config.epochs} train {history['train'][-1]:.4f} val {history['val'][-1]:.4f}")

    net.eval()
    model = SplitModel(
        net=net,
        schedule=schedule,
        mean=dataset.mean.copy(),
        scale=dataset.scale.copy(),
        config=config,
        family=dataset.family,
    )
    return model, history


def train_eps_mse(model: SplitModel, dataset: Dataset, split: str = "train", seed: int = 0) -> float:
    """The eps-MSE of the trained model over a split (matched conditions)."""
    batches = _record_batches(dataset, split, model.config.max_boxes)
    gen = torch.Generator()
    gen.manual_seed(seed)
    model.net.eval()
    with torch.no_grad():
        total = sum(float(_split_loss(model.net, model.schedule, c, p, k, gen)) * len(c) for c, p, k in batches)
        count = sum(len(c) for c, _, _ in batches)
    return total / count


def shuffled_condition_mse(model: SplitModel, dataset: Dataset, split: str = "train", seed: int = 0) -> float:
    """eps-MSE with contexts cyclically mismatched against their children."""
    batches = _record_batches(dataset, split, model.config.max_boxes)
    gen = torch.Generator()
    gen.manual_seed(seed)
    model.net.eval()
    total = count = 0.0
    with torch.no_grad():
        for ctx, piv, kids in batches:
            if len(ctx) < 2:
                continue
            roll = torch.roll(torch.arange(len(ctx)), 1)
            total += float(_split_loss(model.net, model.schedule, ctx[roll], piv[roll], kids, gen)) * len(ctx)
            count += len(ctx)
    return total / count
