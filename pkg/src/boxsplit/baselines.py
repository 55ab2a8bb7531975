"""Baseline splitters: conditional token prediction and inpainting.

The token model quantizes boxes with a residual VQ-VAE (two stages over a
shared MLP latent) and predicts two stage-0 logits with a min-of-orderings
cross-entropy; the second sampled token masks out the first's index. The
inpainting baseline trains a cardinality-conditioned unconditional diffusion
model and completes a duplicated-pivot set via DDIM inversion plus RePaint.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from boxsplit.checkpoint import load_checkpoint, save_checkpoint, state_dict_to_tensors, tensors_to_state_dict
from boxsplit.childsplit import CLIP_X0, MAX_SAMPLE_RETRIES, MIN_SIDE, DegenerateSampleError, _local_torch_seed
from boxsplit.config import RunConfig
from boxsplit.data import Dataset, intermediate_sets
from boxsplit.diffusion import (
    DiffusionSchedule,
    ddim_invert,
    ddim_timesteps,
    forward_diffuse,
    renoise,
    schedule_new,
)
from boxsplit.geometry import PARAM_DIM, Box, DegenerateOrientationError, orthonormalize, validate_box
from boxsplit.hierarchy import apply_split
from boxsplit.nets import (
    CrossAttentionBlock,
    SelfAttentionBlock,
    SinusoidalEmbedding,
    apply_perm,
    canonical_perm,
    lengths_to_mask,
)
from boxsplit.seeding import derive_seed

# ---------------------------------------------------------------------------
# Residual VQ-VAE over 15-dim box features


class BoxVQNet(nn.Module):
    def __init__(self, latent_dim: int, hidden: int, vocab: int, depth: int = 2):
        super().__init__()
        self.vocab = vocab
        self.depth = depth
        self.encoder = nn.Sequential(
            nn.Linear(PARAM_DIM, hidden), nn.GELU(), nn.Linear(hidden, hidden), nn.GELU(), nn.Linear(hidden, latent_dim)
        )
        self.decoder = nn.Sequential(
            nn.Linear(latent_dim, hidden), nn.GELU(), nn.Linear(hidden, hidden), nn.GELU(), nn.Linear(hidden, PARAM_DIM)
        )
        for d in range(depth):
            self.register_buffer(f"codebook{d}", torch.randn(vocab, latent_dim) * 0.1)
            self.register_buffer(f"cluster_size{d}", torch.zeros(vocab))
            self.register_buffer(f"embed_avg{d}", torch.zeros(vocab, latent_dim))

    def codebook(self, stage: int) -> torch.Tensor:
        return getattr(self, f"codebook{stage}")

    def quantize(self, z: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Greedy residual assignment; returns (codes (B, depth), z_q (B, latent))."""
        residual = z
        z_q = torch.zeros_like(z)
        codes = []
        for d in range(self.depth):
            cb = self.codebook(d)
            dist = torch.cdist(residual, cb)
            idx = dist.argmin(dim=1)
            codes.append(idx)
            picked = cb[idx]
            z_q = z_q + picked
            residual = residual - picked
        return torch.stack(codes, dim=1), z_q

    def encode_codes(self, feats: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        z = self.encoder(feats)
        return self.quantize(z)

    def decode_codes(self, codes: torch.Tensor) -> torch.Tensor:
        z_q = sum(self.codebook(d)[codes[:, d]] for d in range(self.depth))
        return self.decoder(z_q)


@dataclass
class VQModel:
    net: BoxVQNet
    mean: np.ndarray
    scale: np.ndarray
    config: RunConfig
    family: str

    def standardize(self, params):
        return (np.asarray(params, dtype=float) - self.mean) / self.scale

    def destandardize(self, feats):
        return np.asarray(feats, dtype=float) * self.scale + self.mean

    def save(self, path: str) -> None:
        meta = {
            "family": self.family,
            "config": self.config.to_dict(),
            "normalization": {"mean": self.mean.tolist(), "scale": self.scale.tolist()},
        }
        save_checkpoint(path, "vq", state_dict_to_tensors(self.net.state_dict()), meta)

    @staticmethod
    def load(path: str) -> "VQModel":
        kind, tensors, meta = load_checkpoint(path)
        if kind != "vq":
            raise ValueError(f"checkpoint kind {kind!r} is not a vq codebook")
        cfg = RunConfig.from_dict(meta["config"])
        net = BoxVQNet(cfg.vq_latent_dim, cfg.vq_hidden_dim, cfg.vocab_size, cfg.vq_depth)
        net.load_state_dict(tensors_to_state_dict(tensors))
        net.eval()
        return VQModel(
            net=net,
            mean=np.array(meta["normalization"]["mean"]),
            scale=np.array(meta["normalization"]["scale"]),
            config=cfg,
            family=meta.get("family", "unknown"),
        )


def vq_roundtrip(model: VQModel, b: Box) -> tuple[tuple[int, int], Box]:
    """Quantize one box to its (stage0, stage1) codes and decode it back."""
    validate_box(b)
    feats = torch.from_numpy(model.standardize(b.params())[None]).float()
    model.net.eval()
    with torch.no_grad():
        codes, _ = model.net.encode_codes(feats)
        recon = model.net.decode_codes(codes)
    params = model.destandardize(recon[0].numpy())
    sides = np.maximum(params[3:6], MIN_SIDE)
    orient = orthonormalize(params[6:])
    box = Box(params[:3], sides, orient)
    return (int(codes[0, 0]), int(codes[0, 1])), box


def vq_reconstruction_error(model: VQModel, dataset: Dataset, split: str = "val") -> float:
    """Mean per-dimension |reconstruction - input| in standardized units."""
    rows = np.vstack([n.box.params() for i in dataset.tree_indices(split) for n in dataset.trees[i].nodes])
    feats = torch.from_numpy(dataset.standardize(rows)).float()
    model.net.eval()
    with torch.no_grad():
        codes, _ = model.net.encode_codes(feats)
        recon = model.net.decode_codes(codes)
    return float((recon - feats).abs().mean())


def train_vq(dataset: Dataset, config: RunConfig, log=None) -> tuple[VQModel, dict]:
    """Residual VQ-VAE training with EMA codebooks and dead-code reseeding."""
    rows = np.vstack([n.box.params() for i in dataset.tree_indices("train") for n in dataset.trees[i].nodes])
    feats = torch.from_numpy(dataset.standardize(rows)).float()
    with _local_torch_seed(derive_seed(config.seed, "vq-init")):
        net = BoxVQNet(config.vq_latent_dim, config.vq_hidden_dim, config.vocab_size, config.vq_depth)
    opt = torch.optim.Adam(list(net.encoder.parameters()) + list(net.decoder.parameters()), lr=config.vq_lr)
    order_rng = np.random.default_rng(derive_seed(config.seed, "vq-batches"))
    decay = config.vq_ema_decay
    history = {"train": []}

    for epoch in range(config.vq_epochs):
        perm = order_rng.permutation(len(feats))
        total = 0.0
        for start in range(0, len(perm), config.vq_batch_size):
            idx = torch.from_numpy(perm[start : start + config.vq_batch_size])
            x = feats[idx]
            z = net.encoder(x)
            with torch.no_grad():
                codes, z_q = net.quantize(z)
            z_q_st = z + (z_q - z).detach()
            recon = net.decoder(z_q_st)
            loss = ((recon - x) ** 2).mean() + config.vq_commitment * ((z - z_q.detach()) ** 2).mean()
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += float(loss.detach()) * len(idx)

            # EMA codebook update per stage on the residual targets
            with torch.no_grad():
                residual = z.detach()
                for d in range(net.depth):
                    cb = net.codebook(d)
                    idx_d = codes[:, d]
                    onehot = torch.zeros(len(idx_d), net.vocab)
                    onehot[torch.arange(len(idx_d)), idx_d] = 1.0
                    counts = onehot.sum(dim=0)
                    embed_sum = onehot.T @ residual
                    cs = getattr(net, f"cluster_size{d}")
                    ea = getattr(net, f"embed_avg{d}")
                    cs.mul_(decay).add_(counts, alpha=1 - decay)
                    ea.mul_(decay).add_(embed_sum, alpha=1 - decay)
                    used = cs > 1e-3
                    cb[used] = ea[used] / cs[used].unsqueeze(1)
                    residual = residual - cb[idx_d]
        # reseed codes never used this epoch so the big vocab does not go dead
        with torch.no_grad():
            z_all = net.encoder(feats)
            residual = z_all
            for d in range(net.depth):
                cs = getattr(net, f"cluster_size{d}")
                dead = (cs < 1e-3).nonzero(as_tuple=True)[0]
                if len(dead):
                    pick = torch.from_numpy(order_rng.integers(0, len(residual), size=len(dead)))
                    net.codebook(d)[dead] = residual[pick]
                codes_d = torch.cdist(residual, net.codebook(d)).argmin(dim=1)
                residual = residual - net.codebook(d)[codes_d]
        history["train"].append(total / len(feats))
        if log:
            log(f"vq epoch {epoch + 1}/{config.vq_epochs} loss {history['train'][-1]:.5f}")

    net.eval()
    model = VQModel(net=net, mean=dataset.mean.copy(), scale=dataset.scale.copy(), config=config, family=dataset.family)
    return model, history


# ---------------------------------------------------------------------------
# Conditional token prediction model


def token_loss(logits: torch.Tensor, truth: tuple[int, int]) -> torch.Tensor:
    """min over the two orderings of the summed stage-0 cross-entropies."""
    logits = torch.as_tensor(logits, dtype=torch.float32)
    v1, v2 = int(truth[0]), int(truth[1])
    ce = nn.functional.cross_entropy
    t = lambda v: torch.tensor([v])
    straight = ce(logits[0:1], t(v1)) + ce(logits[1:2], t(v2))
    crossed = ce(logits[0:1], t(v2)) + ce(logits[1:2], t(v1))
    return torch.minimum(straight, crossed)


class TokenNet(nn.Module):
    """Conditional-diffusion architecture minus the timestep pathway.

    The encoder consumes quantized context latents; the decoder runs two
    learnable query tokens through self/cross-attention and emits stage-0
    logits plus stage-1 logits conditioned on the chosen stage-0 code.
    """

    def __init__(self, width: int, layers: int, heads: int, max_boxes: int, latent_dim: int, vocab: int):
        super().__init__()
        self.embed = nn.Linear(latent_dim, width)
        self.indicator_emb = nn.Embedding(2, width)
        self.card_emb = nn.Embedding(max_boxes + 2, width)
        self.enc_blocks = nn.ModuleList(SelfAttentionBlock(width, heads) for _ in range(layers))
        self.queries = nn.Parameter(torch.randn(2, width) * 0.02)
        self.dec_blocks = nn.ModuleList(CrossAttentionBlock(width, heads) for _ in range(layers))
        self.out_ln = nn.LayerNorm(width)
        self.head0 = nn.Linear(width, vocab)
        self.code_emb = nn.Embedding(vocab, width)
        self.head1 = nn.Sequential(nn.Linear(width, width), nn.GELU(), nn.Linear(width, vocab))

    def features(self, ctx_latents: torch.Tensor, indicator: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        """(B, n, latent) context -> (B, 2, width) child-slot features."""
        mask = lengths_to_mask(lengths, ctx_latents.shape[1])
        keys = torch.cat([ctx_latents, indicator.unsqueeze(-1).float()], dim=-1)
        perm, _ = canonical_perm(keys, mask)
        e_c = self.indicator_emb(apply_perm(indicator, perm))
        e_d = self.card_emb(lengths).unsqueeze(1)
        x = self.embed(apply_perm(ctx_latents, perm)) + e_c + e_d
        kpm = ~apply_perm(mask, perm)
        for blk in self.enc_blocks:
            x = blk(x, key_padding_mask=kpm) + e_c + e_d
        q = self.queries.unsqueeze(0).expand(x.shape[0], -1, -1)
        for blk in self.dec_blocks:
            q = blk(q, x, context_padding_mask=kpm)
        return self.out_ln(q)

    def stage0_logits(self, feats: torch.Tensor) -> torch.Tensor:
        return self.head0(feats)

    def stage1_logits(self, feats: torch.Tensor, stage0_codes: torch.Tensor) -> torch.Tensor:
        return self.head1(feats + self.code_emb(stage0_codes))


@dataclass
class TokenModel:
    net: TokenNet
    vq: VQModel
    mean: np.ndarray
    scale: np.ndarray
    config: RunConfig
    family: str

    def standardize(self, params):
        return (np.asarray(params, dtype=float) - self.mean) / self.scale

    def destandardize(self, feats):
        return np.asarray(feats, dtype=float) * self.scale + self.mean

    def save(self, path: str) -> None:
        tensors = state_dict_to_tensors(self.net.state_dict())
        tensors.update({f"vq.{k}": v for k, v in state_dict_to_tensors(self.vq.net.state_dict()).items()})
        meta = {
            "family": self.family,
            "config": self.config.to_dict(),
            "normalization": {"mean": self.mean.tolist(), "scale": self.scale.tolist()},
        }
        save_checkpoint(path, "token", tensors, meta)

    @staticmethod
    def load(path: str) -> "TokenModel":
        kind, tensors, meta = load_checkpoint(path)
        if kind != "token":
            raise ValueError(f"checkpoint kind {kind!r} is not a token model")
        cfg = RunConfig.from_dict(meta["config"])
        vq_tensors = {k[len("vq.") :]: v for k, v in tensors.items() if k.startswith("vq.")}
        own = {k: v for k, v in tensors.items() if not k.startswith("vq.")}
        vq_net = BoxVQNet(cfg.vq_latent_dim, cfg.vq_hidden_dim, cfg.vocab_size, cfg.vq_depth)
        vq_net.load_state_dict(tensors_to_state_dict(vq_tensors))
        vq_net.eval()
        net = TokenNet(cfg.width, cfg.layers, cfg.heads, cfg.max_boxes, cfg.vq_latent_dim, cfg.vocab_size)
        net.load_state_dict(tensors_to_state_dict(own))
        net.eval()
        mean = np.array(meta["normalization"]["mean"])
        scale = np.array(meta["normalization"]["scale"])
        vq = VQModel(net=vq_net, mean=mean, scale=scale, config=cfg, family=meta.get("family", "unknown"))
        return TokenModel(net=net, vq=vq, mean=mean, scale=scale, config=cfg, family=meta.get("family", "unknown"))


def _token_batches(dataset: Dataset, vq: VQModel, split: str, max_boxes: int):
    """Quantize record contexts/children once; bucket rectangular by cardinality."""
    by_n: dict[int, list] = {}
    for rec in dataset.records(split):
        if rec.cardinality <= max_boxes:
            by_n.setdefault(rec.cardinality, []).append(rec)
    out = []
    vq.net.eval()
    with torch.no_grad():
        for n, recs in sorted(by_n.items()):
            ctx = torch.from_numpy(np.stack([dataset.standardize(r.context) for r in recs])).float()
            _, zq = vq.net.encode_codes(ctx.reshape(-1, PARAM_DIM))
            ctx_latents = zq.reshape(len(recs), n, -1)
            piv = torch.from_numpy(np.array([r.pivot for r in recs], dtype=np.int64))
            kids = torch.from_numpy(np.stack([dataset.standardize(r.children) for r in recs])).float()
            codes, _ = vq.net.encode_codes(kids.reshape(-1, PARAM_DIM))
            codes = codes.reshape(len(recs), 2, vq.net.depth)
            out.append((ctx_latents, piv, codes))
    return out


def _token_batch_loss(net: TokenNet, ctx_latents, piv, codes) -> torch.Tensor:
    B, n = ctx_latents.shape[0], ctx_latents.shape[1]
    indicator = torch.zeros(B, n, dtype=torch.long)
    indicator[torch.arange(B), piv] = 1
    lengths = torch.full((B,), n, dtype=torch.long)
    feats = net.features(ctx_latents, indicator, lengths)
    l0 = net.stage0_logits(feats)
    ce = nn.functional.cross_entropy
    totals = []
    for order in ((0, 1), (1, 0)):
        c0 = codes[:, list(order), 0]
        c1 = codes[:, list(order), 1]
        loss0 = ce(l0[:, 0], c0[:, 0], reduction="none") + ce(l0[:, 1], c0[:, 1], reduction="none")
        l1_a = net.stage1_logits(feats[:, 0], c0[:, 0])
        l1_b = net.stage1_logits(feats[:, 1], c0[:, 1])
        loss1 = ce(l1_a, c1[:, 0], reduction="none") + ce(l1_b, c1[:, 1], reduction="none")
        totals.append(loss0 + loss1)
    return torch.minimum(totals[0], totals[1]).mean()


def train_token(dataset: Dataset, config: RunConfig, vq: VQModel, log=None) -> tuple[TokenModel, dict]:
    if not dataset.records("train"):
        raise ValueError("empty dataset")
    with _local_torch_seed(derive_seed(config.seed, "token-init")):
        net = TokenNet(config.width, config.layers, config.heads, config.max_boxes, config.vq_latent_dim, config.vocab_size)
    train_batches = _token_batches(dataset, vq, "train", config.max_boxes)
    opt = torch.optim.Adam(net.parameters(), lr=config.lr)
    history = {"train": []}
    for epoch in range(config.epochs):
        net.train()
        total = count = 0.0
        for ctx_latents, piv, codes in train_batches:
            for start in range(0, len(ctx_latents), config.batch_size):
                sl = slice(start, start + config.batch_size)
                loss = _token_batch_loss(net, ctx_latents[sl], piv[sl], codes[sl])
                opt.zero_grad()
                loss.backward()
                opt.step()
                total += float(loss.detach()) * len(ctx_latents[sl])
                count += len(ctx_latents[sl])
        history["train"].append(total / count)
        if log:
            log(f"token epoch {epoch + 1}/{config.epochs} loss {history['train'][-1]:.4f}")
    net.eval()
    model = TokenModel(
        net=net, vq=vq, mean=dataset.mean.copy(), scale=dataset.scale.copy(), config=config, family=dataset.family
    )
    return model, history


def _sample_cat(probs: np.ndarray, rng: np.random.Generator) -> int:
    return int(rng.choice(len(probs), p=probs / probs.sum()))


def token_split_many(model: TokenModel, contexts: np.ndarray, pivots: np.ndarray, rng_seed=0) -> np.ndarray:
    """Batched token-model split; duplicate stage-0 tokens are masked out."""
    contexts = np.asarray(contexts, dtype=float)
    B, n = contexts.shape[0], contexts.shape[1]
    pivots = np.asarray(pivots, dtype=np.int64)
    if np.any(pivots < 0) or np.any(pivots >= n):
        raise IndexError("pivot out of range")
    rng = np.random.default_rng(derive_seed(rng_seed, "token-sample"))
    feats = torch.from_numpy(model.standardize(contexts.reshape(-1, PARAM_DIM))).float()
    model.net.eval()
    model.vq.net.eval()
    with torch.no_grad():
        _, zq = model.vq.net.encode_codes(feats)
        ctx_latents = zq.reshape(B, n, -1)
        indicator = torch.zeros(B, n, dtype=torch.long)
        indicator[torch.arange(B), torch.from_numpy(pivots)] = 1
        lengths = torch.full((B,), n, dtype=torch.long)
        f = model.net.features(ctx_latents, indicator, lengths)
        l0 = torch.softmax(model.net.stage0_logits(f), dim=-1).numpy()

        c0_first = np.empty(B, dtype=np.int64)
        c0_second = np.empty(B, dtype=np.int64)
        for b in range(B):
            c0_first[b] = _sample_cat(l0[b, 0], rng)
            masked = l0[b, 1].copy()
            masked[c0_first[b]] = 0.0  # duplicate stage-0 token impossible
            c0_second[b] = _sample_cat(masked, rng)
        c0 = torch.from_numpy(np.stack([c0_first, c0_second], axis=1))
        c1 = torch.empty(B, 2, dtype=torch.long)
        for child in range(2):
            l1 = torch.softmax(model.net.stage1_logits(f[:, child], c0[:, child]), dim=-1).numpy()
            for b in range(B):
                c1[b, child] = _sample_cat(l1[b], rng)
        codes = torch.stack([c0, c1], dim=2)  # (B, 2, depth)
        recon = model.vq.net.decode_codes(codes.reshape(-1, model.vq.net.depth)).reshape(B, 2, PARAM_DIM).numpy()

    out = np.empty((B, n + 1, PARAM_DIM))
    for b in range(B):
        children = model.destandardize(recon[b])
        fixed = np.empty_like(children)
        for i, p in enumerate(children):
            sides = np.maximum(p[3:6], MIN_SIDE)
            orient = orthonormalize(p[6:])
            fixed[i] = np.concatenate([p[:3], sides, orient])
        out[b] = apply_split(contexts[b], int(pivots[b]), fixed)
    return out


def token_split(model: TokenModel, boxes, pivot: int, rng_seed=0) -> list[Box]:
    if isinstance(boxes[0], Box):
        params = np.stack([b.params() for b in boxes])
    else:
        params = np.asarray(boxes, dtype=float).reshape(len(boxes), PARAM_DIM)
    new_params = token_split_many(model, params[None], np.array([pivot]), rng_seed=rng_seed)[0]
    out = [Box.from_params(p) for p in new_params]
    for b in out:
        validate_box(b)
    return out


def token_splitter(model: TokenModel):
    def run(contexts, pivots, steps, rng_seed):  # steps unused: single forward pass
        return token_split_many(model, contexts, pivots, rng_seed=rng_seed)

    return run


# ---------------------------------------------------------------------------
# Unconditional diffusion + RePaint inpainting


class UncondNet(nn.Module):
    """Noise prediction over whole box sets, conditioned only on cardinality."""

    def __init__(self, width: int, layers: int, heads: int, max_boxes: int):
        super().__init__()
        self.embed = nn.Linear(PARAM_DIM, width)
        self.t_emb = SinusoidalEmbedding(width)
        self.card_emb = nn.Embedding(max_boxes + 2, width)
        self.blocks = nn.ModuleList(SelfAttentionBlock(width, heads) for _ in range(layers))
        self.out_ln = nn.LayerNorm(width)
        self.out = nn.Linear(width, PARAM_DIM)
        nn.init.zeros_(self.out.weight)
        nn.init.zeros_(self.out.bias)

    def forward(self, x_t: torch.Tensor, t: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        mask = lengths_to_mask(lengths, x_t.shape[1])
        perm, inv = canonical_perm(x_t, mask)
        x = self.embed(apply_perm(x_t, perm)) + self.t_emb(t).unsqueeze(1)
        e_d = self.card_emb(lengths).unsqueeze(1)
        kpm = ~apply_perm(mask, perm)
        for blk in self.blocks:
            x = blk(x, key_padding_mask=kpm) + e_d
        return apply_perm(self.out(self.out_ln(x)), inv)


@dataclass
class UncondModel:
    net: UncondNet
    schedule: DiffusionSchedule
    mean: np.ndarray
    scale: np.ndarray
    config: RunConfig
    family: str

    def standardize(self, params):
        return (np.asarray(params, dtype=float) - self.mean) / self.scale

    def destandardize(self, feats):
        return np.asarray(feats, dtype=float) * self.scale + self.mean

    def save(self, path: str) -> None:
        meta = {
            "family": self.family,
            "config": self.config.to_dict(),
            "normalization": {"mean": self.mean.tolist(), "scale": self.scale.tolist()},
            "schedule": {"T": self.schedule.T, "beta_start": float(self.schedule.betas[0]), "beta_end": float(self.schedule.betas[-1])},
        }
        save_checkpoint(path, "uncond", state_dict_to_tensors(self.net.state_dict()), meta)

    @staticmethod
    def load(path: str) -> "UncondModel":
        kind, tensors, meta = load_checkpoint(path)
        if kind != "uncond":
            raise ValueError(f"checkpoint kind {kind!r} is not an uncond model")
        cfg = RunConfig.from_dict(meta["config"])
        net = UncondNet(cfg.width, cfg.layers, cfg.heads, cfg.max_boxes)
        net.load_state_dict(tensors_to_state_dict(tensors))
        net.eval()
        sched = schedule_new(meta["schedule"]["T"], meta["schedule"]["beta_start"], meta["schedule"]["beta_end"])
        return UncondModel(
            net=net,
            schedule=sched,
            mean=np.array(meta["normalization"]["mean"]),
            scale=np.array(meta["normalization"]["scale"]),
            config=cfg,
            family=meta.get("family", "unknown"),
        )


def _set_batches(dataset: Dataset, split: str, max_boxes: int):
    """All intermediate sets of every tree, bucketed rectangular by cardinality."""
    by_n: dict[int, list[np.ndarray]] = {}
    for i in dataset.tree_indices(split):
        for s in intermediate_sets(dataset.trees[i]):
            if s.shape[0] <= max_boxes + 1:
                by_n.setdefault(s.shape[0], []).append(dataset.standardize(s))
    return [torch.from_numpy(np.stack(group)).float() for _, group in sorted(by_n.items())]


def train_uncond(dataset: Dataset, config: RunConfig, log=None) -> tuple[UncondModel, dict]:
    """eps-loss over whole box sets at all granularities, cardinality-conditioned."""
    schedule = schedule_new(config.diffusion_T, config.beta_start, config.beta_end)
    with _local_torch_seed(derive_seed(config.seed, "uncond-init")):
        net = UncondNet(config.width, config.layers, config.heads, config.max_boxes)
    batches = _set_batches(dataset, "train", config.max_boxes)
    if not batches:
        raise ValueError("empty dataset")
    opt = torch.optim.Adam(net.parameters(), lr=config.lr)
    gen = torch.Generator()
    gen.manual_seed(derive_seed(config.seed, "uncond-noise") & 0x7FFFFFFFFFFFFFFF)
    history = {"train": []}
    for epoch in range(config.epochs):
        net.train()
        total = count = 0.0
        for x0_all in batches:
            for start in range(0, len(x0_all), config.batch_size):
                x0 = x0_all[start : start + config.batch_size]
                B, n = x0.shape[0], x0.shape[1]
                t = torch.randint(0, schedule.T, (B,), generator=gen)
                eps = torch.randn(B, n, PARAM_DIM, generator=gen)
                x_t = forward_diffuse(x0, t, eps, schedule)
                pred = net(x_t, t, torch.full((B,), n, dtype=torch.long))
                loss = ((pred - eps) ** 2).mean()
                opt.zero_grad()
                loss.backward()
                opt.step()
                total += float(loss.detach()) * B
                count += B
        history["train"].append(total / count)
        if log:
            log(f"uncond epoch {epoch + 1}/{config.epochs} loss {history['train'][-1]:.4f}")
    net.eval()
    model = UncondModel(
        net=net, schedule=schedule, mean=dataset.mean.copy(), scale=dataset.scale.copy(), config=config, family=dataset.family
    )
    return model, history


def uncond_eps_mse(model: UncondModel, dataset: Dataset, split: str = "train", seed: int = 0) -> float:
    batches = _set_batches(dataset, split, model.config.max_boxes)
    gen = torch.Generator()
    gen.manual_seed(seed)
    model.net.eval()
    total = count = 0.0
    with torch.no_grad():
        for x0 in batches:
            B, n = x0.shape[0], x0.shape[1]
            t = torch.randint(0, model.schedule.T, (B,), generator=gen)
            eps = torch.randn(B, n, PARAM_DIM, generator=gen)
            x_t = forward_diffuse(x0, t, eps, model.schedule)
            pred = model.net(x_t, t, torch.full((B,), n, dtype=torch.long))
            total += float(((pred - eps) ** 2).mean()) * B
            count += B
    return total / count


def inpaint_many(
    model: UncondModel,
    contexts: np.ndarray,
    pivots: np.ndarray,
    steps: int = 50,
    resample: int = 5,
    rng_seed=0,
) -> np.ndarray:
    """Batched RePaint completion: duplicate the pivot, invert, re-generate both
    pivot slots while pinning the background to its forward-noised known values.

    Output background boxes equal the input ones exactly (taken from the input,
    not the denoised trajectory); only the two generated slots are new.
    """
    contexts = np.asarray(contexts, dtype=float)
    B, n = contexts.shape[0], contexts.shape[1]
    pivots = np.asarray(pivots, dtype=np.int64)
    if np.any(pivots < 0) or np.any(pivots >= n):
        raise IndexError("pivot out of range")

    known = np.empty((B, n + 1, PARAM_DIM), dtype=np.float32)
    known[:, :n] = model.standardize(contexts)
    known[:, n] = known[np.arange(B), pivots]
    known_t = torch.from_numpy(known)
    lengths = torch.full((B,), n + 1, dtype=torch.long)
    gen_mask = torch.zeros(B, n + 1, dtype=torch.bool)
    gen_mask[torch.arange(B), torch.from_numpy(pivots)] = True
    gen_mask[:, n] = True

    def predictor(x, t, _cond):
        tt = torch.full((x.shape[0],), int(t), dtype=torch.long)
        return model.net(x, tt, lengths[: x.shape[0]])

    model.net.eval()
    sched = model.schedule
    abar = sched.alpha_bars
    ts = ddim_timesteps(sched, steps)

    children = np.empty((B, 2, PARAM_DIM))
    pending = np.arange(B)
    for attempt in range(MAX_SAMPLE_RETRIES + 1):
        gen = torch.Generator()
        gen.manual_seed(derive_seed(rng_seed, "inpaint", attempt) & 0x7FFFFFFFFFFFFFFF)
        kt = known_t[pending]
        gm = gen_mask[pending].unsqueeze(-1)

        with torch.no_grad():
            x = ddim_invert(predictor, None, kt, sched, steps=steps)
            x = torch.where(gm, torch.randn(x.shape, generator=gen), x)
            for i, t in enumerate(ts):
                a_t = float(abar[t])
                is_last = i + 1 == len(ts)
                a_next = 1.0 if is_last else float(abar[ts[i + 1]])
                for r in range(resample):
                    noised_known = np.sqrt(a_t) * kt + np.sqrt(1 - a_t) * torch.randn(kt.shape, generator=gen)
                    x = torch.where(gm, x, noised_known)
                    eps_hat = predictor(x, int(t), None)
                    x0_hat = torch.clamp((x - np.sqrt(1 - a_t) * eps_hat) / np.sqrt(a_t), -CLIP_X0, CLIP_X0)
                    x_new = x0_hat if is_last else np.sqrt(a_next) * x0_hat + np.sqrt(1 - a_next) * eps_hat
                    if r + 1 < resample:
                        x = renoise(x_new, a_next, a_t, gen)
                    else:
                        x = x_new

        still_bad = []
        for row, b_idx in enumerate(pending):
            gen_slots = x[row][gen_mask[b_idx]].numpy()
            params = model.destandardize(gen_slots)
            try:
                fixed = np.empty_like(params)
                for k, p in enumerate(params):
                    sides = np.maximum(p[3:6], MIN_SIDE)
                    orient = orthonormalize(p[6:])
                    fixed[k] = np.concatenate([p[:3], sides, orient])
                children[b_idx] = fixed
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


def inpaint_split(
    model: UncondModel,
    boxes,
    pivot: int,
    steps: int = 50,
    resample: int = 5,
    rng_seed=0,
) -> list[Box]:
    if isinstance(boxes[0], Box):
        params = np.stack([b.params() for b in boxes])
    else:
        params = np.asarray(boxes, dtype=float).reshape(len(boxes), PARAM_DIM)
    if not 0 <= pivot < len(params):
        raise IndexError(f"pivot {pivot} out of range for {len(params)} boxes")
    new_params = inpaint_many(model, params[None], np.array([pivot]), steps=steps, resample=resample, rng_seed=rng_seed)[0]
    out = [Box.from_params(p) for p in new_params]
    for b in out:
        validate_box(b)
    return out


def inpaint_splitter(model: UncondModel, resample: int = 5):
    def run(contexts, pivots, steps, rng_seed):
        return inpaint_many(model, contexts, pivots, steps=steps, resample=resample, rng_seed=rng_seed)

    return run
