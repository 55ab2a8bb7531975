"""Calibration for the directional-reproduction protocol (not shipped; deleted after use)."""
import time

import numpy as np
import torch

from boxsplit.baselines import inpaint_splitter, token_splitter, train_token, train_uncond, train_vq
from boxsplit.childsplit import SamplerBundle, conditional_splitter, generate_paths, train_eps_mse, train_split
from boxsplit.config import RunConfig
from boxsplit.data import build_dataset, intermediate_sets
from boxsplit.metrics import boxset_points, chamfer
from boxsplit.pivot import pivot_accuracy, train_pivot, uniform_baseline_accuracy
from boxsplit.seeding import derive_seed

torch.set_num_threads(2)

T0 = time.time()


def mark(msg):
    print(f"[{time.time() - T0:7.1f}s] {msg}", flush=True)


N_POINTS = 256
N_GEN = 64
LEVELS = (5, 8)

ds = build_dataset("plank-assembly", count=250, seed=20240)
mark(f"dataset: {len(ds.records('train'))} train records, {len(ds.tree_indices('train'))} train trees")

# reference clouds at each level from the train split
ref_clouds = {}
for level in LEVELS:
    sets = []
    for i in ds.tree_indices("train"):
        inter = intermediate_sets(ds.trees[i])
        if len(inter) > level:
            sets.append(inter[level])
    ref_clouds[level] = [
        boxset_points(s, n=N_POINTS, rng_seed=derive_seed(1, "ref", level, k)) for k, s in enumerate(sets)
    ]
    mark(f"level {level}: {len(sets)} reference shapes")


def mmd_cd(gen_clouds, ref):
    d = np.empty((len(gen_clouds), len(ref)))
    for i, g in enumerate(gen_clouds):
        for j, r in enumerate(ref):
            d[i, j] = chamfer(g, r)
    return float(d.min(axis=0).mean())


def run_seed(seed, epochs):
    cfg = RunConfig(
        seed=seed, family="plank-assembly", width=128, layers=6, heads=4,
        epochs=epochs, batch_size=2048, diffusion_T=1000, sample_steps=50,
        vocab_size=2048, vq_latent_dim=64, vq_hidden_dim=128, vq_epochs=150, vq_batch_size=128,
    )
    t = time.time()
    pivot_model, pivot_hist = train_pivot(ds, cfg)
    mark(f"seed {seed}: pivot trained ({time.time()-t:.0f}s), val acc {pivot_accuracy(pivot_model, ds, 'val'):.3f} vs uniform {uniform_baseline_accuracy(ds, 'val'):.3f}")
    t = time.time()
    split_model, split_hist = train_split(ds, cfg)
    mark(f"seed {seed}: cond trained ({time.time()-t:.0f}s), final {split_hist['train'][-1]:.4f}, train eps-mse {train_eps_mse(split_model, ds, 'train', seed=1):.4f}")
    t = time.time()
    uncond_model, uncond_hist = train_uncond(ds, cfg)
    mark(f"seed {seed}: uncond trained ({time.time()-t:.0f}s), final {uncond_hist['train'][-1]:.4f}")
    t = time.time()
    vq_model, _ = train_vq(ds, cfg)
    token_model, token_hist = train_token(ds, cfg, vq_model)
    mark(f"seed {seed}: vq+token trained ({time.time()-t:.0f}s), final {token_hist['train'][-1]:.4f}")

    bundle = SamplerBundle(
        pivot=pivot_model,
        splitters={
            "conditional": conditional_splitter(split_model),
            "inpaint": inpaint_splitter(uncond_model),
            "token": token_splitter(token_model),
        },
    )
    results = {}
    for name, sampler, strategy in (
        ("cond/cls", "conditional", "classifier"),
        ("cond/rand", "conditional", "random"),
        ("inpaint/cls", "inpaint", "classifier"),
        ("token/cls", "token", "classifier"),
    ):
        t = time.time()
        path = generate_paths(
            bundle, 9, derive_seed(seed, "gen", name), n_paths=N_GEN,
            sampler=sampler, pivot_strategy=strategy, steps=50,
        )
        vals = []
        for level in LEVELS:
            clouds = [
                boxset_points(path[level][b], n=N_POINTS, rng_seed=derive_seed(seed, "cloud", name, level, b))
                for b in range(N_GEN)
            ]
            vals.append(mmd_cd(clouds, ref_clouds[level]))
        results[name] = float(np.mean(vals))
        mark(f"seed {seed}: {name} MMD-CD x1e3 = {results[name]*1e3:.3f} (gen {time.time()-t:.0f}s)")
    return results


all_results = []
for k, seed in enumerate((101,)):
    all_results.append(run_seed(seed, epochs=60))
mark(f"TOTAL {all_results}")
