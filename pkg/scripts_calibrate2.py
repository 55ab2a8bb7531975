"""Epoch/sample-count scaling of the conditional model's MMD (calibration, not shipped)."""
import time

import numpy as np
import torch

from boxsplit.childsplit import SamplerBundle, conditional_splitter, generate_paths, train_split
from boxsplit.config import RunConfig
from boxsplit.data import build_dataset, intermediate_sets
from boxsplit.metrics import boxset_points, chamfer
from boxsplit.pivot import train_pivot
from boxsplit.seeding import derive_seed

torch.set_num_threads(2)
T0 = time.time()


def mark(msg):
    print(f"[{time.time() - T0:7.1f}s] {msg}", flush=True)


N_POINTS = 256
LEVELS = (5, 8)

ds = build_dataset("plank-assembly", count=250, seed=20240)
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


def mmd_cd(gen_clouds, ref):
    d = np.empty((len(gen_clouds), len(ref)))
    for i, g in enumerate(gen_clouds):
        for j, r in enumerate(ref):
            d[i, j] = chamfer(g, r)
    return float(d.min(axis=0).mean())


def eval_bundle(bundle, sampler, strategy, n_gen, seed, tag):
    path = generate_paths(bundle, 9, derive_seed(seed, "gen", tag), n_paths=n_gen, sampler=sampler, pivot_strategy=strategy, steps=50)
    vals = []
    for level in LEVELS:
        clouds = [
            boxset_points(path[level][b], n=N_POINTS, rng_seed=derive_seed(seed, "cloud", tag, level, b))
            for b in range(n_gen)
        ]
        vals.append(mmd_cd(clouds, ref_clouds[level]))
    return float(np.mean(vals)), [v * 1e3 for v in vals]


cfg = RunConfig(seed=101, family="plank-assembly", width=128, layers=6, heads=4,
                epochs=60, batch_size=2048, diffusion_T=1000, sample_steps=50)
pivot_model, _ = train_pivot(ds, cfg.replace(epochs=60))
mark("pivot done")

# train in stages so each checkpoint continues from the previous state
from boxsplit.childsplit import SplitModel, SplitNet, _record_batches, _split_loss
from boxsplit.diffusion import schedule_new
from boxsplit.pivot import _local_torch_seed

schedule = schedule_new(1000)
with _local_torch_seed(derive_seed(101, "split-init")):
    net = SplitNet(128, 6, 4, 32)
batches = _record_batches(ds, "train", 32)
opt = torch.optim.Adam(net.parameters(), lr=8e-4)
gen = torch.Generator(); gen.manual_seed(derive_seed(101, "split-noise") & 0x7FFFFFFFFFFFFFFF)

done = 0
for target in (60, 100, 150):
    net.train()
    while done < target:
        for ctx, piv, kids in batches:
            loss = _split_loss(net, schedule, ctx, piv, kids, gen)
            opt.zero_grad(); loss.backward(); opt.step()
        done += 1
    net.eval()
    model = SplitModel(net=net, schedule=schedule, mean=ds.mean.copy(), scale=ds.scale.copy(), config=cfg, family=ds.family)
    bundle = SamplerBundle(pivot=pivot_model, splitters={"conditional": conditional_splitter(model)})
    for n_gen in (64, 128):
        m, per = eval_bundle(bundle, "conditional", "classifier", n_gen, 101, f"e{target}n{n_gen}")
        mark(f"cond epochs={target} n_gen={n_gen}: mean MMD x1e3 = {m*1e3:.3f} (levels {per[0]:.3f}/{per[1]:.3f}) loss {float(loss):.4f}")
EOF_MARKER = True
