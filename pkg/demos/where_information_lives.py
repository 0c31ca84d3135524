"""Which part of the noise trajectory carries which task?

Two views over the same frozen codes:
 * a mutual-information matrix between grid times (nearby times should
   share information, distant ones shouldn't), and
 * per-task attention profiles from trained attention heads, compared
   pairwise with Jensen-Shannon divergence.

Writes heatmaps and a profile plot into demo_out/.  A few minutes.
"""

import os
from dataclasses import replace

import numpy as np

from trajrep import (HeadConfig, MineConfig, ReprConfig, extract_codes,
                     jsd_matrix, make_dataset, mine_mi_matrix, nmi_from_mi,
                     train_head, train_representation)
from trajrep.heads import build_tokens, standardize_apply
from trajrep.svg import heatmap, line_plot

K = 10
SEED = 0
OUT = "demo_out"

os.makedirs(OUT, exist_ok=True)
data = make_dataset("synthetic", 1536, seed=1)

print("training encoder ...")
rep = train_representation(data, ReprConfig(latent_dim=32, iterations=600), SEED)
codes = extract_codes(rep.encoder, data, K)
times = codes.times
labels = [f"t{t:.1f}" for t in times]

print("estimating the time-by-time MI matrix (the slow part) ...")
mine = MineConfig(iterations=500, batch_size=256, width=64, seeds=(0,))
mi = mine_mi_matrix(np.asarray(codes.codes, dtype=np.float64), mine,
                    progress=lambda i, j, v: print(f"  I(t{i}, t{j}) = {v:.3f}"))
nmi, _ = nmi_from_mi(mi)
heatmap(f"{OUT}/nmi.svg", nmi, row_labels=labels, col_labels=labels,
        title="normalized MI between grid times")

print("training attention heads per task ...")
head_config = HeadConfig(kind="attn", epochs=10, lr_grid=(1e-3, 5e-4))
profiles = []
for task in data.tasks:
    res = train_head(codes.codes, data.labels[task], head_config, SEED,
                     task=task, n_classes=data.n_classes[task])
    tokens = build_tokens(standardize_apply(codes.codes, res.stats),
                          head_config.token_time_dim)
    prof = res.model.attention_profile(tokens)
    profiles.append(prof)
    peak = times[prof.argmax()]
    print(f"  {task:9s} val acc {res.val_acc:.3f}, attention peak at t={peak:.1f}")

profiles = np.asarray(profiles)
line_plot(f"{OUT}/attention_profiles.svg",
          [(task, times, profiles[i]) for i, task in enumerate(data.tasks)],
          title="where each task looks", xlabel="t", ylabel="attention")
jsd = jsd_matrix(profiles)
heatmap(f"{OUT}/profile_jsd.svg", jsd, row_labels=data.tasks,
        col_labels=data.tasks, title="profile divergence (bits)")
print(f"wrote {OUT}/nmi.svg, {OUT}/attention_profiles.svg, {OUT}/profile_jsd.svg")
