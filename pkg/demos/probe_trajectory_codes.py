"""What do different readers get out of the same trajectory codes?

Trains one encoder, freezes it, reads codes over an 11-point noise grid,
then compares three downstream readers per task: a per-time MLP (how much
each single grid time knows), a GRU over the sequence, and an attention
pool.  Prints a small accuracy table.  Runs in a few minutes.
"""

from dataclasses import replace

import numpy as np

from trajrep import (HeadConfig, ReprConfig, extract_codes, make_dataset,
                     train_head, train_representation)

K = 10
SEED = 0

train_data = make_dataset("synthetic", 1536, seed=1)
test_data = make_dataset("synthetic", 512, seed=2)

print("training encoder ...")
config = ReprConfig(mode="drl", latent_dim=32, iterations=600)
rep = train_representation(train_data, config, SEED)

print("extracting codes ...")
tr = extract_codes(rep.encoder, train_data, K)
te = extract_codes(rep.encoder, test_data, K)

head_config = HeadConfig(epochs=10, lr_grid=(1e-3, 5e-4, 1e-4))
rows = {}
for kind in ("mlp", "gru", "attn"):
    accs = []
    for task in train_data.tasks:
        res = train_head(tr.codes, train_data.labels[task],
                         replace(head_config, kind=kind), SEED, task=task,
                         n_classes=train_data.n_classes[task],
                         test_codes=te.codes, test_labels=test_data.labels[task])
        accs.append(res.test_acc)
        print(f"  {kind:4s} {task:9s} test acc {res.test_acc:.3f}")
    rows[kind] = accs

print()
header = f"{'task':10s}" + "".join(f"{k:>8s}" for k in rows)
print(header)
for i, task in enumerate(train_data.tasks):
    line = f"{task:10s}" + "".join(f"{rows[k][i]:8.3f}" for k in rows)
    print(line)
print(f"{'mean':10s}" + "".join(f"{np.mean(rows[k]):8.3f}" for k in rows))
