"""Experiment stages and their artifacts.

Every stage writes its outputs under one run directory and appends a
record (parameters, input/output content hashes, wall seconds) to the
directory's ``run.json`` manifest.  Metric CSVs print floats with %.17g,
so a rerun with the same master seed reproduces them byte for byte;
timings live only in the manifest, which is not a metric artifact.

``TRAJ_REPR_THREADS`` caps fan-out for the one embarrassingly parallel
stage (mutual-information matrix cells); merges are ordered, so the cap
never changes results.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (MineConfig, band_contrast, jsd_matrix, mine_mi,
                       nmi_from_mi, separation_stats)
from .checkpoint import file_hash, load_model, save_model
from .datasets import make_dataset, load_dataset, save_dataset
from .heads import HeadConfig, build_tokens, standardize_apply, train_head
from .sde import grid_times
from .svg import heatmap, line_plot
from .trajectory import extract_codes, load_codes, save_codes
from .training import ReprConfig, smoothed_final, train_representation
from .rng import seed_stream


def thread_cap():
    """Fan-out limit from TRAJ_REPR_THREADS (default 1, floor 1)."""
    try:
        return max(1, int(os.environ.get("TRAJ_REPR_THREADS", "1")))
    except ValueError:
        return 1


def config_hash(obj):
    """Stable hash of any JSON-serializable configuration."""
    blob = json.dumps(obj, sort_keys=True, default=str).encode()
    return hashlib.blake2s(blob, digest_size=16).hexdigest()


def _csv_cell(v):
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_csv_cell(v) for v in row])
    return path


# --- run manifest ----------------------------------------------------------------


class RunDir:
    """A run directory plus its ``run.json`` stage ledger."""

    def __init__(self, root):
        self.root = root.root if isinstance(root, RunDir) else Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.manifest_path = self.root / "run.json"

    def manifest(self):
        if self.manifest_path.exists():
            with open(self.manifest_path) as fh:
                return json.load(fh)
        return {"tool_version": __version__, "numpy_version": np.__version__,
                "stages": []}

    def record(self, name, params, inputs, outputs, seconds):
        man = self.manifest()
        man["stages"].append({
            "name": name,
            "params": params,
            "inputs": {str(Path(p).name): file_hash(p) for p in inputs},
            "outputs": {str(Path(p).name): file_hash(p) for p in outputs},
            "seconds": round(seconds, 3),
        })
        with open(self.manifest_path, "w") as fh:
            json.dump(man, fh, indent=2, sort_keys=True)
            fh.write("\n")

    def artifact_hashes(self):
        """name -> recorded hash, for every output across all stages."""
        out = {}
        for stage in self.manifest()["stages"]:
            out.update(stage["outputs"])
        return out


class StageError(RuntimeError):
    """A stage dependency is missing or inconsistent."""


def _require(path, what):
    if not Path(path).exists():
        raise StageError(f"missing {what}: {path}")
    return Path(path)


# --- stages ---------------------------------------------------------------------


def stage_gen_data(run, kind, n, seed, force=False):
    """Generate a dataset; refuses to overwrite unless force is set."""
    if n < 1:
        raise ValueError(f"need n >= 1, got {n}")
    run = RunDir(run)
    base = run.root / f"{kind}_n{n}_s{seed}"
    npz = base.with_suffix(".npz")
    if npz.exists() and not force:
        raise StageError(f"{npz} exists; pass force to regenerate")
    t0 = time.time()
    ds = make_dataset(kind, n, seed)
    save_dataset(ds, base)
    run.record("gen-data", {"kind": kind, "n": n, "seed": seed},
               [], [npz, base.with_suffix(".json")], time.time() - t0)
    return {"dataset": npz, "manifest": base.with_suffix(".json")}


def stage_train_repr(run, data_path, config, seed, tag="", progress=None):
    """Train encoder + score net; writes checkpoints, loss CSV, loss SVG."""
    run = RunDir(run)
    data_path = _require(data_path, "dataset")
    ds = load_dataset(data_path)
    t0 = time.time()
    result = train_representation(ds, config, seed, progress=progress)
    outputs = []

    enc_path = None
    enc_hash = ""
    if result.encoder is not None:
        enc_path = run.root / f"{tag}encoder.trrp"
        enc_cfg = dict(mode=config.mode, latent_dim=config.latent_dim,
                       width=config.enc_width, temb_dim=config.temb_dim,
                       canvas=ds.canvas)
        enc_hash = save_model(result.encoder, "encoder", enc_cfg, enc_path,
                              extra={"seed": seed, "dataset": ds.fingerprint()})
        outputs.append(enc_path)
    net_path = run.root / f"{tag}scorenet.trrp"
    net_cfg = dict(latent_dim=config.latent_dim if config.conditioned else 0,
                   width=config.net_width, temb_dim=config.temb_dim,
                   canvas=ds.canvas)
    save_model(result.score_net, "image_score", net_cfg, net_path,
               extra={"seed": seed, "dataset": ds.fingerprint()})
    outputs.append(net_path)

    loss_csv = run.root / f"{tag}loss.csv"
    write_csv(loss_csv, ["iteration", "dsm_term", "reg_term", "total"],
              result.history)
    outputs.append(loss_csv)
    hist = np.asarray([(r[0], r[3]) for r in result.history])
    loss_svg = run.root / f"{tag}loss.svg"
    line_plot(loss_svg, [("total", hist[:, 0], hist[:, 1])],
              title="training loss", xlabel="iteration", ylabel="loss")
    outputs.append(loss_svg)

    summary = {"final_smoothed": smoothed_final(result.history),
               "encoder_hash": enc_hash, "seed": seed,
               "conditioned": config.conditioned, "mode": config.mode}
    meta_path = run.root / f"{tag}repr.json"
    with open(meta_path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    outputs.append(meta_path)

    run.record("train-repr",
               {"config": asdict(config), "seed": seed, "tag": tag},
               [data_path], outputs, time.time() - t0)
    return {"encoder": enc_path, "scorenet": net_path, "loss_csv": loss_csv,
            "summary": summary, "result": result}


def stage_extract(run, ckpt_path, data_path, k, tag=""):
    """Read codes over the k+1 grid from a frozen encoder checkpoint."""
    run = RunDir(run)
    ckpt_path = _require(ckpt_path, "encoder checkpoint")
    data_path = _require(data_path, "dataset")
    ds = load_dataset(data_path)
    t0 = time.time()
    encoder, header = load_model(ckpt_path)
    if header["kind"] != "encoder":
        raise StageError(f"{ckpt_path} is a '{header['kind']}' checkpoint, "
                         f"expected 'encoder'")
    tc = extract_codes(encoder, ds, k, encoder_hash=file_hash(ckpt_path))
    out = run.root / f"{tag}codes_k{k}.trjc"
    save_codes(tc, out)
    run.record("extract", {"k": k, "tag": tag}, [ckpt_path, data_path], [out],
               time.time() - t0)
    return {"codes": out, "trajectory": tc}


def _check_codes_match(tc, ds, codes_path, data_path):
    if tc.dataset_fingerprint and tc.dataset_fingerprint != ds.fingerprint():
        raise StageError(f"{codes_path} was extracted from a different "
                         f"dataset than {data_path}")


def stage_train_head(run, codes_path, data_path, kind, task, config, seed,
                     test_codes_path=None, test_data_path=None, tag=""):
    """Train one head on cached codes; writes metrics JSON + checkpoint."""
    run = RunDir(run)
    codes_path = _require(codes_path, "trajectory cache")
    data_path = _require(data_path, "dataset")
    tc = load_codes(codes_path)
    ds = load_dataset(data_path)
    _check_codes_match(tc, ds, codes_path, data_path)
    if task not in ds.labels:
        raise StageError(f"dataset has no task '{task}' (tasks: {ds.tasks})")
    inputs = [codes_path, data_path]

    test_codes = test_labels = None
    if test_codes_path is not None:
        test_codes_path = _require(test_codes_path, "test trajectory cache")
        test_data_path = _require(test_data_path, "test dataset")
        ttc = load_codes(test_codes_path)
        tds = load_dataset(test_data_path)
        _check_codes_match(ttc, tds, test_codes_path, test_data_path)
        test_codes, test_labels = ttc.codes, tds.labels[task]
        inputs += [test_codes_path, test_data_path]

    t0 = time.time()
    config = replace(config, kind=kind)
    res = train_head(tc.codes, ds.labels[task], config, seed, task=task,
                     n_classes=ds.n_classes[task],
                     test_codes=test_codes, test_labels=test_labels)

    stem = f"{tag}head_{kind}_{task}_s{seed}"
    head_path = run.root / f"{stem}.trrp"
    n_times = tc.k + 1
    in_dim = tc.latent_dim if kind == "mlp" else tc.latent_dim + config.token_time_dim
    head_cfg = {
        "mlp": dict(n_times=n_times, in_dim=in_dim, n_classes=ds.n_classes[task],
                    hidden=config.mlp_hidden, drop=config.dropout),
        "gru": dict(in_dim=in_dim, n_classes=ds.n_classes[task],
                    hidden=config.gru_hidden, drop=config.dropout),
        "attn": dict(in_dim=in_dim, n_classes=ds.n_classes[task],
                     model_dim=config.attn_dim, n_heads=config.attn_heads,
                     n_layers=config.attn_layers, drop=config.dropout),
    }[kind]
    save_model(res.model, f"head_{kind}", head_cfg, head_path,
               extra={"task": task, "seed": seed, "k": tc.k,
                      "best_lr": res.best_lr,
                      "standardize_mean": res.stats[0].tolist(),
                      "standardize_std": res.stats[1].tolist()})

    metrics = {"task": task, "kind": kind, "seed": seed, "k": tc.k,
               "best_lr": res.best_lr, "val_acc": res.val_acc,
               "test_acc": res.test_acc,
               "per_lr": {f"{lr:g}": acc for lr, acc in res.per_lr.items()}}
    if res.per_time_val is not None:
        metrics["per_time_val"] = res.per_time_val.tolist()
        metrics["per_time_lr"] = res.per_time_lr.tolist()
    if res.per_time_test is not None:
        metrics["per_time_test"] = res.per_time_test.tolist()
    metrics_path = run.root / f"{stem}.json"
    with open(metrics_path, "w") as fh:
        json.dump(metrics, fh, indent=2, sort_keys=True)
        fh.write("\n")

    run.record("train-head",
               {"kind": kind, "task": task, "seed": seed,
                "config": asdict(config)},
               inputs, [head_path, metrics_path], time.time() - t0)
    return {"head": head_path, "metrics": metrics, "result": res}


def _parallel_mi_matrix(codes, config, workers):
    """Upper-triangle MINE jobs with per-cell isolation, ordered merge."""
    n_times = codes.shape[1]
    cells = [(i, j) for i in range(n_times) for j in range(i, n_times)]

    def job(cell):
        i, j = cell
        return mine_mi(codes[:, i, :], codes[:, j, :], config)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            vals = list(pool.map(job, cells))
    else:
        vals = [job(c) for c in cells]
    mi = np.zeros((n_times, n_times))
    for (i, j), v in zip(cells, vals):
        mi[i, j] = mi[j, i] = v
    return mi


def stage_analyze_nmi(run, codes_path, mine_config=None, subset=2048, tag=""):
    """MI/NMI matrices over grid times: CSVs plus heatmap SVGs."""
    run = RunDir(run)
    codes_path = _require(codes_path, "trajectory cache")
    tc = load_codes(codes_path)
    mine_config = mine_config or MineConfig()
    t0 = time.time()
    codes = np.asarray(tc.codes, dtype=np.float64)[:subset]
    mi = _parallel_mi_matrix(codes, mine_config, thread_cap())
    nmi, n_clamped = nmi_from_mi(mi)

    times = [f"t{ti:.2f}" for ti in tc.times]
    outputs = []
    for name, mat in (("mi_matrix", mi), ("nmi_matrix", nmi)):
        p = run.root / f"{tag}{name}.csv"
        write_csv(p, ["time"] + times,
                  [[times[i]] + list(mat[i]) for i in range(len(times))])
        outputs.append(p)
        s = run.root / f"{tag}{name}.svg"
        heatmap(s, mat, row_labels=times, col_labels=times,
                title=name.replace("_", " "))
        outputs.append(s)

    bc = band_contrast(nmi) if nmi.shape[0] > 5 else None
    summary = {"band_contrast": bc, "n_clamped": n_clamped,
               "n_samples": int(codes.shape[0]),
               "mi_units": "nats", "nmi_normalization": "I/sqrt(Hi*Hj), "
               "H estimated as the matrix diagonal I(X;X)"}
    sp = run.root / f"{tag}nmi_summary.json"
    with open(sp, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    outputs.append(sp)
    run.record("analyze-nmi",
               {"mine": asdict(mine_config), "subset": subset, "tag": tag},
               [codes_path], outputs, time.time() - t0)
    return {"mi": mi, "nmi": nmi, "summary": summary, "outputs": outputs}


def stage_analyze_attention(run, head_paths, codes_path, tag=""):
    """Attention-relevance profiles per task + their pairwise JSD matrix.

    head_paths: task -> checkpoint of a trained attention head.  Profiles
    come from a single-layer pass on the supplied codes.
    """
    run = RunDir(run)
    codes_path = _require(codes_path, "trajectory cache")
    tc = load_codes(codes_path)
    t0 = time.time()

    tasks = sorted(head_paths)
    profiles = []
    inputs = [codes_path]
    for task in tasks:
        p = _require(head_paths[task], f"attention head for '{task}'")
        inputs.append(p)
        head, header = load_model(p)
        if header["kind"] != "head_attn":
            raise StageError(f"{p} is not an attention-head checkpoint")
        if header["extra"].get("k") != tc.k:
            raise StageError(f"{p} was trained at k={header['extra'].get('k')}, "
                             f"codes are k={tc.k}")
        stats = (np.asarray(header["extra"]["standardize_mean"]),
                 np.asarray(header["extra"]["standardize_std"]))
        tokens = build_tokens(standardize_apply(tc.codes, stats),
                              head.in_dim - tc.latent_dim)
        profiles.append(head.attention_profile(tokens))
    profiles = np.asarray(profiles)

    times = [f"t{ti:.2f}" for ti in tc.times]
    prof_csv = run.root / f"{tag}attention_profiles.csv"
    write_csv(prof_csv, ["task"] + times,
              [[t] + list(profiles[i]) for i, t in enumerate(tasks)])
    prof_svg = run.root / f"{tag}attention_profiles.svg"
    line_plot(prof_svg, [(t, tc.times, profiles[i]) for i, t in enumerate(tasks)],
              title="attention over trajectory", xlabel="t", ylabel="weight")

    jsd = jsd_matrix(profiles)
    jsd_csv = run.root / f"{tag}jsd_matrix.csv"
    write_csv(jsd_csv, ["task"] + tasks,
              [[t] + list(jsd[i]) for i, t in enumerate(tasks)])
    jsd_svg = run.root / f"{tag}jsd_matrix.svg"
    heatmap(jsd_svg, jsd, row_labels=tasks, col_labels=tasks,
            title="profile JSD (bits)")

    outputs = [prof_csv, prof_svg, jsd_csv, jsd_svg]
    run.record("analyze-attention", {"tasks": tasks, "tag": tag},
               inputs, outputs, time.time() - t0)
    return {"tasks": tasks, "profiles": profiles, "jsd": jsd, "outputs": outputs}


def stage_analyze_separation(run, codes_path, n_samples=256, tag=""):
    """Start-vs-supremum pair separation over the grid (summary CSV)."""
    run = RunDir(run)
    codes_path = _require(codes_path, "trajectory cache")
    tc = load_codes(codes_path)
    t0 = time.time()
    stats = separation_stats(np.asarray(tc.codes, dtype=np.float64)[:n_samples])
    gained = stats["dsup"] > stats["d0"]
    rows = [[int(min(n_samples, len(tc))), stats["d0"].size,
             int(stats["violations"]), float(stats["d0"].mean()),
             float(stats["dsup"].mean()), float(gained.mean())]]
    p = run.root / f"{tag}separation.csv"
    write_csv(p, ["n_samples", "n_pairs", "violations",
                  "mean_d0", "mean_dsup", "frac_pairs_gaining"], rows)
    run.record("analyze-separation", {"n_samples": n_samples, "tag": tag},
               [codes_path], [p], time.time() - t0)
    return {"stats": stats, "csv": p}


def stage_ablate_granularity(run, ckpt_path, data_path, test_data_path, ks,
                             config, seeds, tasks=None, kind="attn", tag=""):
    """Head accuracy as a function of grid granularity k.

    One extraction per k (train and test), then kind-heads per
    (k, seed, task); emits a long-format CSV and a mean-accuracy SVG.
    """
    run = RunDir(run)
    ks = sorted(int(k) for k in ks)
    ds = load_dataset(_require(data_path, "dataset"))
    tasks = list(tasks) if tasks else ds.tasks
    t0 = time.time()
    rows = []
    for k in ks:
        tr = stage_extract(run, ckpt_path, data_path, k, tag=f"{tag}train_")
        te = stage_extract(run, ckpt_path, test_data_path, k, tag=f"{tag}test_")
        for seed in seeds:
            for task in tasks:
                res = stage_train_head(
                    run, tr["codes"], data_path, kind, task, config, seed,
                    test_codes_path=te["codes"], test_data_path=test_data_path,
                    tag=f"{tag}k{k}_")
                m = res["metrics"]
                rows.append([k, seed, task, kind, m["val_acc"], m["test_acc"]])

    csv_path = run.root / f"{tag}granularity.csv"
    write_csv(csv_path, ["k", "seed", "task", "kind", "val_acc", "test_acc"], rows)

    # mean over tasks per (k, seed)
    series = []
    for seed in seeds:
        ys = []
        for k in ks:
            accs = [r[5] for r in rows if r[0] == k and r[1] == seed]
            ys.append(float(np.mean(accs)))
        series.append((f"seed {seed}", np.asarray(ks, dtype=float), np.asarray(ys)))
    svg_path = run.root / f"{tag}granularity.svg"
    line_plot(svg_path, series, title="accuracy vs granularity",
              xlabel="k", ylabel="mean test accuracy")
    run.record("ablate-granularity",
               {"ks": ks, "seeds": list(seeds), "tasks": tasks, "kind": kind,
                "config": asdict(config), "tag": tag},
               [Path(ckpt_path), Path(data_path), Path(test_data_path)],
               [csv_path, svg_path], time.time() - t0)
    return {"rows": rows, "csv": csv_path, "svg": svg_path}


def stage_report(out_dir, run_dirs):
    """Collate an index of artifacts across runs, verifying every hash."""
    if not run_dirs:
        raise ValueError("no run directories to report over")
    out = RunDir(out_dir)
    t0 = time.time()
    sections = []
    for rd in run_dirs:
        rd = Path(rd)
        _require(rd / "run.json", "run manifest")
        run = RunDir(rd)
        entries = []
        for name, recorded in sorted(run.artifact_hashes().items()):
            path = rd / name
            _require(path, f"artifact listed in {rd}/run.json")
            actual = file_hash(path)
            if actual != recorded:
                raise StageError(f"{path}: content hash {actual} does not "
                                 f"match manifest entry {recorded}")
            entries.append((name, recorded))
        sections.append((rd, entries))

    lines = ["<!doctype html>", "<html><head><meta charset='utf-8'>",
             "<title>run index</title></head><body>",
             "<h1>Run artifacts</h1>"]
    for rd, entries in sections:
        lines.append(f"<h2>{rd}</h2><ul>")
        for name, digest in entries:
            rel = os.path.relpath(rd / name, out.root)
            if name.endswith(".svg"):
                lines.append(f"<li><a href='{rel}'>{name}</a> "
                             f"<code>{digest}</code><br>"
                             f"<img src='{rel}' width='480'></li>")
            else:
                lines.append(f"<li><a href='{rel}'>{name}</a> "
                             f"<code>{digest}</code></li>")
        lines.append("</ul>")
    lines.append("</body></html>")
    index = out.root / "index.html"
    index.write_text("\n".join(lines) + "\n")
    out.record("report", {"runs": [str(r) for r in run_dirs]},
               [Path(r) / "run.json" for r in run_dirs], [index],
               time.time() - t0)
    return {"index": index}


# --- full pipeline ----------------------------------------------------------------


@dataclass
class PipelineConfig:
    """End-to-end run settings: data sizes, budgets, analysis scope."""

    dataset: str = "synthetic"
    n_train: int = 4096
    n_test: int = 1024
    k: int = 10
    repr: ReprConfig = field(default_factory=ReprConfig)
    head: HeadConfig = field(default_factory=HeadConfig)
    head_kinds: tuple = ("mlp", "gru", "attn")
    head_seeds: tuple = (0, 1, 2)
    tasks: tuple = ()                    # empty: all dataset tasks
    mine: MineConfig = field(default_factory=MineConfig)
    mine_subset: int = 2048
    separation_samples: int = 256
    granularity_ks: tuple = ()           # empty: skip the ablation
    granularity_latent: int = 2
    granularity_seeds: tuple = (0, 1, 2)

    def to_json(self):
        return {"dataset": self.dataset, "n_train": self.n_train,
                "n_test": self.n_test, "k": self.k,
                "repr": asdict(self.repr), "head": asdict(self.head),
                "head_kinds": list(self.head_kinds),
                "head_seeds": list(self.head_seeds),
                "tasks": list(self.tasks), "mine": asdict(self.mine),
                "mine_subset": self.mine_subset,
                "separation_samples": self.separation_samples,
                "granularity_ks": list(self.granularity_ks),
                "granularity_latent": self.granularity_latent,
                "granularity_seeds": list(self.granularity_seeds)}


def compact_pipeline_config():
    """A minutes-scale configuration exercising every stage."""
    return PipelineConfig(
        n_train=512, n_test=256,
        repr=ReprConfig(iterations=200, latent_dim=16, enc_width=8,
                        net_width=16),
        head=HeadConfig(epochs=6, lr_grid=(1e-3, 5e-4), mlp_hidden=64,
                        gru_hidden=32, attn_dim=32),
        head_seeds=(0,),
        mine=MineConfig(iterations=120, batch_size=128, width=32, seeds=(0,)),
        mine_subset=512, separation_samples=128,
        granularity_ks=(2, 5), granularity_latent=2, granularity_seeds=(0,))


def run_pipeline(root, master_seed, config=None, progress=None):
    """All stages end to end under one master seed; returns key metrics."""
    config = config or PipelineConfig()
    run = RunDir(root)
    say = progress or (lambda msg: None)
    man = run.manifest()
    man["config"] = config.to_json()
    man["config_hash"] = config_hash(config.to_json())
    man["master_seed"] = master_seed
    with open(run.manifest_path, "w") as fh:
        json.dump(man, fh, indent=2, sort_keys=True)
        fh.write("\n")

    def derived(tag):
        return int(seed_stream(master_seed, "pipeline", tag).integers(0, 2**31))

    say("stage: gen-data")
    train = stage_gen_data(run.root, config.dataset, config.n_train,
                           derived("train-data"), force=True)
    test = stage_gen_data(run.root, config.dataset, config.n_test,
                          derived("test-data"), force=True)

    say("stage: train-repr")
    repr_out = stage_train_repr(run.root, train["dataset"], config.repr,
                                derived("repr"))

    say("stage: extract")
    tr_codes = stage_extract(run.root, repr_out["encoder"], train["dataset"],
                             config.k, tag="train_")
    te_codes = stage_extract(run.root, repr_out["encoder"], test["dataset"],
                             config.k, tag="test_")

    ds = load_dataset(train["dataset"])
    tasks = list(config.tasks) if config.tasks else ds.tasks

    say("stage: train-head")
    head_rows = []
    attn_heads = {}
    for kind in config.head_kinds:
        for task in tasks:
            for seed in config.head_seeds:
                res = stage_train_head(
                    run.root, tr_codes["codes"], train["dataset"], kind, task,
                    config.head, seed,
                    test_codes_path=te_codes["codes"],
                    test_data_path=test["dataset"])
                m = res["metrics"]
                head_rows.append([kind, task, seed, m["best_lr"],
                                  m["val_acc"], m["test_acc"]])
                if kind == "attn" and seed == config.head_seeds[0]:
                    attn_heads[task] = res["head"]
    heads_csv = run.root / "heads.csv"
    write_csv(heads_csv, ["kind", "task", "seed", "best_lr", "val_acc",
                          "test_acc"], head_rows)

    say("stage: analyze")
    nmi_out = stage_analyze_nmi(run.root, tr_codes["codes"], config.mine,
                                subset=config.mine_subset)
    attn_out = stage_analyze_attention(run.root, attn_heads, te_codes["codes"])
    sep_out = stage_analyze_separation(run.root, te_codes["codes"],
                                       n_samples=config.separation_samples)

    gran_out = None
    if config.granularity_ks:
        say("stage: ablate-granularity")
        gcfg = replace(config.repr, latent_dim=config.granularity_latent)
        grepr = stage_train_repr(run.root, train["dataset"], gcfg,
                                 derived("gran-repr"), tag="gran_")
        gran_out = stage_ablate_granularity(
            run.root, grepr["encoder"], train["dataset"], test["dataset"],
            config.granularity_ks, config.head, config.granularity_seeds,
            tasks=tasks, tag="gran_")

    say("stage: report")
    stage_report(run.root / "report", [run.root])

    return {"repr": repr_out["summary"], "heads_csv": heads_csv,
            "head_rows": head_rows, "nmi": nmi_out["summary"],
            "profiles": attn_out, "separation": sep_out["stats"],
            "granularity": gran_out}
