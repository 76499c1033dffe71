"""
Training a tiny tracker end to end
==================================

A telescope-sized run: a handful of 32x32 sweeps and a few epochs per stage,
just to watch the staged schedule execute and the drift metrics move. Takes
about a minute on one CPU core. Real configurations live in
dualtrack.config.load_preset("desk") and ("paper").
"""

from pathlib import Path

import numpy as np

from dualtrack import data, metrics, networks, phantom, training

out = Path(__file__).parent / "out"
root = out / "tiny_data"
run_dir = out / "tiny_run"

# ---- a small dataset (reused on rerun) --------------------------------------
dcfg = phantom.DatasetConfig(n_train=6, n_val=2, n_test=3, phantom_size=64,
                             num_frames=32, width=32, height=32,
                             length_mm=18.0, noise_level=0.02, seed=11)
if not (root / "index.json").exists():
    phantom.generate_dataset(root, dcfg)
    print("generated", root)
ds = data.SweepDataset(root)
print("splits:", {s: len(ds.ids(s)) for s in ("train", "val", "test")})

# ---- staged training: CNN, pooling, context branch, fusion -------------------
tcfg = training.desk_training_config(
    epochs_local_cnn=4, epochs_local_pool=2, epochs_global=2, epochs_fusion=4,
    batch_size=3, fusion_batch_size=2, window=8, global_count=6,
    global_resolution=(16, 16), global_stride=8, val_interval=2, seed=3)

training.set_determinism(tcfg.seed)
model = networks.build_model(networks.desk_model_config("dual"))
print(f"dual model, {networks.count_parameters(model):,} parameters")
training.train_model(model, ds, tcfg, run_dir)
print("run artifacts:", sorted(p.name for p in run_dir.iterdir()))

# ---- did it learn anything? --------------------------------------------------
best = training.load_model_for_eval(run_dir, networks.desk_model_config("dual"))
rows = []
for sw in ds.sweeps("test"):
    h, w = sw.frame_shape
    zero = metrics.evaluate_trajectories(
        sw.poses, training.zero_motion_trajectory(sw.num_frames), sw.cal, w, h)
    got = metrics.evaluate_trajectories(
        sw.poses, training.predict_trajectory(best, sw, tcfg), sw.cal, w, h)
    rows.append((sw.id, zero.gpe_mm, got.gpe_mm))
    print(f"{sw.id:14s} zero-motion GPE {zero.gpe_mm:6.3f} mm -> model {got.gpe_mm:6.3f} mm")
print(f"mean: {np.mean([r[1] for r in rows]):.3f} -> {np.mean([r[2] for r in rows]):.3f} mm")
print("(tiny on purpose; the desk preset trains far past this)")
