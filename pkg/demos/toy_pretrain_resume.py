"""Pre-train the toy model, interrupt halfway, resume, and confirm the result is bit-identical."""
import tempfile
from pathlib import Path

import numpy as np

from trvmim.io.config_file import settings_from_mapping
from trvmim.io.metrics import read_metrics, without_wall
from trvmim.io.run import METRICS_FILE, checkpoint_name, run_pretrain

settings = settings_from_mapping({"seed": 0, "total_steps": 200, "ckpt_every": 50})
root = Path(tempfile.mkdtemp(prefix="trvmim-demo-"))

run_pretrain(settings, out_dir=root / "straight")
print("straight run done")

run_pretrain(settings, out_dir=root / "split", stop_at=100)
print("split run stopped at step 100, resuming")
run_pretrain(settings, out_dir=root / "split", resume=root / "split" / checkpoint_name(100))

straight = read_metrics(root / "straight" / METRICS_FILE)
losses = np.array([m["loss"] for m in straight])
for lo in range(0, 200, 50):
    print(f"steps {lo:>3}-{lo + 49:<3} mean loss {losses[lo:lo + 50].mean():+.4f}")

same_ckpt = (root / "straight" / checkpoint_name(200)).read_bytes() == \
            (root / "split" / checkpoint_name(200)).read_bytes()
same_metrics = without_wall(straight) == without_wall(read_metrics(root / "split" / METRICS_FILE))
print(f"final checkpoints identical: {same_ckpt}; metrics identical: {same_metrics}")
print("outputs kept in", root)
