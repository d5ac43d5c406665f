# %% [markdown]
# # Grid sweeps and reports
#
# A grid file is an experiment config plus `grid.<key> = v1, v2` axes and a
# repeat count. Results are one JSON line per run, sorted by config hash and
# seed, so any degree of parallelism writes the same file.

# %%
import tempfile
from pathlib import Path

from streamcl import experiment

GRID = """
experiment.instance = C
data.length = 1200
phases.warm_up = 200
phases.update = 800
phases.evaluation = 200
model.encoder = 16, 8
train.epochs_a_1 = 20
train.epochs_a_2 = 10
grid.buffer.novelty_capacity = 50, 100, 200
grid.repeats = 2
"""
out_dir = Path(tempfile.mkdtemp())
grid = experiment.GridConfig.from_text(GRID)
results = experiment.run_grid(grid, out_dir / "grid.jsonl", parallel=2)
for r in results:
    print(r["params"]["buffer.novelty_capacity"], r["seed"], r["metrics"]["update_count_ae"])

# %%
rep = experiment.report(out_dir / "grid.jsonl", out_dir / "report")
print(experiment.format_summary(rep["summary"]))
print(sorted(p.name for p in (out_dir / "report").iterdir()))
