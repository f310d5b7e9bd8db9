# %% [markdown]
# End to end on a synthetic corpus, the same path the command line takes:
# write CSV inputs, validate them, run every stage, read the outputs back.

# %%
import json
import tempfile
from pathlib import Path

from curiodyn.pipeline import PipelineConfig, run, validate, write_corpus
from curiodyn.simgen import simulate_corpus

work = Path(tempfile.mkdtemp(prefix="curiodyn-"))
config_path = write_corpus(simulate_corpus(seed=2, n_groups=2, n_per_group=2, n_slices=360),
                           work / "corpus", seed=2)
print("corpus written to", config_path.parent)

# %%
cfg = PipelineConfig.load(config_path, out_dir=str(work / "out"))
report = validate(cfg)
print("errors:", report["errors"])
print("rows:", report["row_counts"])

# %%
print("exit code", run(cfg))
for p in sorted((work / "out").iterdir()):
    print(f"  {p.name:20s} {p.stat().st_size:8d} bytes")

# %%
fit = json.loads((work / "out" / "ctsem_fit.json").read_text())
print(json.dumps(fit["comparison"], indent=2))
print((work / "out" / "granger_table.csv").read_text())
