# The whole flow at desk scale: generate, compress, train, restore,
# reconstruct and evaluate, with every intermediate kept under ./desk_run.
#
# Same thing from the shell:  holojpeg pipeline --desk-scale --out desk_run
# Rerunning skips every stage whose inputs and settings are unchanged.

import json
from pathlib import Path

from holojpeg.pipeline import ExperimentConfig, read_report, run_pipeline

cfg = ExperimentConfig(desk_scale=True, distances=(0.3,), out="desk_run")
run = run_pipeline(cfg)

for row in read_report(run.root / "report.csv"):
    print(row)

manifest = json.loads(Path("desk_run/manifest.json").read_text())
print(len(manifest["hashes"]), "files hashed; stage timings:")
for name, stage in manifest["stages"].items():
    print(f"  {name:22s} {stage['seconds']:8.1f} s")
