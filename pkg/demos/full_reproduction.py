"""
Full-size runs on the protein (CASP) and EEG seizure (ESR) tables
=================================================================

Trains every model with its tuned preset on the real data and writes one run
directory per (model, dataset). This takes hours on a single CPU and the
numbers vary from seed to seed; nothing here is checked automatically.

Usage::

    python demos/full_reproduction.py path/to/CASP.csv path/to/ESR.csv [out_dir]
"""

import json
import sys
from pathlib import Path

from gpuq.experiment import preset, run_experiment

casp, esr = sys.argv[1], sys.argv[2]
out = Path(sys.argv[3] if len(sys.argv) > 3 else "runs/full")

for dataset, path in (("casp", casp), ("esr", esr)):
    for model in ("dgp", "dspp", "ensemble"):
        cfg = preset(f"{model}-{dataset}", data_path=path)
        res = run_experiment(cfg, out_dir=out / f"{model}-{dataset}")
        summary = {k: v for k, v in res.report.to_dict().items() if k not in ("reliability", "metadata")}
        print(f"{model}-{dataset}:", json.dumps(summary))
