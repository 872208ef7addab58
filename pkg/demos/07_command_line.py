"""
Command line walkthrough
========================

The oradapt command chains gen -> pretrain -> adapt -> eval through files in
an output directory. Every command writes a manifest that can be replayed
with ``oradapt rerun``. Here the same entry point is called in-process on a
small configuration.
"""

import json
import tempfile
from pathlib import Path

from oradapt.cli import main, read_metrics

SMALL = """
[data]
num_classes = 4
video_length = 400
n_source_videos = 2
n_target_videos = 4
[train]
pretrain_epochs = 3
adapt_epochs = 3
steps_per_epoch = 10
"""

with tempfile.TemporaryDirectory() as tmp:
    out = Path(tmp) / "run"
    ini = Path(tmp) / "small.ini"
    ini.write_text(SMALL)
    for cmd in ("gen", "pretrain", "adapt", "eval"):
        assert main([cmd, "--config", str(ini), "--out-dir", str(out)]) == 0

    print(sorted(p.relative_to(out).as_posix() for p in out.rglob("*") if p.is_file())[:12])
    summary = read_metrics(out / "metrics" / "eval.jsonl")[-1]
    print("eval summary:", {k: summary[k] for k in ("balanced_clip_accuracy", "mAP", "seed")})

    manifest = json.loads((out / "manifest_adapt.json").read_text())
    print("manifest:", {k: manifest[k] for k in ("command", "seeds", "args")})
    before = (out / "metrics" / "adapt.jsonl").read_bytes()
    assert main(["rerun", str(out / "manifest_adapt.json")]) == 0
    print("rerun bit-exact:", before == (out / "metrics" / "adapt.jsonl").read_bytes())
