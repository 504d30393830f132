"""Subprocess bridge to the inference engine's CLI.

The exporter never imports the engine; it talks to `selrel explain
--logits-only`, which emits logits as CSV and per-layer activation
statistics as key=value text.
"""

import csv
import os
import shutil
import subprocess
import sys

from .formats import ExportError, parse_kv_text


def default_command() -> list:
    exe = shutil.which("selrel")
    if exe:
        return [exe]
    return [sys.executable, "-m", "selrel.cli"]


def run_probe(arch, bundle_path, clip_path, means, workdir, command=None):
    """Forward the probe clip through the engine; returns (logits, layer_stats).

    layer_stats preserves the engine's layer order (first key wins for
    divergence attribution).
    """
    command = list(command or default_command())
    stats_path = os.path.join(workdir, "layer_stats.kv")
    out_dir = os.path.join(workdir, "probe_out")
    argv = command + [
        "explain",
        "--model", str(arch),
        "--weights", str(bundle_path),
        "--clip", str(clip_path),
        "--means", ",".join(repr(float(m)) for m in means),
        "--logits-only",
        "--dump-layer-stats", stats_path,
        "--out", out_dir,
    ]
    proc = subprocess.run(argv, capture_output=True, text=True)
    if proc.returncode != 0:
        raise ExportError(
            f"engine invocation failed (exit {proc.returncode}): "
            f"{proc.stderr.strip() or proc.stdout.strip()}"
        )
    logits_path = os.path.join(out_dir, "logits_w000.csv")
    logits = {}
    with open(logits_path, newline="", encoding="utf-8") as f:
        for row in csv.DictReader(f):
            logits[int(row["class"])] = float(row["logit"])
    with open(stats_path, "r", encoding="utf-8") as f:
        stats = parse_kv_text(f.read())
    return [logits[i] for i in range(len(logits))], stats
