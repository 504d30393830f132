"""Re-verify an exported bundle against its manifest.

Recomputes the probe logits through the engine (subprocess) and reports
the maximum relative deviation; on failure the per-layer activation
statistics pinpoint the first diverging layer.
"""

import os
import tempfile
from dataclasses import dataclass, field

from .export import _sha256
from .formats import ExportError, parse_kv_text
from .primary import run_probe
from .probe import write_probe

LOGIT_FAIL_DEVIATION = 1e-3
STAT_TOLERANCE = 1e-4


@dataclass
class VerifyReport:
    passed: bool
    max_deviation: float
    diverging_layer: str | None = None
    lines: list = field(default_factory=list)

    def text(self) -> str:
        return "\n".join(self.lines) + "\n"


def _relative(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-12)


def verify_export(bundle_path, manifest_path, command=None, workdir=None) -> VerifyReport:
    with open(manifest_path, "r", encoding="utf-8") as f:
        manifest = parse_kv_text(f.read())
    if not manifest:
        raise ExportError(f"{manifest_path}: empty manifest")
    for key in ("arch", "probe_seed", "means", "class_count"):
        if key not in manifest:
            raise ExportError(f"{manifest_path}: missing {key!r}")

    if workdir is None:
        workdir = tempfile.mkdtemp(prefix="srwb-verify-")
    probe_path = os.path.join(workdir, "probe.srvl")
    write_probe(probe_path, int(manifest["probe_seed"]))
    if "probe_sha256" in manifest and _sha256(probe_path) != manifest["probe_sha256"]:
        raise ExportError("regenerated probe clip does not match the manifest hash")

    means = tuple(float(x) for x in manifest["means"].split(","))
    logits, stats = run_probe(manifest["arch"], bundle_path, probe_path, means, workdir, command)

    n = int(manifest["class_count"])
    if len(logits) != n:
        raise ExportError(f"engine produced {len(logits)} logits, manifest says {n}")
    max_dev = max(_relative(logits[i], float(manifest[f"logit.{i}"])) for i in range(n))

    lines = [f"bundle={bundle_path}", f"arch={manifest['arch']}",
             f"max_logit_relative_deviation={max_dev:.3e}"]
    if "bundle_sha256" in manifest:
        same = _sha256(bundle_path) == manifest["bundle_sha256"]
        lines.append(f"bundle_hash_matches_manifest={'yes' if same else 'no'}")

    if max_dev <= LOGIT_FAIL_DEVIATION:
        lines.append("verdict=pass")
        return VerifyReport(True, max_dev, None, lines)

    diverging = _first_diverging_layer(manifest, stats)
    lines.append(f"first_diverging_layer={diverging or 'unknown'}")
    lines.append("verdict=fail")
    return VerifyReport(False, max_dev, diverging, lines)


def _first_diverging_layer(manifest: dict, stats: dict) -> str | None:
    """Walk layer.* statistics in engine order; first layer whose recorded
    statistics drift beyond tolerance is the culprit."""
    for key, recorded in manifest.items():
        if not key.startswith("layer.") or not key.endswith(
            (".mean", ".std", ".min", ".max")
        ):
            continue
        current = stats.get(key)
        if current is None:
            return key.split(".")[1]
        if _relative(float(current), float(recorded)) > STAT_TOLERANCE:
            return key.split(".")[1]
    return None
