"""Checkpoint -> SRWB conversion with a recorded verification baseline.

Supported checkpoint containers: PyTorch files (anything torch.load can
open with weights_only=True; plain state dicts or ones nested under
'state_dict'/'model') and numpy .npz archives.
"""

import hashlib
import os
import tempfile
from collections import OrderedDict

import numpy as np

from .formats import ExportError, dump_kv_text, write_srwb
from .namemap import parse_name_map
from .primary import run_probe
from .probe import write_probe

MANIFEST_FORMAT = "srwb-export-manifest/1"


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def load_checkpoint(path) -> dict:
    """Name -> float array mapping from a torch file or an npz archive."""
    if str(path).endswith(".npz"):
        with np.load(path) as data:
            return {name: np.asarray(data[name]) for name in data.files}
    import torch

    blob = torch.load(path, map_location="cpu", weights_only=True)
    if hasattr(blob, "state_dict"):
        blob = blob.state_dict()
    if isinstance(blob, dict):
        for key in ("state_dict", "model"):
            if key in blob and isinstance(blob[key], dict):
                blob = blob[key]
                break
    if not isinstance(blob, dict):
        raise ExportError(f"{path}: checkpoint is not a parameter mapping")
    out = {}
    for name, value in blob.items():
        if hasattr(value, "detach"):
            value = value.detach().cpu().numpy()
        out[name] = np.asarray(value)
    return out


def convert_entries(checkpoint: dict, entries) -> OrderedDict:
    """Apply renames/permutations in map order; errors name the parameter."""
    converted = OrderedDict()
    for entry in entries:
        if entry.source not in checkpoint:
            raise ExportError(f"checkpoint is missing parameter {entry.source!r}")
        arr = np.asarray(checkpoint[entry.source], dtype=np.float32)
        if entry.perm is not None:
            if len(entry.perm) != arr.ndim:
                raise ExportError(
                    f"{entry.source!r}: perm has {len(entry.perm)} axes, array has {arr.ndim}"
                )
            arr = np.ascontiguousarray(arr.transpose(entry.perm))
        if entry.shape is not None and tuple(arr.shape) != entry.shape:
            raise ExportError(
                f"{entry.source!r} -> {entry.target!r}: shape {tuple(arr.shape)} "
                f"!= declared {entry.shape} after permutation"
            )
        converted[entry.target] = arr
    return converted


def export_checkpoint(
    src_path,
    map_path,
    dst_path,
    arch: str,
    means=(0.0, 0.0, 0.0),
    probe_seed: int = 7,
    manifest_path=None,
    command=None,
    workdir=None,
) -> str:
    """Write the SRWB bundle and its manifest; returns the manifest path.

    The manifest records content hashes, per-entry shapes, and the probe
    logits plus per-layer activation statistics computed by the engine on
    the freshly exported bundle.
    """
    with open(map_path, "r", encoding="utf-8") as f:
        entries = parse_name_map(f.read())
    checkpoint = load_checkpoint(src_path)
    converted = convert_entries(checkpoint, entries)
    write_srwb(dst_path, converted)

    manifest_path = manifest_path or f"{dst_path}.manifest"
    own_workdir = workdir is None
    if own_workdir:
        workdir = tempfile.mkdtemp(prefix="srwb-export-")
    probe_path = os.path.join(workdir, "probe.srvl")
    write_probe(probe_path, probe_seed)
    logits, stats = run_probe(arch, dst_path, probe_path, means, workdir, command)

    manifest = OrderedDict()
    manifest["format"] = MANIFEST_FORMAT
    manifest["arch"] = arch
    manifest["source_sha256"] = _sha256(src_path)
    manifest["map_sha256"] = _sha256(map_path)
    manifest["bundle_sha256"] = _sha256(dst_path)
    manifest["probe_seed"] = str(probe_seed)
    manifest["probe_sha256"] = _sha256(probe_path)
    manifest["means"] = ",".join(repr(float(m)) for m in means)
    manifest["class_count"] = str(len(logits))
    for entry in entries:
        shape = ",".join(map(str, converted[entry.target].shape))
        manifest[f"entry.{entry.target}.shape"] = shape
        if entry.perm is not None:
            manifest[f"entry.{entry.target}.perm"] = ",".join(map(str, entry.perm))
    for i, value in enumerate(logits):
        manifest[f"logit.{i}"] = repr(value)
    manifest.update(stats)
    with open(manifest_path, "w", encoding="utf-8") as f:
        f.write(dump_kv_text(manifest))
    return manifest_path
