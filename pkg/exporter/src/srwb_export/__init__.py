"""Checkpoint-to-SRWB conversion and verification against the engine."""

__version__ = "0.1.0"

from .export import convert_entries, export_checkpoint, load_checkpoint
from .formats import ExportError, read_srwb, write_srwb
from .namemap import MapEntry, parse_name_map
from .probe import probe_clip, write_probe
from .verify import VerifyReport, verify_export

__all__ = [
    "ExportError",
    "MapEntry",
    "VerifyReport",
    "convert_entries",
    "export_checkpoint",
    "load_checkpoint",
    "parse_name_map",
    "probe_clip",
    "read_srwb",
    "verify_export",
    "write_probe",
    "write_srwb",
]
