"""Layer-name maps: ordered `source -> target` parameter renames with
optional axis permutations and declared shapes.

File format, one entry per line (comments with `#`):

    features.0.weight -> conv1.weight perm=0,1,2,3,4 shape=64,3,3,3,3
    features.0.bias   -> conv1.bias

Entries are written in the target architecture's parameter order; the
bundle inherits that order. Source frameworks disagree on filter axis
order, so permutations are declared explicitly, never guessed.
"""

from dataclasses import dataclass

from .formats import ExportError


@dataclass(frozen=True)
class MapEntry:
    source: str
    target: str
    perm: tuple | None = None
    shape: tuple | None = None


def parse_name_map(text: str) -> list:
    entries = []
    targets = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "->" not in line:
            raise ExportError(f"line {lineno}: expected 'source -> target', got {line!r}")
        source, rest = (part.strip() for part in line.split("->", 1))
        tokens = rest.split()
        if not source or not tokens:
            raise ExportError(f"line {lineno}: missing source or target name")
        target = tokens[0]
        perm = None
        shape = None
        for token in tokens[1:]:
            if token.startswith("perm="):
                perm = _int_tuple(token[5:], lineno)
                if sorted(perm) != list(range(len(perm))):
                    raise ExportError(f"line {lineno}: perm={token[5:]} is not a permutation")
            elif token.startswith("shape="):
                shape = _int_tuple(token[6:], lineno)
            else:
                raise ExportError(f"line {lineno}: unknown token {token!r}")
        if target in targets:
            raise ExportError(f"line {lineno}: duplicate target name {target!r}")
        targets.add(target)
        entries.append(MapEntry(source, target, perm, shape))
    if not entries:
        raise ExportError("name map is empty")
    return entries


def _int_tuple(value: str, lineno: int) -> tuple:
    try:
        return tuple(int(p) for p in value.split(","))
    except ValueError as exc:
        raise ExportError(f"line {lineno}: {exc}") from exc
