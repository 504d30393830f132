"""Line-oriented ``key=value`` text records.

One record per line for sidecars/config/manifests; architecture files use
the same token grammar with a leading bare word per line. Blank lines and
``#`` comments are ignored everywhere.
"""

from .exceptions import InputError


def parse_kv_line(line: str) -> dict:
    """Parse ``key=value`` tokens from one line (no leading bare word)."""
    fields = {}
    for token in line.split():
        if "=" not in token:
            raise InputError(f"expected key=value token, got {token!r}")
        key, value = token.split("=", 1)
        if not key:
            raise InputError(f"empty key in token {token!r}")
        if key in fields:
            raise InputError(f"duplicate key {key!r}")
        fields[key] = value
    return fields


def parse_kv_text(text: str) -> dict:
    """Parse a whole document of one ``key=value`` pair per line."""
    fields = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"line {lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise InputError(f"line {lineno}: empty key")
        if key in fields:
            raise InputError(f"line {lineno}: duplicate key {key!r}")
        fields[key] = value.strip()
    return fields


def dump_kv_text(fields: dict) -> str:
    lines = []
    for key, value in fields.items():
        key = str(key)
        value = str(value)
        if "=" in key or any(c.isspace() for c in key):
            raise InputError(f"key {key!r} not representable in kv text")
        if "\n" in value:
            raise InputError(f"value for {key!r} contains a newline")
        lines.append(f"{key}={value}")
    return "\n".join(lines) + "\n"


def read_kv_file(path) -> dict:
    with open(path, "r", encoding="utf-8") as f:
        return parse_kv_text(f.read())


def write_kv_file(path, fields: dict) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(dump_kv_text(fields))


def parse_int_tuple(value: str, n: int, what: str) -> tuple:
    parts = value.split(",")
    if len(parts) != n:
        raise InputError(f"{what} needs {n} comma-separated integers, got {value!r}")
    try:
        return tuple(int(p) for p in parts)
    except ValueError as exc:
        raise InputError(f"{what}: {exc}") from exc


def parse_float_tuple(value: str, n: int, what: str) -> tuple:
    parts = value.split(",")
    if len(parts) != n:
        raise InputError(f"{what} needs {n} comma-separated numbers, got {value!r}")
    try:
        return tuple(float(p) for p in parts)
    except ValueError as exc:
        raise InputError(f"{what}: {exc}") from exc
