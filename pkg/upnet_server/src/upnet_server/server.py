"""The prediction server: line protocol v1 over standard streams.

One request per line on stdin, one reply per line on stdout, logging
on stderr. The loop answers every parseable-or-not input with exactly
one line and never raises out of a request, so a misbehaving client
cannot take the process down. Replies carry 48 values clamped to
[0, 1], serialized with enough digits to round-trip a double.

    client: HELLO PUN 1
    server: OK PUN 1
    client: PREDICT <elev_deg> <azim_deg> <radius> <absolute-image-path>
    server: UMAP <v1> ... <v48>
        or  ERR <message>
"""

from __future__ import annotations

import sys
from pathlib import Path

from .dataio import DataError, read_ppm
from .model import load_checkpoint, predict_values

PROTOCOL = "PUN"
VERSION = 1
HELLO = f"HELLO {PROTOCOL} {VERSION}"
OK = f"OK {PROTOCOL} {VERSION}"


def _fmt(value: float) -> str:
    return format(float(value), ".17g")


def handle_line(line: str, model) -> str:
    """One reply line for one request line; never raises."""
    fields = line.split()
    if not fields:
        return "ERR empty request"
    if line.strip() == HELLO:
        return OK
    if fields[0] == "HELLO":
        return f"ERR unsupported protocol: {line.strip()!r}"
    if fields[0] != "PREDICT":
        return f"ERR unknown request {fields[0]!r}"
    if len(fields) != 5:
        return f"ERR PREDICT takes 4 arguments, got {len(fields) - 1}"
    try:
        float(fields[1]), float(fields[2]), float(fields[3])
    except ValueError:
        return "ERR viewpoint fields must be numbers"
    path = Path(fields[4])
    if not path.is_absolute():
        return "ERR image path must be absolute"
    try:
        image = read_ppm(path)
    except (OSError, DataError) as exc:
        return f"ERR cannot read image: {exc}"
    try:
        values = predict_values(model, image)
    except Exception as exc:  # a bad image must not kill the loop
        return f"ERR prediction failed: {exc}"
    if values.shape != (48,):
        return "ERR model produced a wrong-sized map"
    return "UMAP " + " ".join(_fmt(v) for v in values)


def serve(checkpoint, stdin=None, stdout=None, stderr=None) -> int:
    """Reads requests until EOF. Returns the process exit code."""
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    stderr = stderr if stderr is not None else sys.stderr
    try:
        model, kind = load_checkpoint(checkpoint)
    except Exception as exc:
        print(f"cannot load checkpoint: {exc}", file=stderr)
        return 2
    print(f"serving {kind} maps from {checkpoint}", file=stderr)
    for raw in stdin:
        line = raw.rstrip("\n")
        reply = handle_line(line, model)
        print(reply, file=stdout, flush=True)
        shown = line if len(line) <= 120 else line[:117] + "..."
        print(f"<- {shown}", file=stderr)
        print(f"-> {reply[:60]}{'...' if len(reply) > 60 else ''}", file=stderr)
    print("client closed the stream, shutting down", file=stderr)
    return 0
