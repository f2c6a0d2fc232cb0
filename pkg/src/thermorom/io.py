"""Binary container used for checkpoints, POD bases and trajectories.

Layout: one line of compact JSON (the header, terminated by ``\\n``) followed by
the raw little-endian float64 payload. The header's ``"arrays"`` entry lists
``{"name", "shape"}`` for each array in payload order, so a reader can map the
payload without scanning it.
"""

from __future__ import annotations

import json
import os
from typing import Iterable

import numpy as np

FORMAT_NAME = "thermorom-container"
FORMAT_VERSION = 1

_F8 = np.dtype("<f8")


class FormatError(ValueError):
    """The file is not a valid container or does not match its header."""


def write_container(path, header: dict, arrays: Iterable[tuple[str, np.ndarray]]) -> None:
    arrays = [(name, np.ascontiguousarray(a, dtype=_F8)) for name, a in arrays]
    head = dict(header)
    head["format"] = FORMAT_NAME
    head["format_version"] = FORMAT_VERSION
    head["arrays"] = [{"name": n, "shape": list(a.shape)} for n, a in arrays]
    line = json.dumps(head, sort_keys=True, separators=(",", ":"))
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(line.encode("utf-8") + b"\n")
        for _, a in arrays:
            fh.write(a.tobytes(order="C"))
    os.replace(tmp, path)


def read_header(path) -> tuple[dict, int]:
    """Return the parsed header and the byte offset where the payload starts."""
    with open(path, "rb") as fh:
        line = fh.readline()
    try:
        head = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: header is not valid JSON ({exc})") from None
    if head.get("format") != FORMAT_NAME:
        raise FormatError(f"{path}: not a {FORMAT_NAME} file")
    if head.get("format_version") != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format version {head.get('format_version')}")
    return head, len(line)


def read_container(path) -> tuple[dict, dict[str, np.ndarray]]:
    head, offset = read_header(path)
    expected = sum(int(np.prod(a["shape"], dtype=np.int64)) for a in head["arrays"])
    payload = np.fromfile(path, dtype=_F8, offset=offset)
    if payload.size != expected:
        raise FormatError(
            f"{path}: payload holds {payload.size} floats, header declares {expected}"
        )
    out = {}
    pos = 0
    for spec in head["arrays"]:
        n = int(np.prod(spec["shape"], dtype=np.int64))
        out[spec["name"]] = payload[pos:pos + n].reshape(spec["shape"]).astype(np.float64)
        pos += n
    return head, out
