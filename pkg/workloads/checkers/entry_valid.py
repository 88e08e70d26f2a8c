#!/usr/bin/env python3
"""Consistency oracle for the hash-entry workloads.

Layout: key at 0 (8 bytes), value at 64 (8 bytes), valid flag at 128
(1 byte).  When the valid flag is set, both key and value must contain
data (any non-zero byte).
"""
import json
import sys
from pathlib import Path

image = json.loads((Path(sys.argv[1]) / "mem_image.json").read_text())
cells = {int(addr): value for addr, value in image["cells"].items()}


def read(addr: int, length: int) -> bytes:
    return bytes(cells.get(addr + i, 0) for i in range(length))


if read(128, 1) == b"\x01":
    missing = [name for name, addr in (("key", 0), ("value", 64)) if not any(read(addr, 8))]
    if missing:
        print(f"valid flag set but {'/'.join(missing)} missing")
        sys.exit(1)
sys.exit(0)
