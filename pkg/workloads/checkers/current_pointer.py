#!/usr/bin/env python3
"""Consistency oracle for the pointer-file workloads.

A crash state is consistent when either no CURRENT file exists yet (fresh
store, recovery starts over) or CURRENT names a file that exists and is
non-empty.  Output is kept free of scratch paths so identical verdicts
digest identically.
"""
import sys
from pathlib import Path

root = Path(sys.argv[1])
current = root / "CURRENT"
if not current.exists():
    sys.exit(0)
target = current.read_bytes().decode("latin-1").strip("\x00").strip()
if not target:
    print("CURRENT is empty")
    sys.exit(1)
resolved = root / target
if not resolved.exists() or not resolved.read_bytes():
    print(f"dangling CURRENT pointer -> {target}")
    sys.exit(1)
sys.exit(0)
