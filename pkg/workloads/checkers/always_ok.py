#!/usr/bin/env python3
"""Oracle that accepts every crash state; useful for smoke runs."""
import sys

sys.exit(0)
