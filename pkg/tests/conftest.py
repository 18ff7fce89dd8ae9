from __future__ import annotations

import sys
from pathlib import Path

# make tests/oracles.py importable as a plain module from any rootdir
sys.path.insert(0, str(Path(__file__).resolve().parent))
