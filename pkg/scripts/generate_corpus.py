#!/usr/bin/env python3
"""Regenerate the bundled scenario corpus under scenarios/.

Usage: python scripts/generate_corpus.py [OUT_DIR]
"""

import sys
from pathlib import Path

from hybridplan.scenario import generate_corpus


def main() -> int:
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("scenarios")
    written = generate_corpus(out)
    print(f"wrote {len(written)} scenario files under {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
