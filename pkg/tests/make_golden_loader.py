"""Import scripts/make_golden.py without making scripts/ a package."""

import importlib.util
from pathlib import Path

_PATH = Path(__file__).resolve().parent.parent / "scripts" / "make_golden.py"


def build_golden() -> bytes:
    spec = importlib.util.spec_from_file_location("make_golden", _PATH)
    mod = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(mod)
    return mod.build()
