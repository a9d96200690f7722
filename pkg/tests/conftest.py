import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from bifkit.cli import run  # noqa: E402


class RunCache:
    """Executes each RunSpec once per session so dependent scenarios can restart from it."""

    def __init__(self, root: Path):
        self.root = root
        self._done = {}

    def get(self, spec):
        key = spec["id"]
        if key not in self._done:
            self._done[key] = run(spec, self.root)
        return self._done[key]


@pytest.fixture(scope="session")
def runs(tmp_path_factory):
    return RunCache(tmp_path_factory.mktemp("runs"))
