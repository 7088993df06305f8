import shutil
import sys
from pathlib import Path

import pytest

FRONTEND = Path(__file__).resolve().parents[1]
REPO = FRONTEND.parent
RUNS = REPO / "runs"

# Let the suite run straight from a checkout, installed or not.
if str(FRONTEND) not in sys.path:
    sys.path.insert(0, str(FRONTEND))


@pytest.fixture
def run_copy(tmp_path):
    """Copy a shipped reference run directory somewhere writable.

    Figures land inside the run directory they describe, and the shipped
    reference runs must stay byte-pristine.
    """

    def copy(name: str) -> Path:
        dest = tmp_path / name
        shutil.copytree(RUNS / name, dest)
        return dest

    return copy
