import sys
from pathlib import Path

import pytest

from arsg import kernels

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture(params=kernels.available_backends())
def each_backend(request):
    """Run a test once per kernel backend, restoring the default afterwards."""
    prev = kernels.backend()
    kernels.set_backend(request.param)
    yield request.param
    kernels.set_backend(prev)
