import os
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

FIXTURES = Path(__file__).parent / "fixtures"
SCRIPTS = FIXTURES / "scripts"

settings.register_profile(
    "default",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
    max_examples=100,
)
settings.register_profile("thorough", parent=settings.get_profile("default"),
                          max_examples=500)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def script(name: str) -> str:
    """Executable string for a synthetic business-logic script."""
    return str(SCRIPTS / name)


@pytest.fixture
def scripts_dir() -> Path:
    return SCRIPTS
