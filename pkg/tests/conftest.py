import pytest


@pytest.fixture
def announce(capsys):
    """Print a line that bypasses pytest's output capture."""

    def _announce(line: str):
        with capsys.disabled():
            print(line, flush=True)

    return _announce
