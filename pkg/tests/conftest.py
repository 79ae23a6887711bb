from pathlib import Path

import pytest

from hybrid_eye.scene import Scene, write_reference_scene

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def reference_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("reference")
    write_reference_scene(out)
    return out


@pytest.fixture(scope="session")
def reference_config(reference_dir):
    return reference_dir / "scene.json"


@pytest.fixture(scope="session")
def reference_scene(reference_config):
    return Scene.load(reference_config)


# criterion number -> verdict line, filled in by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
