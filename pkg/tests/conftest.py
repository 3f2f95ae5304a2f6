import pytest

from tidyhet.knowledge import load_ontology
from tidyhet.world import load_scene, shipped_scene_paths


@pytest.fixture(scope="session")
def kb():
    return load_ontology()


@pytest.fixture(scope="session")
def scenes(kb):
    return {p.stem: load_scene(p, kb) for p in shipped_scene_paths()}


@pytest.fixture(scope="session")
def demo_scene(scenes):
    return scenes["demo_two_room"]


# Acceptance verdicts, printed once at the end of the run.
ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        name, ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n:2d}. {name}: {detail}")
