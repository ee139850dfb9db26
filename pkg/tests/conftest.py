import json
from importlib import resources

import numpy as np
import pytest
from jsonschema import Draft202012Validator
from referencing import Registry, Resource

from spherepeft.config import RunConfig
from spherepeft.toy_model import make_pretrained, synth_pairs

ACCEPTANCE_LINES = []


def record_criterion(number: int, title: str, passed: bool, detail: str) -> None:
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2}: {title} -- {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)


@pytest.fixture
def criterion():
    return record_criterion


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def toy_cfg():
    return RunConfig()


@pytest.fixture
def toy_stack(toy_cfg):
    return make_pretrained(toy_cfg, toy_cfg.seed)


@pytest.fixture
def toy_batch(toy_cfg):
    return synth_pairs(toy_cfg, toy_cfg.seed, 16)


@pytest.fixture(scope="session")
def schemas():
    root = resources.files("spherepeft") / "schemas"
    return {p.name[:-5]: json.loads(p.read_text()) for p in root.iterdir() if p.name.endswith(".json")}


@pytest.fixture(scope="session")
def validate(schemas):
    registry = Registry().with_resources(
        (schema["$id"], Resource.from_contents(schema)) for schema in schemas.values()
    )

    def check(payload: dict, name: str) -> None:
        Draft202012Validator(schemas[name], registry=registry).validate(payload)

    return check
