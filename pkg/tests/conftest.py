import logging
from datetime import date
from pathlib import Path

import pytest

from tapestry.config import EngineConfig, PACKAGED_ASSETS
from tapestry.facts import load_fact_db
from tapestry.flow import build_standard_callbacks, load_flow_dir
from tapestry.kg import load_kg
from tapestry.nlu import NluPipeline, RuleTables
from tapestry.topics import load_hierarchy_file

logging.getLogger("tapestry").setLevel(logging.ERROR)


@pytest.fixture(scope="session")
def assets_dir() -> Path:
    return PACKAGED_ASSETS


@pytest.fixture(scope="session")
def kg(assets_dir):
    return load_kg(assets_dir / "kg" / "snapshot.json")


@pytest.fixture(scope="session")
def rules(assets_dir):
    return RuleTables.load(assets_dir / "nlu")


@pytest.fixture(scope="session")
def hierarchy(assets_dir):
    return load_hierarchy_file(assets_dir / "topics.txt")


@pytest.fixture(scope="session")
def inventory(hierarchy):
    return set(hierarchy.topics())


@pytest.fixture(scope="session")
def nlu(rules, kg, inventory):
    return NluPipeline(rules, kg, inventory)


@pytest.fixture(scope="session")
def fact_db(assets_dir):
    return load_fact_db(assets_dir / "facts")


@pytest.fixture(scope="session")
def flow_graphs(assets_dir, kg):
    callbacks = build_standard_callbacks(kg)
    return load_flow_dir(assets_dir / "flows", callbacks.names())


@pytest.fixture
def engine_config(tmp_path):
    return EngineConfig(seed=7, today=date(2021, 6, 1), store_dir=tmp_path / "store")


@pytest.fixture
def memory_config():
    return EngineConfig(seed=7, today=date(2021, 6, 1))
