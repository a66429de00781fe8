import pathlib

import pytest

REPO_ROOT = pathlib.Path(__file__).resolve().parent.parent


@pytest.fixture(scope="session")
def fixtures_dir() -> pathlib.Path:
    return REPO_ROOT / "fixtures"


@pytest.fixture(scope="session")
def ssp_fixture(fixtures_dir):
    from auvnetsim.channel import SoundSpeedProfile

    return SoundSpeedProfile.from_csv(fixtures_dir / "ssp_afternoon.csv")
