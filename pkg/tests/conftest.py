import numpy as np
import pytest

from candiff import denoiser as dn
from candiff import synthtrack as st
from candiff.datamodel import VehicleParams


@pytest.fixture(scope="session")
def track():
    return st.make_track(seed=3, T=2048)


@pytest.fixture(scope="session")
def vehicle():
    return VehicleParams(mass=1600.0, cwa=0.7, wheel_perimeter=2.0, vehicle_id="v00")


@pytest.fixture(scope="session")
def clean_lap(track, vehicle):
    return st.simulate_lap(track, vehicle, st.DriverParams(), seed=0)


@pytest.fixture(scope="session")
def small_dataset():
    return st.make_dataset(st.SynthConfig(n_vehicles=2, laps_per_vehicle=2, T=512), seed=5)


@pytest.fixture
def tiny_config():
    return dn.ModelConfig(residual_blocks=2, channels=8, w=64, d_t=8, t_hidden=16, d_state=4)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance verdicts, printed once at the end of the run
ACCEPTANCE: dict[str, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k)):
        terminalreporter.write_line(ACCEPTANCE[key])
