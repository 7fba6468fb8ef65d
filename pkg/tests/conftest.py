import numpy as np
import pytest

from tidypsf.optics import Aperture, OpticalRecipe


@pytest.fixture
def small_recipe():
    """Cheap recipe for gradient and imaging tests."""
    return OpticalRecipe(defocus_values=np.linspace(-20.0, 20.0, 5), psf_crop=7)


@pytest.fixture
def disk7():
    return Aperture.disk(7)


@pytest.fixture
def disk23():
    return Aperture.disk(23)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def random_pupil():
    def make(aperture, rng):
        phase = rng.uniform(0.0, 2 * np.pi, size=aperture.support.shape)
        return np.where(aperture.support, np.exp(1j * phase), 0j)

    return make


# acceptance lines are collected from user_properties and echoed in the summary
_ACCEPTANCE = []


def pytest_runtest_logreport(report):
    if report.when == "call":
        _ACCEPTANCE.extend(v for k, v in report.user_properties if k == "acceptance")


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
