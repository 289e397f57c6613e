import numpy as np
import pytest

from csf_intrinsic.synth import SceneSpec, generate_scene


def three_color_scene(gammas, direct=(4.0, 2.0, 1.0), ambient=(0.2, 0.2, 0.2), size=60, seed=0):
    """Stripes of three colors; each stripe is cut into bands of the given gammas."""
    colors = np.array([[0.8, 0.3, 0.2], [0.2, 0.6, 0.3], [0.3, 0.3, 0.9]])
    h = w = size
    labels = np.minimum((np.arange(w) * 3) // w, 2)[None, :].repeat(h, axis=0)
    g = np.asarray(gammas, float)
    band = np.minimum((np.arange(h) * len(g)) // h, len(g) - 1)
    gamma = g[band][:, None].repeat(w, axis=1)
    direct, ambient = np.asarray(direct), np.asarray(ambient)
    raw = colors[labels] * (gamma[..., None] * direct + ambient)
    return raw / raw.max(), labels, gamma


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def stripe_scene():
    spec = SceneSpec(height=64, width=64, n_colors=4, layout="stripes", direct=(3.5, 2.5, 1.5),
                     ambient=(0.6, 0.5, 0.5), gamma_range=(0.8, 1.0), shading="smooth",
                     shadows=[{"type": "halfplane", "angle": 90.0, "offset": 0.05, "softness": 0.0}])
    return generate_scene(spec, seed=3)


# --- acceptance report ----------------------------------------------------------

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, text): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or not (rep.when == "call" or rep.skipped or rep.failed):
        return
    status = "PASS" if rep.passed else "SKIP" if rep.skipped else "FAIL"
    if rep.when != "call" and status == "PASS":
        return
    number, text = mark.args
    _criteria[number] = (status, text, dict(item.user_properties).get("measured", ""))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        status, text, value = _criteria[number]
        line = f"criterion {number:>2} {status}: {text}"
        terminalreporter.write_line(line + (f" [{value}]" if value else ""))
