import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from deepfosls.auxiliary import analytic_aux_for  # noqa: E402
from deepfosls.loss import AnalyticFields, TrialFields  # noqa: E402
from deepfosls.nn import init_params  # noqa: E402
from deepfosls.pde import PdeProblem, identity_matrix  # noqa: E402
from deepfosls.problems import make_example1, make_example2  # noqa: E402
from deepfosls.sampling import Box, all_faces, face_patch  # noqa: E402


def pytest_addoption(parser):
    parser.addoption("--run-optional", action="store_true", default=False, help="run optional long benchmarks")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--run-optional"):
        return
    skip = pytest.mark.skip(reason="optional benchmark; pass --run-optional")
    for item in items:
        if "optional" in item.keywords:
            item.add_marker(skip)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


def exact_fields(problem, h=1e-3):
    def flux(x):
        return np.einsum("nij,nj->ni", problem.A(x), problem.exact.grad(x))

    return AnalyticFields(problem.exact.u, flux, h)


def random_trial(problem, widths=(8, 8), activation="sigmoid", seed=0, h=1e-3, scale=0.0):
    rng = np.random.default_rng(seed)
    d = problem.dim
    v = init_params([d, *widths, 1], activation, rng)
    psi = init_params([d, *widths, d], activation, rng)
    if scale:
        v.params += rng.normal(0, scale, v.n_params)
        psi.params += rng.normal(0, scale, psi.n_params)
    return TrialFields(v, psi, analytic_aux_for(problem), h)


def square_problem(f, beta=None, gamma=None):
    """Homogeneous Dirichlet problem on (-1, 1)^2 with identity diffusion."""
    box = Box([[-1.0, 1.0], [-1.0, 1.0]])
    return PdeProblem(box, identity_matrix(), f, [face_patch(box, all_faces(2), "dirichlet")], beta=beta, gamma=gamma)


@pytest.fixture(scope="session")
def ex1():
    return make_example1(2, 1)


@pytest.fixture(scope="session")
def ex2():
    return make_example2(0.05)
