"""Shared fixtures.

The end-to-end toy run trains two models from scratch and takes most of the
suite's wall time, so it is session-scoped and shared between the experiment
tests and the acceptance checks that grade its outcome.
"""

import pytest


@pytest.fixture(scope="session")
def toy_run(tmp_path_factory):
    from a3d.experiment import run_toy_experiment

    out = tmp_path_factory.mktemp("toy_run")
    return run_toy_experiment(str(out), epochs=20, seed=0)
