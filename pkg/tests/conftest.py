import warnings

import numpy as np
import pandas as pd
import pytest
from hypothesis import HealthCheck, settings

from reqiv import fixtures, panel, synthgen

settings.register_profile(
    "repo", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("repo")


@pytest.fixture(scope="session")
def nct_data():
    return synthgen.generate_nct()


@pytest.fixture(scope="session")
def nct_rows(nct_data):
    """Panel per rebuilt variable, with the second-request indicator attached."""
    return {
        name: panel.add_request_indicators(panel.build_panel(recs), [2])
        for name, recs in nct_data.records.items()
    }


def _with_gender(rows):
    rows = rows.copy()
    rows["gender"] = np.where(rows["female"] == 1.0, "women", "men")
    return rows


@pytest.fixture(scope="session")
def table1_full():
    return _with_gender(panel.build_panel(fixtures.table1_records()))


@pytest.fixture(scope="session")
def table1_two():
    return _with_gender(panel.build_panel(fixtures.table1_records(late_timing="second_request")))
