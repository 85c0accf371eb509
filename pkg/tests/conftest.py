import time

import numpy as np
import pytest

from microlam import cli
from microlam import scheme as sc
from microlam import strain as st

OMEGA = np.array(cli.DEFAULTS["omega"], dtype=float)
CRITERIA = []


def preset_matrix(name):
    return st.from_barycentric(np.array(cli.PRESETS[name]))


class FieldRuns:
    """Fields of every step, computed once per (preset, scheme) and extended on demand."""

    def __init__(self):
        self.runs = {}
        self.seconds = {}

    def get(self, preset, scheme, k):
        key = (preset, scheme)
        if key not in self.runs:
            self.runs[key] = ([sc.init(OMEGA, preset_matrix(preset))], sc.PatchCache(scheme))
        fields, cache = self.runs[key]
        t0 = time.perf_counter()
        while len(fields) <= k:
            fields.append(sc.step(fields[-1], scheme, cache=cache))
        self.seconds[key] = self.seconds.get(key, 0.0) + time.perf_counter() - t0
        return fields[: k + 1]


@pytest.fixture(scope="session")
def runs():
    return FieldRuns()


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERIA, key=lambda s: int(s.split()[1].rstrip(":").rstrip("ab"))):
            terminalreporter.write_line(line)
