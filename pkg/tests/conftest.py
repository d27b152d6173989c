import numpy as np
import pytest

from kaclayer import lattice, meanfield


@pytest.fixture(scope="session")
def eq05():
    """Equilibrium data at eps = 0.05 (shared; solving is cheap but the
    contraction grid sup is not)."""
    report = meanfield.solve_magnetization(0.05)
    contraction = meanfield.contraction_data(0.05, m_eps=report.m_eps)
    return report, contraction


@pytest.fixture(scope="session")
def kernel16():
    return lattice.build_kernel(2.0**-4)


@pytest.fixture(scope="session")
def kernel64():
    return lattice.build_kernel(2.0**-6)
