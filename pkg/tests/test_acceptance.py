"""The acceptance gate: one test per criterion, each printing its own
PASS/FAIL line with the measured quantities."""

import pytest

from kaclayer import acceptance


def _report(res):
    status = "PASS" if res.passed else "FAIL"
    print(f"\n{status} criterion {res.cid:2d}: {res.title} "
          f"({res.runtime:.1f}s) {res.details}")
    assert res.passed, res.details


def test_criterion_01_spontaneous_magnetization():
    _report(acceptance.criterion_1())


def test_criterion_02_legendre_duality():
    _report(acceptance.criterion_2())


def test_criterion_03_canonical_sandwich():
    _report(acceptance.criterion_3())


def test_criterion_04_local_limit():
    _report(acceptance.criterion_4())


def test_criterion_05_contraction():
    _report(acceptance.criterion_5())


def test_criterion_06_pair_oracle():
    _report(acceptance.criterion_6())


def test_criterion_07_mean_constraint():
    _report(acceptance.criterion_7())


def test_criterion_08_strip_decay():
    _report(acceptance.criterion_8())


def test_criterion_09_decomposition_excess():
    _report(acceptance.criterion_9())


def test_criterion_10_contours():
    _report(acceptance.criterion_10())


@pytest.mark.slow
def test_criterion_11_mc_correctness():
    _report(acceptance.criterion_11())


@pytest.mark.slow
def test_criterion_12_phase_signal():
    _report(acceptance.criterion_12())
