"""One test per acceptance criterion; each prints its PASS/FAIL line."""

import pytest

from orbiqe import acceptance as A


def _run(check, capsys):
    res = check()
    with capsys.disabled():
        print("\n" + res.line())
    assert res.passed, res.line()


def test_01_weyl_exact_backends(capsys):
    _run(A.check_weyl_exact, capsys)


def test_02_pointwise_weyl_at_cone_point(capsys):
    _run(A.check_pointwise_cone, capsys)


def test_03_local_weyl_law(capsys):
    _run(A.check_local_weyl, capsys)


@pytest.mark.slow
def test_04_finite_element_backend(capsys):
    _run(A.check_fem, capsys)


@pytest.mark.slow
def test_05_quantum_ergodicity_positive(capsys):
    _run(A.check_qe_positive, capsys)


def test_06_quantum_ergodicity_negative_control(capsys):
    _run(A.check_qe_negative, capsys)


def test_07_operator_average_defect(capsys):
    _run(A.check_defect, capsys)


def test_08_egorov_phase(capsys):
    _run(A.check_egorov, capsys)


@pytest.mark.slow
def test_09_classical_ergodicity(capsys):
    _run(A.check_classical, capsys)


def test_10_canonical_trace(capsys):
    _run(A.check_canonical_trace, capsys)


def test_11_zeta_residue(capsys):
    _run(A.check_zeta, capsys)
