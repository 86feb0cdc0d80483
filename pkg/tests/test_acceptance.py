"""One test per acceptance criterion; 1-15 read the shared ``verify all`` run."""

import subprocess
import sys
import time


def _check(all_suite, crit):
    rows = all_suite.report.results[crit]
    failed = [r.line() for r in rows if r.status != "PASS"]
    assert rows and not failed, "\n".join(failed)


def test_criterion_01_backward_flow_exactness(all_suite):
    _check(all_suite, 1)


def test_criterion_02_backward_lipschitz_bound(all_suite):
    _check(all_suite, 2)


def test_criterion_03_jacobian_indicator(all_suite):
    _check(all_suite, 3)


def test_criterion_04_jacobian_sup_bound(all_suite):
    _check(all_suite, 4)


def test_criterion_05_strong_jacobian_convergence(all_suite):
    _check(all_suite, 5)


def test_criterion_06_good_and_bad_viscosity_solutions(all_suite):
    _check(all_suite, 6)


def test_criterion_07_commutator_rate(all_suite):
    _check(all_suite, 7)


def test_criterion_08_duality_cancellation(all_suite):
    _check(all_suite, 8)


def test_criterion_09_sudden_l1_example(all_suite):
    _check(all_suite, 9)


def test_criterion_10_wasserstein_contraction(all_suite):
    _check(all_suite, 10)


def test_criterion_11_expansive_good_solution(all_suite):
    _check(all_suite, 11)


def test_criterion_12_compressibility_ratio(all_suite):
    _check(all_suite, 12)


def test_criterion_13_envelope_characterization(all_suite):
    _check(all_suite, 13)


def test_criterion_14_stochastic_moments(all_suite):
    _check(all_suite, 14)


def test_criterion_15_fokker_planck(all_suite):
    _check(all_suite, 15)


def test_criterion_16_determinism_and_budget(all_suite, tmp_path):
    report = tmp_path / "report.txt"
    start = time.perf_counter()
    proc = subprocess.run([sys.executable, "-m", "osllab", "verify", "all", "--report", str(report)],
                          capture_output=True)
    seconds = time.perf_counter() - start
    assert proc.returncode == 0, proc.stdout.decode()[-2000:]
    assert proc.stdout == all_suite.text.encode()
    assert report.read_bytes() == all_suite.text.encode()
    assert all_suite.seconds <= 600
    assert seconds <= 600
