import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion, printed after the run."""
    try:
        from test_acceptance import ACCEPTANCE_RESULTS
    except ImportError:
        return
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for name, passed, detail in ACCEPTANCE_RESULTS:
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"{status}: {name} -- {detail}")


def synth_ecg(sample_rate: float, bpm: float, duration_s: float, seed: int = 0):
    """(true_r_times, signal): Gaussian-bump PQRST train with jittered RR,
    baseline wander and sensor noise."""
    rng = np.random.default_rng(seed)
    rr = 60.0 / bpm
    times = []
    t = 0.5
    while t < duration_s - 0.5:
        times.append(t)
        t += rr * (1 + 0.03 * rng.standard_normal())
    tt = np.arange(int(duration_s * sample_rate)) / sample_rate
    sig = np.zeros(tt.size)
    for rt in times:
        sig += 1.2 * np.exp(-0.5 * ((tt - rt) / 0.012) ** 2)
        sig += -0.2 * np.exp(-0.5 * ((tt - rt + 0.035) / 0.010) ** 2)
        sig += -0.25 * np.exp(-0.5 * ((tt - rt - 0.040) / 0.015) ** 2)
        sig += 0.3 * np.exp(-0.5 * ((tt - rt - 0.250) / 0.050) ** 2)
        sig += 0.15 * np.exp(-0.5 * ((tt - rt + 0.170) / 0.040) ** 2)
    sig += 0.02 * rng.standard_normal(tt.size)
    sig += 0.10 * np.sin(2 * np.pi * 0.3 * tt)
    return np.array(times), sig


def match_peaks(truth, detected, tolerance_s=0.05):
    """(sensitivity, precision, max timing error) with greedy 1:1 matching."""
    detected = np.asarray(detected, dtype=float)
    used = set()
    errors = []
    for t in truth:
        if detected.size == 0:
            break
        d = np.abs(detected - t)
        k = int(np.argmin(d))
        if d[k] < tolerance_s and k not in used:
            used.add(k)
            errors.append(float(d[k]))
    tp = len(used)
    sens = tp / len(truth) if len(truth) else 0.0
    prec = tp / len(detected) if len(detected) else 0.0
    return sens, prec, max(errors) if errors else float("inf")
