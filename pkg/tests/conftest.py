"""Shared pytest wiring: a summary line per acceptance criterion."""

import re

_CRITERIA = {
    1: "forward scores match brute-force path enumeration (200 instances, 1e-10)",
    2: "uniform-input closed forms log(4/3) and log(4) (1e-12)",
    3: "criterion and full-model gradients match finite differences (<1e-6 / <1e-5)",
    4: "zero-transition loss equals blank-free loss on normalized emissions (100 instances, 1e-10)",
    5: "beam search matches exhaustive decoding oracles on 50 instances (1e-8)",
    6: "toy corpus overfit: train LER < 5%, both decoders recover >= 95%",
    7: "hand-computed bigram scores exact; 5 malformed files rejected with line numbers",
    8: "repetition codec round-trips 10k words; caterpillar -> caterpil1ar",
    9: "clipped norm <= budget over 1000 collections; edit-distance examples exact",
    10: "criterion, training, and decoding bit-identical under fixed seeds",
}

_PAT = re.compile(r"test_acceptance\.py::.*test_criterion_(\d+)")

_results: dict[int, str] = {}


def pytest_runtest_logreport(report):
    m = _PAT.search(report.nodeid)
    if not m:
        return
    n = int(m.group(1))
    if report.when == "call":
        _results[n] = report.outcome
    elif report.outcome != "passed" and _results.get(n) != "failed":
        # setup/teardown error counts as a failure for the criterion
        _results[n] = "failed"


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_results):
        label = "PASS" if _results[n] == "passed" else "FAIL"
        terminalreporter.write_line(f"{label} criterion {n:2d}: {_CRITERIA.get(n, '')}")
