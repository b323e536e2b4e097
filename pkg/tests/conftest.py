"""Shared pytest wiring: a one-line verdict per acceptance check."""

_ACCEPTANCE = [
    ("test_01_unit_rates_match_classical_pdhg",
     "criterion 01  unit rates reduce to classical PDHG"),
    ("test_02_ergodic_gap_bound",
     "criterion 02  ergodic duality-gap bound"),
    ("test_03_rate_robustness_ordering",
     "criterion 03  mixed-rate robustness ordering"),
    ("test_04_convergence_rate_slopes",
     "criterion 04  ergodic convergence-rate slopes"),
    ("test_05_sliding_suboptimality_certificate",
     "criterion 05  sliding suboptimality certificate"),
    ("test_06_tree_operator_algebra",
     "criterion 06  hierarchical operator algebra"),
    ("test_07_similarity_aware_penalties_order",
     "criterion 07  similarity-aware penalty ordering"),
    ("test_08_communication_count_law",
     "criterion 08  communication count and amortized cost"),
    ("test_09_simulated_equals_monolithic",
     "criterion 09  simulated equals monolithic"),
    ("test_10_warm_start_distance_bound",
     "criterion 10  warm-start distance bound"),
]


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    outcome = {}
    for key, verdict in (("passed", "PASS"), ("failed", "FAIL"),
                         ("error", "FAIL"), ("skipped", "SKIP")):
        for report in terminalreporter.stats.get(key, ()):
            nodeid = getattr(report, "nodeid", "")
            if "test_acceptance.py" not in nodeid:
                continue
            name = nodeid.split("::")[-1]
            if verdict == "FAIL" or name not in outcome:
                outcome[name] = verdict
    if not outcome:
        return
    terminalreporter.section("acceptance criteria")
    for name, label in _ACCEPTANCE:
        if name in outcome:
            terminalreporter.write_line("%s: %s" % (label, outcome[name]))
