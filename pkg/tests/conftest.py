import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

# Acceptance criteria -> their test nodes; the terminal summary prints one
# PASS/FAIL line per criterion when the acceptance module ran.
ACCEPTANCE_CRITERIA = {
    "TestFixtureRegression::test_demo_journey_recovery_refuse_and_restock":
        "demo fixture regression: recovery 0.9706, zero purchase lines, "
        "on_hand +198, < 5 s",
    "TestCarbonPlausibility::test_demo_fixture_band_with_shipped_factors":
        "carbon plausibility: fixture total in [1,000, 10,000] kg CO2e",
    "TestCarbonPlausibility::test_linearity_and_oracle_sum_on_100_random_fixtures":
        "carbon linearity + oracle-sum (1e-9 relative, 100 random fixtures)",
    "TestSurveyArithmetic::test_improvement_ratios_reproduce_published_values":
        "survey arithmetic: improvement ratios 0.88/0.82/0.78/0.84/0.86",
    "TestSurveyArithmetic::test_selection_shares_to_one_decimal":
        "survey arithmetic: selection shares 85.7/71.4/64.3",
    "TestLedgerProperties::test_replay_determinism_and_conservation_200_seeds":
        "ledger: replay determinism + conservation, 10,000 events x 200 seeds",
    "TestLedgerProperties::test_injected_gap_detected_with_sequence_number":
        "ledger: injected gap detected with offending sequence",
    "TestLedgerProperties::test_crash_after_ack_preserves_event":
        "ledger: crash-after-ack recovery preserves the acknowledged event",
    "TestPermissionMatrix::test_exhaustive_edge_times_role_behaviour":
        "permission matrix: exhaustive edge x role behaviour",
    "TestPermissionMatrix::test_matrix_table_default_deny_over_all_pairs":
        "permission matrix: default deny over all undeclared pairs",
    "TestPermissionMatrix::test_incomplete_dispositions_block_reconcile":
        "permission matrix: incomplete dispositions block reconcile",
    "TestMetricOracleEquivalence::test_100_randomized_projects_match_brute_force":
        "metric-oracle equivalence on 100 randomized reconciled projects",
    "TestMaterialsRanking::test_top1_matches_exhaustive_argmax_for_25_random_queries":
        "materials ranking: top-1 argmax + filter soundness, 25 queries",
}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    outcomes = {}
    for status in ("passed", "failed", "error"):
        for report in terminalreporter.stats.get(status, []):
            nodeid = getattr(report, "nodeid", "")
            if "test_acceptance.py::" in nodeid:
                key = nodeid.split("::", 1)[1]
                outcomes[key] = "PASS" if status == "passed" else "FAIL"
    if not outcomes:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for key, label in ACCEPTANCE_CRITERIA.items():
        if key in outcomes:
            terminalreporter.write_line(f"[{outcomes[key]}] {label}")
