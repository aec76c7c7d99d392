"""Shared pytest wiring.

The only piece here is the acceptance-gate summary: every test named
``test_criterion_<n>_*`` stands for one acceptance criterion, and after the
run we print a single PASS/FAIL line per criterion so the gate can be read
off the terminal directly.
"""

import re

_LABELS = {
    1: "oracle recovery: S/T/X pointwise, MO/R within 0.02 at 1e5 draws",
    2: "estimation quality: every suite estimator RMSE <= 0.25 on linear_tau",
    3: "ATE concordance: IPW/REG/AIPW/MATCH within 2 SEs and 0.03 of truth",
    4: "sensitivity exactness: matches 2^S brute force, classical p at gamma=1",
    5: "unbalanced arms: X-learner RMSE <= T-learner in >= 80% of reps",
    6: "workflow hygiene: validation rows untouched, clusters never split",
    7: "CLI determinism: byte-identical outputs at --threads 1 vs 8",
    8: "bootstrap calibration: 95% CI covers truth in 95% +/- 3% of sims",
}

_CRITERION = re.compile(r"test_criterion_(\d+)")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    seen = {}
    for outcome in ("passed", "failed", "error", "skipped"):
        for report in terminalreporter.stats.get(outcome, []):
            match = _CRITERION.search(getattr(report, "nodeid", ""))
            if match is None:
                continue
            n = int(match.group(1))
            worst = {"passed": 0, "skipped": 1, "failed": 2, "error": 2}[outcome]
            seen[n] = max(seen.get(n, 0), worst)
    if not seen:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(_LABELS):
        status = {0: "PASS", 1: "SKIP", 2: "FAIL"}.get(seen.get(n), "NOT RUN")
        terminalreporter.write_line(f"ACCEPTANCE {n} [{status}] {_LABELS[n]}")
