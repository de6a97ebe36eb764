import sys


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Echo the acceptance suite's per-criterion lines in the final summary."""
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "CRITERION_LINES", None) if mod else None
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
