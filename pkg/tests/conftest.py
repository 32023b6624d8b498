import torch

import report

# the determinism criteria are stated for single-thread execution
torch.set_num_threads(1)


def pytest_terminal_summary(terminalreporter):
    if report.LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(report.LINES):
            terminalreporter.write_line(line)
