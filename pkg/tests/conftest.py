ACCEPTANCE = {}


def record(criterion: int, title: str, passed: bool, detail: str = ""):
    ACCEPTANCE[criterion] = (title, passed, detail)
    print(f"criterion {criterion} [{title}]: {'PASS' if passed else 'FAIL'} {detail}".rstrip())


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        title, passed, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k} [{title}]: {'PASS' if passed else 'FAIL'} {detail}".rstrip())
