import support


def pytest_terminal_summary(terminalreporter):
    if not support.ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(support.ACCEPTANCE):
        title, ok, detail = support.ACCEPTANCE[k]
        terminalreporter.write_line(f"[{k:2d}] {'PASS' if ok else 'FAIL'} {title}: {detail}")
