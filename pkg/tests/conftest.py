ACCEPTANCE_RESULTS: list[tuple[str, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance")
    for name, ok, detail in sorted(ACCEPTANCE_RESULTS, key=lambda r: int(r[0].split(".")[0])):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
