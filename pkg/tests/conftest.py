def pytest_runtest_logreport(report):
    """One visible pass/fail line per acceptance criterion."""
    if "test_acceptance" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    if not name.startswith("test_criterion"):
        return
    if report.when == "setup" and report.skipped:
        print(f"\n[acceptance] {name}: SKIP")
    elif report.when == "call":
        print(f"\n[acceptance] {name}: {'PASS' if report.passed else 'FAIL'}")
