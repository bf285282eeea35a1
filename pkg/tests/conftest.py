from __future__ import annotations

# criterion number -> list of (check name, passed); filled by the acceptance suite
ACCEPTANCE: dict[int, list[tuple[str, bool]]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        checks = ACCEPTANCE[k]
        ok = all(p for _, p in checks)
        detail = ", ".join(f"{name} {'pass' if p else 'FAIL'}" for name, p in checks)
        terminalreporter.write_line(f"criterion {k:>2}: {'PASS' if ok else 'FAIL'}  ({detail})")
