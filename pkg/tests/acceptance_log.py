"""Collects one PASS/FAIL line per acceptance criterion for the terminal summary."""

LINES: dict[int, str] = {}


def record(criterion: int, ok: bool, detail: str) -> bool:
    LINES[criterion] = f"{'PASS' if ok else 'FAIL'} criterion {criterion}: {detail}"
    print(LINES[criterion])
    return ok
