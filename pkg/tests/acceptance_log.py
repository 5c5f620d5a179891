"""Pass/fail lines collected from the acceptance suite, echoed in the terminal summary."""

LINES: dict[int, str] = {}


def record(number: int, title: str, ok: bool, detail: str) -> bool:
    line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}: {title} [{detail}]"
    LINES[number] = line
    print(line, flush=True)
    return ok
