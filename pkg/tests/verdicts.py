"""One pass/fail line per acceptance criterion, echoed live and in the terminal summary."""
RESULTS: list[str] = []


def record(name: str, ok: bool, detail: str, seconds: float, capsys=None) -> bool:
    line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail} ({seconds:.1f} s)"
    RESULTS.append(line)
    if capsys is not None:
        with capsys.disabled():
            print("\n" + line)
    return ok
