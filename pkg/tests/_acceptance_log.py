"""Shared record of acceptance-criterion outcomes, printed by conftest."""

import functools

RESULTS: dict[int, tuple[bool, str]] = {}


def criterion(number: int, title: str):
    """Record PASS/FAIL for a criterion; the test body returns a detail string."""

    def wrap(fn):
        @functools.wraps(fn)
        def run(*args, **kwargs):
            try:
                detail = fn(*args, **kwargs)
            except BaseException as exc:
                RESULTS[number] = (False, f"{title} ({type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''})")
                print(f"FAIL criterion {number}: {RESULTS[number][1]}")
                raise
            RESULTS[number] = (True, f"{title} ({detail})")
            print(f"PASS criterion {number}: {RESULTS[number][1]}")

        return run

    return wrap
