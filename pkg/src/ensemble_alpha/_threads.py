import os

ENV_VAR = "ENSEMBLE_ALPHA_THREADS"


def worker_count(default: int | None = None) -> int:
    """Worker cap from ``ENSEMBLE_ALPHA_THREADS`` (falls back to the CPU count)."""
    raw = os.environ.get(ENV_VAR, "").strip()
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            raise ValueError(f"{ENV_VAR} must be an integer, got {raw!r}") from None
    return max(1, default if default is not None else (os.cpu_count() or 1))
