import os
from dotenv import load_dotenv
load_dotenv(override=True)

TOOL_VERSION = "0.3.0"


def get_num_threads() -> int:
    """Worker count for per-image parallel work (MATTING_NUM_THREADS, default 1)."""
    raw = os.getenv("MATTING_NUM_THREADS", "1")
    try:
        value = int(raw)
    except ValueError:
        print(f"⚠️  [Settings] MATTING_NUM_THREADS={raw!r} is not an integer, using 1")
        return 1
    return max(1, value)


def get_ledger_url():
    """SQLAlchemy URL of the run ledger, or None when no ledger is configured."""
    url = os.getenv("MATTING_LEDGER_URL")
    return url or None
