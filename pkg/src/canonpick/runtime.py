"""Process-wide execution knobs, set once by the CLI entry point."""

__all__ = ["get_workers", "set_workers"]

_workers = 1


def set_workers(n):
    """Worker threads for KD-tree queries; values below 1 clamp to 1."""
    global _workers
    _workers = max(1, int(n))


def get_workers():
    return _workers
