"""``python -m pointshot`` entry point."""

from .cli import run

if __name__ == "__main__":
    run()
