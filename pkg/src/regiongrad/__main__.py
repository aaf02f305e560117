"""Allow ``python -m regiongrad`` as a synonym for the console script."""

from regiongrad.cli import main

if __name__ == "__main__":
    raise SystemExit(main())
