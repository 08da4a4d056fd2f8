"""Lets ``python -m autv`` behave like the ``autv`` console script."""

import sys

from .cli import main

if __name__ == "__main__":
    sys.exit(main())
