#!/usr/bin/env python3
"""Entry point for phenopipe CLI when run as `python -m phenopipe`"""

from .app import main

if __name__ == "__main__":
    exit(main())
