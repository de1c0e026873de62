# shearctl.py - command-line entry point for shearflow
import sys

from shearflow.cli import main

if __name__ == "__main__":
    sys.exit(main())
