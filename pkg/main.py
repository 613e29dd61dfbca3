# main.py: entry point for running the bench harness from a source checkout

import os
import sys

# Add the repository directory to the Python search path
repo_dir = os.path.dirname(os.path.abspath(__file__))
if repo_dir not in sys.path:
    sys.path.insert(0, repo_dir)

from strads.cli import main  # noqa: E402


if __name__ == "__main__":
    sys.exit(main())
