"""
Main entry point for the sparse dyadic classification experiments
"""

import os
import sys

# Add src to Python path so we can import our modules
src_dir = os.path.join(os.path.dirname(__file__), 'src')
if src_dir not in sys.path:
    sys.path.insert(0, src_dir)

from config import config  # noqa: E402
from errors import ConfigurationError  # noqa: E402
from experiment_cli import main as cli_main  # noqa: E402


def main() -> int:
    config.setup_logging()
    try:
        config.validate_config()
    except ConfigurationError as e:
        print(f"CONFIGURATION ERROR: {e}", file=sys.stderr)
        return 2
    return cli_main()


if __name__ == "__main__":
    sys.exit(main())
