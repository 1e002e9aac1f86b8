import os
import logging
from datetime import datetime
from dotenv import load_dotenv

from errors import ConfigurationError

dotenv_path = os.path.join(os.path.dirname(__file__), '..', '.env')
load_result = load_dotenv(dotenv_path)

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


def _env_bool(name: str, default: str = 'false') -> bool:
    return os.environ.get(name, default).strip().lower() in ('1', 'true', 'yes')


class Config:
    """Configuration management for the sparse dyadic experiments"""

    def __init__(self):
        # Experiment defaults
        self.DEFAULT_SEED = int(os.environ.get('SPARSE_DYADIC_SEED', '20240601'))
        self.PARALLELISM = int(os.environ.get('SPARSE_DYADIC_PARALLELISM', '1'))
        self.TRIALS = int(os.environ.get('SPARSE_DYADIC_TRIALS', '200'))
        self.RULE_DEPTH = int(os.environ.get('SPARSE_DYADIC_RULE_DEPTH', '16'))

        # Trials per asyncio batch
        self.BATCH_SIZE = 64

        # Levels checked past the deepest leaf when low oscillating blocks are certified
        self.OSCILLATION_HORIZON = 64

        # Exhaustive checks refuse to enumerate more than 2^MAX_SHATTER_POINTS labelings
        self.MAX_SHATTER_POINTS = 12
        self.MAX_FAMILY_SIZE = 16

        # Logging
        self.LOG_LEVEL = os.environ.get('SPARSE_DYADIC_LOG_LEVEL', 'INFO').upper()
        self.LOG_TO_FILE = _env_bool('SPARSE_DYADIC_LOG_TO_FILE')

        # File paths
        self.RESULTS_DIR = os.environ.get('SPARSE_DYADIC_RESULTS_DIR', 'data/results')
        self.LOGS_DIR = os.environ.get('SPARSE_DYADIC_LOGS_DIR', 'data/logs')

    def validate_config(self):
        """Validate that configuration values are usable"""
        if self.PARALLELISM < 1:
            raise ConfigurationError(
                f"SPARSE_DYADIC_PARALLELISM must be >= 1, got {self.PARALLELISM}")
        if self.TRIALS < 1:
            raise ConfigurationError(
                f"SPARSE_DYADIC_TRIALS must be >= 1, got {self.TRIALS}")
        if self.RULE_DEPTH < 1:
            raise ConfigurationError(
                f"SPARSE_DYADIC_RULE_DEPTH must be >= 1, got {self.RULE_DEPTH}")
        if self.LOG_LEVEL not in ('DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL'):
            raise ConfigurationError(f"Unknown log level: {self.LOG_LEVEL}")
        return True

    def setup_logging(self, level: str = None):
        """Route log records to standard error and, optionally, to LOGS_DIR"""
        handlers = [logging.StreamHandler()]
        if self.LOG_TO_FILE:
            os.makedirs(self.LOGS_DIR, exist_ok=True)
            handlers.append(
                logging.FileHandler(os.path.join(self.LOGS_DIR, 'sparse_dyadic.log')))

        logging.basicConfig(level=getattr(logging, (level or self.LOG_LEVEL).upper()),
                            format=LOG_FORMAT,
                            handlers=handlers,
                            force=True)

    def get_current_timestamp(self):
        """Get current timestamp for file naming"""
        return datetime.now().strftime("%Y%m%d_%H%M%S")


# Global config instance
config = Config()
