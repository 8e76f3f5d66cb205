import logging
import os
from typing import Any, \
    Dict, \
    Optional

from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()


class Config:
    """Base configuration class with default values."""
    # Flask configuration
    SECRET_KEY = os.getenv('SECRET_KEY',
                           'dev-secret-key')
    DEBUG = os.getenv('FLASK_DEBUG',
                      'False').lower() == 'true'

    # Linear algebra configuration
    RANK_REL_TOL = float(os.getenv('RANK_REL_TOL',
                                   '1e-10'))
    COSINE_ZERO_TOL = float(os.getenv('COSINE_ZERO_TOL',
                                      '1e-10'))

    # Embedding dimensions (512 is the ingestion default for real dual encoders)
    EMBEDDING_DIM = int(os.getenv('EMBEDDING_DIM',
                                  '512'))
    TOY_INPUT_DIM = int(os.getenv('TOY_INPUT_DIM',
                                  '128'))
    TOY_FEATURE_DIM = int(os.getenv('TOY_FEATURE_DIM',
                                    '64'))
    TOY_EMBEDDING_DIM = int(os.getenv('TOY_EMBEDDING_DIM',
                                      '32'))

    # Canonical synthesis configuration
    SYNTH_MAX_ITERS = int(os.getenv('SYNTH_MAX_ITERS',
                                    '500'))
    SYNTH_INITIAL_STEP = float(os.getenv('SYNTH_INITIAL_STEP',
                                         '0.1'))
    SYNTH_BACKTRACKING = float(os.getenv('SYNTH_BACKTRACKING',
                                         '0.5'))
    SYNTH_GROWTH = float(os.getenv('SYNTH_GROWTH',
                                   '2.0'))
    SYNTH_MIN_STEP = float(os.getenv('SYNTH_MIN_STEP',
                                     '1e-6'))
    SYNTH_TARGET_COSINE = float(os.getenv('SYNTH_TARGET_COSINE',
                                          '0.999'))

    # Synthetic dataset generator configuration
    GEN_PROTOTYPE_MAX_COSINE = float(os.getenv('GEN_PROTOTYPE_MAX_COSINE',
                                               '0.3'))
    GEN_DOMAIN_OFFSET = float(os.getenv('GEN_DOMAIN_OFFSET',
                                        '0.4'))
    GEN_SAMPLE_NOISE = float(os.getenv('GEN_SAMPLE_NOISE',
                                       '0.05'))
    GEN_FEATURE_NOISE = float(os.getenv('GEN_FEATURE_NOISE',
                                        '0.1'))
    GEN_MAX_DRAWS = int(os.getenv('GEN_MAX_DRAWS',
                                  '100000'))

    # Gradient audit configuration
    GRADCHECK_STEP = float(os.getenv('GRADCHECK_STEP',
                                     '1e-5'))
    GRADCHECK_TOLERANCE = float(os.getenv('GRADCHECK_TOLERANCE',
                                          '1e-4'))

    # Artifacts served by the inference API
    MANIFEST_PATH = os.getenv('MANIFEST_PATH',
                              './files/data/manifest.json')
    BANK_DIR = os.getenv('BANK_DIR',
                         './files/bank')

    # Run ledger
    LEDGER_DATABASE_URL = os.getenv('LEDGER_DATABASE_URL',
                                    'sqlite:///./files/unlearning_ledger.db')

    # Cache configuration
    CACHE_TYPE = os.getenv('CACHE_TYPE',
                           'SimpleCache')
    CACHE_DEFAULT_TIMEOUT = int(os.getenv('CACHE_DEFAULT_TIMEOUT',
                                          '300'))
    CACHE_KEY_PREFIX = 'nullspace_unlearning'

    # Logging configuration
    LOG_LEVEL = os.getenv('LOG_LEVEL',
                          'INFO')
    LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    LOG_FILE = os.getenv('LOG_FILE',
                         './logs/app.log')


class DevelopmentConfig(Config):
    """Development configuration."""
    DEBUG = True
    LOG_LEVEL = 'DEBUG'


class ProductionConfig(Config):
    """Production configuration."""
    DEBUG = False
    LOG_LEVEL = 'INFO'


class TestingConfig(Config):
    """Testing configuration."""
    TESTING = True
    DEBUG = True
    LOG_LEVEL = 'DEBUG'
    LOG_FILE = ''
    LEDGER_DATABASE_URL = 'sqlite://'
    CACHE_TYPE = 'NullCache'


# Configuration dictionary
config_by_name: Dict[str, Any] = {
    'development': DevelopmentConfig,
    'production': ProductionConfig,
    'testing': TestingConfig}


def get_config():
    """Get configuration based on environment."""
    env = os.getenv('FLASK_ENV',
                    'development')
    return config_by_name[env]


def _build_handlers(log_level: int, log_format: str, log_file_path: Optional[str]):
    handlers = []
    if log_file_path:
        # Ensure logs directory exists
        log_dir = os.path.dirname(log_file_path)
        if log_dir and not os.path.exists(log_dir):
            os.makedirs(log_dir,
                        exist_ok=True)
        file_handler = logging.FileHandler(log_file_path)
        file_handler.setLevel(log_level)
        file_handler.setFormatter(logging.Formatter(log_format))
        handlers.append(file_handler)

    # Console handler writes to stderr so results on stdout stay clean
    console_handler = logging.StreamHandler()
    console_handler.setLevel(log_level)
    console_handler.setFormatter(logging.Formatter(log_format))
    handlers.append(console_handler)
    return handlers


def configure_logging(app):
    """Configure logging for the application."""
    log_level = getattr(logging,
                        app.config['LOG_LEVEL'])
    handlers = _build_handlers(log_level,
                               app.config['LOG_FORMAT'],
                               app.config['LOG_FILE'])

    # Configure root logger
    root_logger = logging.getLogger()
    root_logger.setLevel(log_level)
    for handler in handlers:
        root_logger.addHandler(handler)

    # Configure Flask logger
    app.logger.setLevel(log_level)
    app.logger.propagate = False  # Prevent propagation to root logger
    for handler in handlers:
        app.logger.addHandler(handler)

    app.logger.info('Logging configured successfully')


def configure_cli_logging(level: str = 'WARNING', log_file: Optional[str] = None):
    """Configure logging for command-line runs (stderr, optional file)."""
    log_level = getattr(logging,
                        level.upper(),
                        logging.WARNING)
    root_logger = logging.getLogger()
    # Repeated runs in one process (tests) must not stack handlers
    for handler in list(root_logger.handlers):
        if getattr(handler, '_unlearning_cli', False):
            root_logger.removeHandler(handler)
            handler.close()
    for handler in _build_handlers(log_level,
                                   Config.LOG_FORMAT,
                                   log_file):
        handler._unlearning_cli = True
        root_logger.addHandler(handler)
    root_logger.setLevel(log_level)
