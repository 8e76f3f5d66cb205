from flask import Flask

from app.config import configure_logging, \
    get_config
from app.database.init_db import init_db
from app.utils.error_handlers import register_error_handlers
from .extensions import cache, \
    cors
from .unlearning_controller import unlearning_blueprint


def create_app(config_class=None):
    """Create and configure the Flask application."""
    app = Flask(__name__)

    # Load configuration
    app.config.from_object(config_class or get_config())

    # Configure logging
    configure_logging(app)

    # Initialize cache with app
    cache.init_app(app,
                   config={
                       'CACHE_TYPE': app.config['CACHE_TYPE'],
                       'CACHE_DEFAULT_TIMEOUT': app.config['CACHE_DEFAULT_TIMEOUT'],
                       'CACHE_KEY_PREFIX': app.config['CACHE_KEY_PREFIX']})

    # Initialize CORS
    cors.init_app(app)

    # Initialize ledger tables
    with app.app_context():
        init_db(app.config['LEDGER_DATABASE_URL'])

    # Register error handlers
    register_error_handlers(app)

    # Register blueprints
    app.register_blueprint(unlearning_blueprint)

    app.logger.info('Application initialized successfully')
    return app
