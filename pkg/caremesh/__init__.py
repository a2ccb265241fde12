"""
caremesh: semantic service discovery, scheduling and binding for networks
of home and community care coordination centers.

This module holds the daemon's Flask application factory; the command line
lives in caremesh.cli.
"""
from typing import Optional

from flask import Flask, jsonify

from caremesh.config.config import Config
from caremesh.errors import CaremeshError, DecodeError
from caremesh.utilities.logger import (
    end_phase, log_config_summary, log_exception, logger, register_shutdown_handler, start_phase
)

__version__ = "0.1.0"

_server_started = False


def create_app(cc, hop_limit: Optional[int] = None, taxonomy=None) -> Flask:
    """
    Create the daemon application for one coordination center.

    Args:
        cc: CoordinationCenter served by this daemon
        hop_limit: Federation budget for requests raised here (Config.HOP_LIMIT by default)
        taxonomy: TaxonomyTable used by GET /registry/export (fallback codes only when None)
    """
    from caremesh.blueprints import federation_bp

    start_phase("CONFIGURATION")
    app = Flask(__name__)
    app.config.from_object(Config)
    app.config['CC'] = cc
    app.config['HOP_LIMIT'] = Config.HOP_LIMIT if hop_limit is None else hop_limit
    app.config['TAXONOMY'] = taxonomy
    app.config['MAX_CONTENT_LENGTH'] = Config.MAX_FRAME_BYTES * 16

    # Route Flask's own logging through our handlers
    app.logger.handlers = []
    for handler in logger.handlers:
        app.logger.addHandler(handler)
    app.logger.setLevel(logger.level)

    log_config_summary(Config.get_as_dict())
    for problem in Config.get_validation_errors():
        logger.warning(f"Configuration validation warning: {problem}")
    end_phase("CONFIGURATION")

    app.register_blueprint(federation_bp)

    @app.errorhandler(DecodeError)
    def handle_decode_error(e):
        logger.warning(f"Rejected frame: {e}")
        return jsonify({"error": "decode", "message": str(e), "offset": e.offset}), 400

    @app.errorhandler(CaremeshError)
    def handle_caremesh_error(e):
        logger.warning(f"Rejected request: {type(e).__name__}: {e}")
        return jsonify({"error": type(e).__name__, "message": str(e)}), 400

    @app.errorhandler(500)
    def handle_500_error(e):
        original = getattr(e, "original_exception", None) or e
        log_exception(original, "daemon")
        return jsonify({"error": "internal", "message": f"Server Error: {type(original).__name__}"}), 500

    logger.info(f"Daemon application ready for {cc.cc_id} ({cc.level})")
    return app


def start_server(app: Flask, host: Optional[str] = None, port: Optional[int] = None) -> None:
    """Serve the daemon until interrupted."""
    global _server_started
    if _server_started:
        logger.warning("Server is already running, ignoring duplicate start request")
        return

    host = host or Config.DAEMON_HOST
    port = port or Config.DAEMON_PORT

    def graceful_shutdown(*args, **kwargs):
        global _server_started
        if not _server_started:
            return
        _server_started = False
        logger.info("Daemon is shutting down...")

    register_shutdown_handler(graceful_shutdown)

    start_phase("DAEMON")
    logger.info(f"Starting caremeshd on {host}:{port}")
    _server_started = True
    try:
        app.run(host=host, port=port, debug=False, use_reloader=False, threaded=True)
    except KeyboardInterrupt:
        logger.debug("KeyboardInterrupt received, shutting down gracefully")
        graceful_shutdown()
    finally:
        _server_started = False
        end_phase("DAEMON")
        logger.info("Daemon stopped")
