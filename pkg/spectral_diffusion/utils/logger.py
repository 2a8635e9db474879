import logging
import os
import sys


def configure_logger(logger):
    level = os.getenv("LOG_LEVEL", "INFO").upper()
    logger.setLevel(level)

    # Modules are imported once per process, but tests reload them
    if any(getattr(handler, "_spdm_handler", False) for handler in logger.handlers):
        return

    # Create a console handler that logs to stderr; stdout carries command results
    handler = logging.StreamHandler(sys.stderr)
    handler.setLevel(level)
    handler._spdm_handler = True

    # Create a formatter with a timestamp
    formatter = logging.Formatter('%(asctime)s - %(name)s - %(levelname)s - %(message)s')

    # Add the formatter to the handler
    handler.setFormatter(formatter)

    # Add the handler to the logger
    logger.addHandler(handler)
