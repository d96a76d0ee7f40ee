#!/usr/bin/env python3
import logging
import os

LOG_FORMAT = "%(levelname)s:%(name)s: %(message)s"


def get_verbose():
    """Return if in verbose mode.

    Verbosity is requested through the V or VERBOSE environment variables.
    """
    verbose = 0
    for e in ["V", "VERBOSE"]:
        if e not in os.environ:
            continue
        try:
            verbose = int(os.environ[e])
        except ValueError:
            verbose = 0
        break
    return verbose > 0


def setup_logging(verbose=None):
    """Install a single stderr handler on the package logger."""
    if verbose is None:
        verbose = get_verbose()
    logger = logging.getLogger("hand")
    if not any(getattr(h, "_hand", False) for h in logger.handlers):
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        handler._hand = True
        logger.addHandler(handler)
    logger.setLevel(logging.DEBUG if verbose else logging.INFO)
    return logger
