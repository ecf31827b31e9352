# planemorph/cli/__init__.py
"""
Command-line interface: ``planemorph <command>``.
"""
from .main import main, build_parser, EXIT_OK, EXIT_FAILURE, EXIT_USAGE, EXIT_NUMERIC

__all__ = ["main", "build_parser", "EXIT_OK", "EXIT_FAILURE", "EXIT_USAGE", "EXIT_NUMERIC"]
