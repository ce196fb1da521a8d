"""
Command-line front end: run, fuzz and report
"""

from .main import cli, main

__all__ = ['cli', 'main']
