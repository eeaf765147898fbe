"""
Programmatic entry point: run(argv) executes one `scfa` subcommand and returns
its exit status instead of exiting the process.
"""
import sys

from django.core.management import call_command
from django.core.management.base import CommandError


def run(argv, stdout=None, stderr=None):
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    try:
        call_command('scfa', *argv, stdout=stdout, stderr=stderr)
    except CommandError as e:
        stderr.write(f"CommandError: {' '.join(str(e).split())}\n")
        return e.returncode
    return 0
