"""Run the crt-restore command line."""

from .cli import main

main()
