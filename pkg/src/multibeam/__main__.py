"""Allow ``python -m multibeam`` to run the command-line front end."""

from .cli import main

main()
