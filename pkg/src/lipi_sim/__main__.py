from .harness import run_cli

run_cli()
