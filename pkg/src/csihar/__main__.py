from csihar.cli import run

run()
