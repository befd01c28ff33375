import sys
import os

# Ensure src directory is in path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from src.cli import main

if __name__ == "__main__":
    # `python run.py serve` starts the API with uvicorn; other subcommands run experiments
    sys.exit(main())
