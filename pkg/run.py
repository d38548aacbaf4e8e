import os
import sys


def check_dependencies():
    """Check if all dependencies are installed"""
    try:
        import dotenv  # noqa: F401
        import numpy  # noqa: F401
        import pandas  # noqa: F401
        import pydantic  # noqa: F401
        import scipy  # noqa: F401
        return True
    except ImportError as e:
        print(f"Missing dependency: {e}")
        print("Please install all dependencies: pip install -r requirements.txt")
        return False


def check_env_file():
    """Create .env from .env.example when missing and report the config it selects"""
    if not os.path.exists(".env"):
        if os.path.exists(".env.example"):
            with open(".env.example", "r") as example_file:
                example_content = example_file.read()
            with open(".env", "w") as env_file:
                env_file.write(example_content)
            print(".env file created from .env.example.")
        else:
            print("No .env file found; using built-in defaults.")
            return True

    from dotenv import load_dotenv

    load_dotenv()
    config_path = os.getenv("WOUNDFORMER_CONFIG")
    if config_path and not os.path.exists(config_path):
        print(f"WOUNDFORMER_CONFIG points to a missing file: {config_path}")
        return False
    if config_path:
        print(f"Using run config {config_path}")
    return True


def main():
    """Check the environment, then hand the arguments to the command-line interface"""
    print("=== WoundFormer ===")

    if not check_dependencies():
        return 1
    if not check_env_file():
        return 2

    sys.path.append(os.path.abspath("."))
    from src.main import main as cli_main

    return cli_main(sys.argv[1:] or ["--help"])


if __name__ == "__main__":
    sys.exit(main())
