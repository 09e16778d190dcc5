from importlib.metadata import version

from sentigraph.main import run_app

__version__ = version("sentigraph")

__all__ = ["run_app", "__version__"]


if __name__ == "__main__":
    run_app()
