"""Rule programs and default configuration files bundled with the package."""

from importlib import resources


def data_path(filename: str):
    """Traversable for ``data/<filename>``."""
    return resources.files("csihar").joinpath("data", filename)


def data_text(filename: str) -> str:
    path = data_path(filename)
    if not path.is_file():
        raise FileNotFoundError(f"no bundled data file named {filename!r}")
    return path.read_text(encoding="utf-8")


def rule_path(name: str):
    return data_path(f"{name}.rules")


def rule_text(name: str) -> str:
    return data_text(f"{name}.rules")
