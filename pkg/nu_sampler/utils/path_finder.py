from pathlib import Path


def get_project_root() -> Path:
    return Path(__file__).absolute().parent.parent.parent


def get_config_path(name: str) -> Path:
    return get_project_root() / "config" / name
