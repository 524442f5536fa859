import os

DEFAULT_OUT_DIR = "outputs"


def slugify_name(name: str) -> str:
    """Convert a name to a slug suitable for filenames."""
    return (
        name.strip()
        .lower()
        .replace(" ", "_")
        .replace("/", "_")
        .replace("'", "")
        .replace("-", "_")
    )


def output_root() -> str:
    """Root directory for run outputs; OUT_DIR (environment or .env) overrides it."""
    return os.environ.get("OUT_DIR") or DEFAULT_OUT_DIR


def run_directory(problem_name: str, command: str) -> str:
    return os.path.join(output_root(), slugify_name(problem_name), command)
