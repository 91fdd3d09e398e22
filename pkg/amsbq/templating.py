from pathlib import Path

from jinja2 import Environment, FileSystemLoader, StrictUndefined

from .util import format_number

templates_dir_path = Path(__file__).parent / "templates"

jinja_env = Environment(
    loader=FileSystemLoader(templates_dir_path),
    undefined=StrictUndefined,
    keep_trailing_newline=True,
)
jinja_env.filters["number"] = format_number
