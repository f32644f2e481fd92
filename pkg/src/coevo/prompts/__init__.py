"""Prompt templates as plain-text assets with named placeholders.

Templates are deliberately bit-stable files rather than inline strings:
run logs store prompt digests, and those only stay comparable across
installs if the assets ship verbatim with the package.
"""

from functools import lru_cache
from importlib.resources import files

TEST_FORMAT = """\
Write every test inside one fenced code block, in this exact plain-text format:
INPUT:
<stdin handed to the program; may span multiple lines>
OUTPUT:
<the exact stdout a correct program must produce>
Repeat the INPUT:/OUTPUT: sections for each additional test. No commentary inside the block."""


@lru_cache(maxsize=None)
def _template(name: str) -> str:
    return files(__package__).joinpath(f"{name}.txt").read_text(encoding="utf-8")


def render_prompt(name: str, **values) -> str:
    """Render the named template; {test_format} is always available."""
    values.setdefault("test_format", TEST_FORMAT)
    return _template(name).format(**values)
