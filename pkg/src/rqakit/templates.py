"""Prompt templates, shipped as editable text files under ``templates/``."""

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .errors import ConfigError


@dataclass(frozen=True)
class PromptTemplate:
    """A format string with named slots, e.g. ``{passage}`` or ``{question}``."""

    text: str
    name: str = "inline"

    def render(self, **slots: object) -> str:
        try:
            return self.text.format(**slots)
        except (KeyError, IndexError) as exc:
            raise ConfigError(f"template {self.name!r} has an unfilled slot: {exc}") from exc

    @classmethod
    def from_file(cls, path: str | Path) -> "PromptTemplate":
        path = Path(path)
        return cls(text=path.read_text(encoding="utf-8"), name=path.name)


def load_default(name: str) -> PromptTemplate:
    """Load a bundled template: question_gen, answer_gen, chat, or judge."""
    ref = resources.files("rqakit").joinpath(f"templates/{name}.txt")
    return PromptTemplate(text=ref.read_text(encoding="utf-8"), name=name)
