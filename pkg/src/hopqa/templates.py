"""Plain-text prompt templates, shipped in the package and overridable.

Templates live in hopqa/prompts/*.txt and use str.format placeholders.
Pointing a PromptLibrary at a directory replaces any template that has a
file of the same name there; missing files fall back to the built-ins.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

_TEMPLATE_NAMES = ("extract", "validate", "answer")


def _builtin(name: str) -> str:
    return resources.files("hopqa").joinpath(f"prompts/{name}.txt").read_text(encoding="utf-8")


@dataclass(frozen=True)
class PromptLibrary:
    extract: str
    validate: str
    answer: str

    @classmethod
    def default(cls) -> "PromptLibrary":
        return cls(**{name: _builtin(name) for name in _TEMPLATE_NAMES})

    @classmethod
    def from_dir(cls, directory: str | Path) -> "PromptLibrary":
        directory = Path(directory)
        loaded = {}
        for name in _TEMPLATE_NAMES:
            override = directory / f"{name}.txt"
            loaded[name] = (
                override.read_text(encoding="utf-8") if override.is_file() else _builtin(name)
            )
        return cls(**loaded)


_default: PromptLibrary | None = None


def default_prompts() -> PromptLibrary:
    global _default
    if _default is None:
        _default = PromptLibrary.default()
    return _default
