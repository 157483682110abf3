"""Tab-separated dataset files: one ``<expression>\\t<answer>`` per line."""

from pathlib import Path
from typing import Iterable, Union

from .alphabet import UnknownCharacter, tokenize
from .tasks import Sample


class FormatError(ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


def write_dataset(samples: Iterable[Sample], path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s in samples:
            fh.write(f"{s.expression}\t{s.answer}\n")


def read_dataset(path: Union[str, Path]) -> list[Sample]:
    samples = []
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0] or not parts[1]:
                raise FormatError(lineno, "expected '<expression>\\t<answer>'")
            try:
                tokenize(parts[0])
                tokenize(parts[1])
            except UnknownCharacter as exc:
                raise FormatError(lineno, str(exc)) from None
            samples.append(Sample(parts[0], parts[1]))
    return samples
