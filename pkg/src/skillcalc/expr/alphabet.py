"""The 17-symbol token alphabet shared by every module."""

from typing import Iterable, Sequence

# id -> canonical ASCII character; blank is only ever output padding.
SYMBOLS = "0123456789+-*/()·"
BLANK_CHAR = "·"

PLUS, MINUS, TIMES, DIVIDE, LPAREN, RPAREN, BLANK = range(10, 17)
VOCAB_SIZE = len(SYMBOLS)
OPERATORS = "+-*/"
OPERATOR_IDS = frozenset((PLUS, MINUS, TIMES, DIVIDE))

_CHAR_TO_ID = {c: i for i, c in enumerate(SYMBOLS)}
# display forms accepted on input
_CHAR_TO_ID.update({"×": TIMES, "÷": DIVIDE, "−": MINUS})
_PRETTY = {TIMES: "×", DIVIDE: "÷"}


class UnknownCharacter(ValueError):
    def __init__(self, position: int, char: str):
        super().__init__(f"unknown character {char!r} at position {position}")
        self.position = position
        self.char = char


def tokenize(text: str) -> tuple[int, ...]:
    if not text:
        raise ValueError("cannot tokenize an empty string")
    ids = []
    for pos, ch in enumerate(text):
        try:
            ids.append(_CHAR_TO_ID[ch])
        except KeyError:
            raise UnknownCharacter(pos, ch) from None
    return tuple(ids)


def detokenize(ids: Iterable[int], pretty: bool = False) -> str:
    out = []
    for i in ids:
        if not 0 <= i < VOCAB_SIZE:
            raise ValueError(f"token id {i} out of range")
        out.append(_PRETTY.get(i, SYMBOLS[i]) if pretty else SYMBOLS[i])
    return "".join(out)


def strip_blanks(ids: Sequence[int]) -> tuple[int, ...]:
    return tuple(i for i in ids if i != BLANK)


def is_digit(i: int) -> bool:
    return 0 <= i <= 9


def render_int(value: int) -> str:
    return str(value)


def int_tokens(value: int) -> tuple[int, ...]:
    return tokenize(str(value))
