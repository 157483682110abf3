from .alphabet import (
    BLANK, BLANK_CHAR, SYMBOLS, VOCAB_SIZE, UnknownCharacter, detokenize,
    strip_blanks, tokenize,
)
from .ast import (
    BinOp, DivisionByZero, ExprSyntaxError, InexactDivision, Literal, apply_op,
    evaluate, parse, to_string,
)
from .dataset import FormatError, read_dataset, write_dataset
from .shunting import evaluate_independent
from .tasks import (
    GenerationExhausted, Sample, TaskSpec, enumerate_single_digit,
    generate_sample, generate_samples, operator_count, parse_task_id,
)


def evaluate_text(text: str) -> int:
    return evaluate(parse(text))
