from .checkpoint import (
    CheckpointVersionMismatch, dumps_checkpoint, load_checkpoint,
    loads_checkpoint, save_checkpoint,
)
from .ops import (
    EmptySequence, IdOutOfRange, ShapeMismatch, birnn_encode, embed,
    entropy_from_logp, ffn, gru_step, init_birnn, init_embedding, init_gru,
    init_linear, init_pointer, linear, log_softmax_head, pointer_attention,
    pointer_logits, positional_encoding, softmax_head,
)
from .params import NonFiniteError, ParamStore, SubstrateConfig
