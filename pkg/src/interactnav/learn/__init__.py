from . import tape
from .check import GradReport, NumericError, grad_check, relative_error
from .layers import LSTM, MLP, Dense
from .params import CheckpointError, ParamStore, adam_step, atomic_write_bytes, atomic_write_text
from .tape import Tensor, no_grad
