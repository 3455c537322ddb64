from .encoder import (
    MESSAGE_PASSING,
    Embedding,
    EncoderConfig,
    STGraphEncoder,
    adjacency,
    gat_message_pass,
    gcn_message_pass,
    sage_message_pass,
)
from .heads import (
    Beliefs,
    ContractError,
    FrozenPredictor,
    ISIHead,
    Predictor,
    TPHead,
    ade,
    gaussian_kl,
    interactivity,
    isi_loss,
    tp_loss,
    without_ego_view,
)
