from .convert import (
    NeuralGraph,
    SpatialPad,
    allowed_mask,
    conv_to_graph,
    graph_to_weights,
    mlp_to_graph,
    norm_blocks_after,
    norm_to_graph,
    permute_hidden,
    to_graph,
)
from .gnn import GnnConfig, GnnEncoder, Structure, gnn_encode
from .codec import GraphCodec, GraphVae
