"""Cross-sentence n-ary relation extraction with graph LSTMs."""
from .docgraph import (DagPair, Document, DocumentGraph, EdgeLabel, EdgePolicy, EdgeType,
                       EntityMention, build_graph, partition, shortest_dependency_path)
from .graph_lstm import GraphLstmParams, Variant, backprop, encode, forward
from .relation_model import RelationInstance, RelationModel, TaskHead, loss_and_grad, score
from .train_eval import Metrics, TrainConfig, crossval, evaluate, mcnemar, train

__version__ = "0.1.0"
