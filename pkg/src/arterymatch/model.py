"""The edge-attention graph matching network.

The network scores every vertex of an association graph (a candidate node
pair) with a matching probability.  Stages:

1. encode raw vertex/edge features (``vertex_encoder`` / ``edge_encoder``),
2. re-embed them for the attention stage (``att_*_encoder``) and run
   ``attention_iters`` rounds of edge/vertex message passing
   (``att_edge_agg``, ``att_edge_update``, ``att_vertex_agg``,
   ``att_vertex_update``); a readout (``att_readout``) turns the final edge
   state into a scalar attention score per message, clamped to [-10, 10],
3. run ``conv_iters`` rounds of convolution where every message is weighted
   by ``exp(-score)`` (``conv_*`` nets),
4. classify each vertex with a sigmoid head (``classifier``).

Message passing treats each stored undirected association edge as two
directed messages (one per direction); a message's raw feature lists the
sender's node features before the receiver's, and a vertex aggregates the
messages it receives.  Together with the order-canonical reductions in
:mod:`arterymatch.autodiff` this makes the forward pass bitwise equivariant
under node reorderings of either input graph.

Throughout an iteration loop the stage-entry embeddings are kept as the
concatenated residual term while the evolving vertex state feeds the next
round.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ModelFormatError, ShapeError
from .graphs import AssociationGraph
from .nn import Mlp, glorot_mlp, mlp_forward
from .rng import stream

__all__ = [
    "MatcherParams",
    "ForwardTrace",
    "init_params",
    "attention_scores",
    "forward",
    "save_params",
    "load_params",
    "WEIGHTS_FORMAT_VERSION",
]

WEIGHTS_FORMAT_VERSION = 1
_MAGIC = b"AMWT"

SCORE_CLAMP = 10.0


def _net_layouts(d: int, h: int) -> list[tuple[str, list[int], str, bool]]:
    """(name, layer widths, final activation, instance norm) for all 14 nets."""
    return [
        ("vertex_encoder", [2 * d, h, h], "identity", True),
        ("edge_encoder", [4 * d, h, h], "identity", True),
        ("att_vertex_encoder", [h, h, h], "identity", True),
        ("att_edge_encoder", [h, h, h], "identity", True),
        ("att_edge_agg", [2 * h, h, h], "identity", True),
        ("att_edge_update", [2 * h, h, h], "identity", True),
        ("att_vertex_agg", [h, h, h], "identity", True),
        ("att_vertex_update", [2 * h, h, h], "identity", True),
        ("att_readout", [h, h, 1], "identity", False),
        ("conv_edge_agg", [2 * h, h, h], "identity", True),
        ("conv_edge_update", [2 * h, h, h], "identity", True),
        ("conv_vertex_agg", [h, h, h], "identity", True),
        ("conv_vertex_update", [2 * h, h, h], "identity", True),
        ("classifier", [h, h, 1], "sigmoid", False),
    ]


@dataclass
class MatcherParams:
    """All learnable weights plus the hyperparameters they were built for."""

    feature_dim: int
    hidden: int
    attention_iters: int
    conv_iters: int
    nets: dict[str, Mlp]
    feature_names: list[str] = field(default_factory=list)
    feature_manifest_version: int = 1
    scale_lo: np.ndarray | None = None  # per-channel minima of the fitted scaler
    scale_hi: np.ndarray | None = None

    def parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for name, net in self.nets.items():
            for suffix, tensor in net.parameters():
                out[f"{name}.{suffix}"] = tensor
        return out

    def net_names(self) -> list[str]:
        return list(self.nets.keys())


def init_params(
    feature_dim: int,
    seed: int,
    hidden: int = 64,
    attention_iters: int = 3,
    conv_iters: int = 2,
    feature_names: list[str] | None = None,
    feature_manifest_version: int = 1,
) -> MatcherParams:
    """Glorot-uniform weights, zero biases; deterministic per seed."""
    if feature_dim < 1:
        raise ShapeError(f"feature_dim must be >= 1, got {feature_dim}")
    if attention_iters < 1 or conv_iters < 1:
        raise ShapeError("attention_iters and conv_iters must be >= 1")
    nets: dict[str, Mlp] = {}
    for name, widths, activation, use_norm in _net_layouts(feature_dim, hidden):
        rng = stream(seed, "init", name)
        nets[name] = glorot_mlp(widths, rng, activation=activation, use_instance_norm=use_norm)
    return MatcherParams(
        feature_dim=feature_dim,
        hidden=hidden,
        attention_iters=attention_iters,
        conv_iters=conv_iters,
        nets=nets,
        feature_names=list(feature_names or []),
        feature_manifest_version=feature_manifest_version,
    )


def _compile_messages(assoc: AssociationGraph) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Expand stored undirected edges into directed messages.

    Returns (senders, receivers, message_features); message k has raw feature
    [f1[sender.i], f1[receiver.j], f2[sender.a], f2[receiver.b]].
    """
    d = assoc.feature_dim
    edges = assoc.edges
    if edges.shape[0] == 0:
        return (
            np.zeros(0, dtype=np.intp),
            np.zeros(0, dtype=np.intp),
            np.zeros((0, 4 * d)),
        )
    senders = np.concatenate([edges[:, 0], edges[:, 1]])
    receivers = np.concatenate([edges[:, 1], edges[:, 0]])
    vf = assoc.vertex_features
    first = vf[:, :d]
    second = vf[:, d:]
    features = np.concatenate(
        [first[senders], first[receivers], second[senders], second[receivers]],
        axis=1,
    )
    return senders, receivers, features


@dataclass
class ForwardTrace:
    """Intermediate stages retained for gradients, oracles, and explanation."""

    senders: np.ndarray
    receivers: np.ndarray
    message_features: np.ndarray
    vertex_embedding: Tensor
    edge_embedding: Tensor
    attention_edge_state: Tensor
    scores: Tensor  # (num_messages, 1), clamped
    conv_vertex_state: Tensor
    prediction: Tensor  # (num_vertices, 1)


def _check_dims(params: MatcherParams, assoc: AssociationGraph) -> None:
    if assoc.feature_dim != params.feature_dim:
        raise ShapeError(
            f"association graph carries {assoc.feature_dim} features per node "
            f"but the model was built for {params.feature_dim}"
        )


def _run_attention(params: MatcherParams, assoc: AssociationGraph):
    senders, receivers, msg_feat = _compile_messages(assoc)
    num_vertices = assoc.num_vertices
    nets = params.nets

    v_emb = mlp_forward(nets["vertex_encoder"], Tensor(assoc.vertex_features))
    e_emb = mlp_forward(nets["edge_encoder"], Tensor(msg_feat))

    v_att0 = mlp_forward(nets["att_vertex_encoder"], v_emb)
    e_att0 = mlp_forward(nets["att_edge_encoder"], e_emb)

    v_cur = v_att0
    e_att = e_att0
    for _ in range(params.attention_iters):
        endpoint_pair = ad.concat_cols(
            ad.gather_rows(v_cur, senders), ad.gather_rows(v_cur, receivers)
        )
        aggregated = mlp_forward(nets["att_edge_agg"], endpoint_pair)
        e_att = mlp_forward(nets["att_edge_update"], ad.concat_cols(aggregated, e_att0))
        messages = mlp_forward(nets["att_vertex_agg"], e_att)
        summed = ad.segment_sum(messages, receivers, num_vertices)
        v_cur = mlp_forward(nets["att_vertex_update"], ad.concat_cols(summed, v_att0))

    scores = ad.clip(mlp_forward(nets["att_readout"], e_att), -SCORE_CLAMP, SCORE_CLAMP)
    return senders, receivers, msg_feat, v_emb, e_emb, e_att, scores


def attention_scores(params: MatcherParams, assoc: AssociationGraph):
    """Per-message attention scores (two directed messages per stored edge).

    Returns (scores, senders, receivers) as plain arrays; ``scores[k]`` is the
    clamped readout for the message senders[k] -> receivers[k].
    """
    _check_dims(params, assoc)
    senders, receivers, _, _, _, _, scores = _run_attention(params, assoc)
    return scores.value[:, 0].copy(), senders, receivers


def forward(params: MatcherParams, assoc: AssociationGraph) -> tuple[np.ndarray, ForwardTrace]:
    """Predicted assignment matrix (n1 x n2, entries in (0,1)) plus trace."""
    _check_dims(params, assoc)
    senders, receivers, msg_feat, v_emb, e_emb, e_att, scores = _run_attention(params, assoc)
    nets = params.nets
    num_vertices = assoc.num_vertices

    weight = ad.exp(ad.neg(scores))  # (num_messages, 1)

    v_cur = v_emb
    for _ in range(params.conv_iters):
        endpoint_pair = ad.concat_cols(
            ad.gather_rows(v_cur, senders), ad.gather_rows(v_cur, receivers)
        )
        e_gcn = mlp_forward(nets["conv_edge_agg"], endpoint_pair)
        e_gcn = mlp_forward(
            nets["conv_edge_update"],
            ad.concat_cols(ad.mul(e_gcn, weight), ad.mul(e_emb, weight)),
        )
        messages = mlp_forward(nets["conv_vertex_agg"], ad.mul(e_gcn, weight))
        summed = ad.segment_sum(messages, receivers, num_vertices)
        v_cur = mlp_forward(nets["conv_vertex_update"], ad.concat_cols(summed, v_emb))

    prediction = mlp_forward(nets["classifier"], v_cur)
    matrix = prediction.value[:, 0].reshape(assoc.n1, assoc.n2).copy()
    trace = ForwardTrace(
        senders=senders,
        receivers=receivers,
        message_features=msg_feat,
        vertex_embedding=v_emb,
        edge_embedding=e_emb,
        attention_edge_state=e_att,
        scores=scores,
        conv_vertex_state=v_cur,
        prediction=prediction,
    )
    return matrix, trace


# ---------------------------------------------------------------------------
# weight file container
# ---------------------------------------------------------------------------


def save_params(params: MatcherParams, path, run_config_hash: str = "") -> None:
    """Versioned binary container; float64 little-endian blobs, exact round trip."""
    header = {
        "format_version": WEIGHTS_FORMAT_VERSION,
        "feature_dim": params.feature_dim,
        "hidden": params.hidden,
        "attention_iters": params.attention_iters,
        "conv_iters": params.conv_iters,
        "feature_manifest_version": params.feature_manifest_version,
        "feature_names": params.feature_names,
        "scale_lo": None if params.scale_lo is None else [float(x) for x in params.scale_lo],
        "scale_hi": None if params.scale_hi is None else [float(x) for x in params.scale_hi],
        "run_config_hash": run_config_hash,
        "nets": [
            {
                "name": name,
                "activation": net.activation,
                "use_instance_norm": net.use_instance_norm,
                "layers": [list(w.value.shape) for w in net.weights],
            }
            for name, net in params.nets.items()
        ],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    blob = bytearray()
    blob += _MAGIC
    blob += struct.pack("<I", WEIGHTS_FORMAT_VERSION)
    blob += struct.pack("<I", len(header_bytes))
    blob += header_bytes
    for net in params.nets.values():
        for w, b in zip(net.weights, net.biases):
            blob += np.ascontiguousarray(w.value, dtype="<f8").tobytes()
            blob += np.ascontiguousarray(b.value, dtype="<f8").tobytes()
    from .fileio import atomic_write_bytes

    atomic_write_bytes(path, bytes(blob))


def load_params(path) -> tuple[MatcherParams, str]:
    """Load a weight file; returns (params, run_config_hash)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 12 or data[:4] != _MAGIC:
        raise ModelFormatError(f"{path}: not a weight file (bad magic)")
    version = struct.unpack("<I", data[4:8])[0]
    if version > WEIGHTS_FORMAT_VERSION:
        raise ModelFormatError(
            f"{path}: format_version {version} is newer than supported "
            f"({WEIGHTS_FORMAT_VERSION})"
        )
    header_len = struct.unpack("<I", data[8:12])[0]
    if len(data) < 12 + header_len:
        raise ModelFormatError(f"{path}: truncated header")
    try:
        header = json.loads(data[12 : 12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise ModelFormatError(f"{path}: corrupt header ({err})") from err

    pos = 12 + header_len
    nets: dict[str, Mlp] = {}
    for spec in header["nets"]:
        weights, biases = [], []
        for rows, cols in spec["layers"]:
            need = rows * cols * 8
            if pos + need > len(data):
                raise ModelFormatError(f"{path}: truncated weight blob for {spec['name']}")
            w = np.frombuffer(data[pos : pos + need], dtype="<f8").reshape(rows, cols).copy()
            pos += need
            need = cols * 8
            if pos + need > len(data):
                raise ModelFormatError(f"{path}: truncated bias blob for {spec['name']}")
            b = np.frombuffer(data[pos : pos + need], dtype="<f8").reshape(1, cols).copy()
            pos += need
            weights.append(Tensor(w, requires_grad=True))
            biases.append(Tensor(b, requires_grad=True))
        nets[spec["name"]] = Mlp(
            weights,
            biases,
            activation=spec["activation"],
            use_instance_norm=spec["use_instance_norm"],
        )
    if pos != len(data):
        raise ModelFormatError(f"{path}: {len(data) - pos} unexpected trailing bytes")
    params = MatcherParams(
        feature_dim=int(header["feature_dim"]),
        hidden=int(header["hidden"]),
        attention_iters=int(header["attention_iters"]),
        conv_iters=int(header["conv_iters"]),
        nets=nets,
        feature_names=list(header.get("feature_names", [])),
        feature_manifest_version=int(header.get("feature_manifest_version", 1)),
        scale_lo=None if header.get("scale_lo") is None else np.asarray(header["scale_lo"]),
        scale_hi=None if header.get("scale_hi") is None else np.asarray(header["scale_hi"]),
    )
    return params, str(header.get("run_config_hash", ""))
