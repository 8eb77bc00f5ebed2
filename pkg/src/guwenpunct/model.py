"""The two tagger architectures.

Baseline: embedding -> one bidirectional LSTM layer -> tanh hidden linear
-> per-position classifier.

Core: embedding -> 3 stacked bidirectional LSTM layers -> multi-head
self-attention over the encoded states -> 3 more bidirectional LSTM layers
over [state (+) context] -> per-position classifier. The decoder stays
position-aligned with the input, so the output length always equals the
input length.
"""

import math

import numpy as np

from . import checkpoint as ckpt
from . import ndcompute as nd
from .errors import (BadTokenId, EmptySequence, LengthMismatch, ShapeMismatch,
                     WindowTooSmall)
from .preprocess import CLASS_NAMES, NONE, LabelSequence

# Marks used when turning predicted classes back into text.
DEFAULT_MARK_FOR_CLASS = {1: "，", 2: "。", 3: "、"}

GATE_NAMES = ("i", "f", "o", "g")


def _uniform(rng, shape, bound, dtype):
    return nd.Tensor(rng.uniform(-bound, bound, shape).astype(dtype), requires_grad=True)


class LstmCellParams:
    """Gate weights for one LSTM cell: W_* [d_in x d_h], U_* [d_h x d_h], b_* [d_h]."""

    def __init__(self, d_in, d_h, rng, dtype=np.float64, forget_bias=1.0):
        self.d_in = d_in
        self.d_h = d_h
        bound = 1.0 / math.sqrt(d_h)
        for gate in GATE_NAMES:
            setattr(self, "W_" + gate, _uniform(rng, (d_in, d_h), bound, dtype))
            setattr(self, "U_" + gate, _uniform(rng, (d_h, d_h), bound, dtype))
            setattr(self, "b_" + gate, _uniform(rng, (d_h,), bound, dtype))
        self.b_f.data[...] = forget_bias

    def named(self, prefix):
        out = {}
        for kind in ("W", "U", "b"):
            for gate in GATE_NAMES:
                out["%s.%s_%s" % (prefix, kind, gate)] = getattr(self, "%s_%s" % (kind, gate))
        return out


class BiLstmLayerParams:
    """A forward and a backward cell sharing one input dimension."""

    def __init__(self, d_in, d_h, rng, dtype=np.float64):
        self.fwd = LstmCellParams(d_in, d_h, rng, dtype)
        self.bwd = LstmCellParams(d_in, d_h, rng, dtype)

    def named(self, prefix):
        out = self.fwd.named(prefix + ".fwd")
        out.update(self.bwd.named(prefix + ".bwd"))
        return out


def lstm_cell(x, h_prev, c_prev, p: LstmCellParams):
    """One gated step: returns (h, c)."""
    i = nd.sigmoid(nd.affine(x, p.W_i, h_prev, p.U_i, p.b_i))
    f = nd.sigmoid(nd.affine(x, p.W_f, h_prev, p.U_f, p.b_f))
    o = nd.sigmoid(nd.affine(x, p.W_o, h_prev, p.U_o, p.b_o))
    g = nd.tanh(nd.affine(x, p.W_g, h_prev, p.U_g, p.b_g))
    c = nd.add(nd.mul(f, c_prev), nd.mul(i, g))
    h = nd.mul(o, nd.tanh(c))
    return h, c


def bilstm_layer(seq, fwd: LstmCellParams, bwd: LstmCellParams):
    """Run both directions from zero states; concatenate per position -> [T x 2*d_h]."""
    t_len = seq.shape[0]
    if t_len == 0:
        raise EmptySequence("bilstm_layer needs at least one timestep")
    dtype = seq.data.dtype
    zeros = nd.Tensor(np.zeros((1, fwd.d_h), dtype=dtype))
    xs = [nd.gather_rows(seq, (t,)) for t in range(t_len)]

    h, c = zeros, zeros
    hs_fwd = []
    for t in range(t_len):
        h, c = lstm_cell(xs[t], h, c, fwd)
        hs_fwd.append(h)

    h, c = zeros, zeros
    hs_bwd = [None] * t_len
    for t in reversed(range(t_len)):
        h, c = lstm_cell(xs[t], h, c, bwd)
        hs_bwd[t] = h

    return nd.concat([nd.concat(hs_fwd, axis=0), nd.concat(hs_bwd, axis=0)], axis=1)


class EncoderParams:
    """Embedding plus a stack of bidirectional LSTM layers."""

    def __init__(self, vocab_size, d_e, d_h, rng, n_layers=3, dtype=np.float64):
        bound = 1.0 / math.sqrt(d_h)
        self.embedding = _uniform(rng, (vocab_size, d_e), bound, dtype)
        self.layers = []
        for layer_no in range(n_layers):
            d_in = d_e if layer_no == 0 else 2 * d_h
            self.layers.append(BiLstmLayerParams(d_in, d_h, rng, dtype))

    def named(self, prefix="enc"):
        out = {"embedding": self.embedding}
        for layer_no, layer in enumerate(self.layers):
            out.update(layer.named("%s.l%d" % (prefix, layer_no)))
        return out


def encode_seq(ids, p: EncoderParams, dropout_rate=0.0, rng=None):
    """Embed token ids and run the encoder stack -> source states [T x d_model]."""
    idx = np.asarray(ids, dtype=np.intp)
    if idx.size == 0:
        raise EmptySequence("cannot encode an empty id sequence")
    if idx.min() < 0 or idx.max() >= p.embedding.shape[0]:
        raise BadTokenId("token ids must lie in [0, %d)" % p.embedding.shape[0])
    x = nd.gather_rows(p.embedding, idx)
    for layer_no, layer in enumerate(p.layers):
        if layer_no > 0 and dropout_rate > 0.0:
            x = nd.dropout(x, dropout_rate, rng)
        x = bilstm_layer(x, layer.fwd, layer.bwd)
    return x


class AttentionHeadParams:
    def __init__(self, d_model, d_k, rng, dtype=np.float64):
        bound = 1.0 / math.sqrt(d_model)
        self.W_Q = _uniform(rng, (d_model, d_k), bound, dtype)
        self.W_K = _uniform(rng, (d_model, d_k), bound, dtype)
        self.W_V = _uniform(rng, (d_model, d_k), bound, dtype)


class MultiHeadAttentionParams:
    """h parallel projected attention pools plus the output projection."""

    def __init__(self, d_model, heads, rng, dtype=np.float64):
        if heads < 1:
            raise ValueError("need at least one attention head")
        if d_model % heads != 0:
            raise ValueError("d_model=%d not divisible by heads=%d" % (d_model, heads))
        self.d_model = d_model
        self.d_k = d_model // heads
        self.heads = [AttentionHeadParams(d_model, self.d_k, rng, dtype)
                      for _ in range(heads)]
        bound = 1.0 / math.sqrt(d_model)
        self.W_O = _uniform(rng, (heads * self.d_k, d_model), bound, dtype)

    def named(self, prefix="attn"):
        out = {}
        for k, head in enumerate(self.heads):
            out["%s.head%d.W_Q" % (prefix, k)] = head.W_Q
            out["%s.head%d.W_K" % (prefix, k)] = head.W_K
            out["%s.head%d.W_V" % (prefix, k)] = head.W_V
        out["%s.W_O" % prefix] = self.W_O
        return out


def local_window_mask(t_len, s_len, radius):
    """Boolean [T x S] mask, True where |s - t| exceeds the window radius."""
    if radius < 0:
        raise WindowTooSmall("window radius must be >= 0, got %d" % radius)
    t_idx = np.arange(t_len)[:, None]
    s_idx = np.arange(s_len)[None, :]
    mask = np.abs(s_idx - t_idx) > radius
    if mask.all(axis=1).any():
        raise WindowTooSmall("window radius %d leaves a query with no sources" % radius)
    return mask


def multi_head_attention(queries, keys, values, p: MultiHeadAttentionParams,
                         window=None):
    """Scaled dot-product attention per head; heads concatenated then projected.

    Returns (context [T x d_model], alignments: one [T x S] tensor per head).
    With a window, weights outside |s - t| <= window are exactly zero.
    """
    if queries.shape[1] != p.d_model or keys.shape[1] != p.d_model:
        raise ShapeMismatch("attention over d_model=%d got queries %s keys %s"
                            % (p.d_model, queries.shape, keys.shape))
    if keys.shape != values.shape:
        raise ShapeMismatch("keys %s and values %s must match" % (keys.shape, values.shape))
    mask = None
    if window is not None:
        mask = local_window_mask(queries.shape[0], keys.shape[0], window)
    inv_sqrt = 1.0 / math.sqrt(p.d_k)
    outputs = []
    alignments = []
    for head in p.heads:
        q = nd.matmul(queries, head.W_Q)
        k = nd.matmul(keys, head.W_K)
        v = nd.matmul(values, head.W_V)
        scores = nd.scale(nd.matmul(q, nd.transpose(k)), inv_sqrt)
        if mask is not None:
            scores = nd.masked_fill(scores, mask, -np.inf)
        weights = nd.softmax(scores, axis=-1)
        alignments.append(weights)
        outputs.append(nd.matmul(weights, v))
    context = nd.matmul(nd.concat(outputs, axis=1), p.W_O)
    return context, alignments


class DecoderParams:
    """Bidirectional LSTM stack over [state (+) context] plus the classifier head."""

    def __init__(self, d_model, d_h, n_classes, rng, n_layers=3, dtype=np.float64):
        self.layers = []
        for layer_no in range(n_layers):
            d_in = 2 * d_model if layer_no == 0 else 2 * d_h
            self.layers.append(BiLstmLayerParams(d_in, d_h, rng, dtype))
        bound = 1.0 / math.sqrt(d_h)
        self.W_cls = _uniform(rng, (2 * d_h, n_classes), bound, dtype)
        self.b_cls = _uniform(rng, (n_classes,), bound, dtype)

    def named(self, prefix="dec"):
        out = {}
        for layer_no, layer in enumerate(self.layers):
            out.update(layer.named("%s.l%d" % (prefix, layer_no)))
        out["cls.W"] = self.W_cls
        out["cls.b"] = self.b_cls
        return out


def decode_and_classify(source_states, attn: MultiHeadAttentionParams,
                        dec: DecoderParams, window=None,
                        dropout_rate=0.0, rng=None):
    """Attend over the encoded states and classify every position -> [T x C]."""
    if source_states.shape[0] == 0:
        raise EmptySequence("cannot decode an empty sequence")
    context, _ = multi_head_attention(source_states, source_states, source_states,
                                      attn, window=window)
    x = nd.concat([source_states, context], axis=1)
    for layer_no, layer in enumerate(dec.layers):
        if layer_no > 0 and dropout_rate > 0.0:
            x = nd.dropout(x, dropout_rate, rng)
        x = bilstm_layer(x, layer.fwd, layer.bwd)
    return nd.add(nd.matmul(x, dec.W_cls), dec.b_cls)


class CoreModel:
    """3-layer bidirectional LSTM encoder-decoder with multi-head attention."""

    kind = "core"

    def __init__(self, vocab_size, n_classes, d_e=128, d_h=128, heads=4,
                 dropout=0.1, window=None, seed=0, dtype=np.float64):
        rng = np.random.default_rng(seed)
        self.vocab_size = vocab_size
        self.n_classes = n_classes
        self.d_e = d_e
        self.d_h = d_h
        self.d_model = 2 * d_h
        self.n_heads = heads
        self.dropout = dropout
        self.window = window
        self.dtype = np.dtype(dtype)
        self.encoder = EncoderParams(vocab_size, d_e, d_h, rng, dtype=self.dtype)
        self.attention = MultiHeadAttentionParams(self.d_model, heads, rng, dtype=self.dtype)
        self.decoder = DecoderParams(self.d_model, d_h, n_classes, rng, dtype=self.dtype)

    def forward(self, ids, training=False, rng=None):
        rate = self.dropout if training else 0.0
        states = encode_seq(ids, self.encoder, dropout_rate=rate, rng=rng)
        return decode_and_classify(states, self.attention, self.decoder,
                                   window=self.window, dropout_rate=rate, rng=rng)

    def alignments(self, ids):
        """Per-head attention weight matrices for one input, without grads."""
        with nd.no_grad():
            states = encode_seq(ids, self.encoder)
            _, aligns = multi_head_attention(states, states, states,
                                             self.attention, window=self.window)
        return [a.data for a in aligns]

    def named_tensors(self):
        out = self.encoder.named("enc")
        out.update(self.attention.named("attn"))
        out.update(self.decoder.named("dec"))
        return out

    def dims(self):
        return {"vocab_size": self.vocab_size, "classes": self.n_classes,
                "d_e": self.d_e, "d_h": self.d_h, "d_model": self.d_model,
                "dropout": self.dropout,
                "window": self.window, "dtype": self.dtype.name}


class BaselineModel:
    """Single bidirectional LSTM layer with a tanh hidden linear before the classifier."""

    kind = "baseline"

    def __init__(self, vocab_size, n_classes, d_e=128, d_h=128,
                 dropout=0.0, seed=0, dtype=np.float64):
        rng = np.random.default_rng(seed)
        self.vocab_size = vocab_size
        self.n_classes = n_classes
        self.d_e = d_e
        self.d_h = d_h
        self.d_model = 2 * d_h
        self.n_heads = 0
        self.dropout = dropout
        self.window = None
        self.dtype = np.dtype(dtype)
        bound = 1.0 / math.sqrt(d_h)
        self.embedding = _uniform(rng, (vocab_size, d_e), bound, self.dtype)
        self.layer = BiLstmLayerParams(d_e, d_h, rng, self.dtype)
        self.W_h = _uniform(rng, (2 * d_h, d_h), bound, self.dtype)
        self.b_h = _uniform(rng, (d_h,), bound, self.dtype)
        self.W_cls = _uniform(rng, (d_h, n_classes), bound, self.dtype)
        self.b_cls = _uniform(rng, (n_classes,), bound, self.dtype)

    def forward(self, ids, training=False, rng=None):
        return baseline_forward(ids, self)

    def named_tensors(self):
        out = {"embedding": self.embedding}
        out.update(self.layer.named("enc.l0"))
        out["hidden.W"] = self.W_h
        out["hidden.b"] = self.b_h
        out["cls.W"] = self.W_cls
        out["cls.b"] = self.b_cls
        return out

    def dims(self):
        return {"vocab_size": self.vocab_size, "classes": self.n_classes,
                "d_e": self.d_e, "d_h": self.d_h, "d_model": self.d_model,
                "dropout": self.dropout,
                "window": self.window, "dtype": self.dtype.name}


def baseline_forward(ids, p: BaselineModel):
    """Embedding -> one bidirectional LSTM layer -> tanh hidden -> logits [T x C]."""
    idx = np.asarray(ids, dtype=np.intp)
    if idx.size == 0:
        raise EmptySequence("cannot tag an empty id sequence")
    if idx.min() < 0 or idx.max() >= p.embedding.shape[0]:
        raise BadTokenId("token ids must lie in [0, %d)" % p.embedding.shape[0])
    x = nd.gather_rows(p.embedding, idx)
    x = bilstm_layer(x, p.layer.fwd, p.layer.bwd)
    hidden = nd.tanh(nd.add(nd.matmul(x, p.W_h), p.b_h))
    return nd.add(nd.matmul(hidden, p.W_cls), p.b_cls)


def predict_labels(logits) -> LabelSequence:
    """Per-position argmax; exact ties resolve to the lower class id."""
    data = logits.data if isinstance(logits, nd.Tensor) else np.asarray(logits)
    return LabelSequence([int(i) for i in np.argmax(data, axis=1)])


def format_index_string(item) -> str:
    """Predicted punctuation indices (original-text convention) as "i/j/.../"."""
    if isinstance(item, LabelSequence):
        indices = []
        inserted = 0
        for j, label in enumerate(item.labels):
            if label != NONE:
                indices.append(j + 1 + inserted)
                inserted += 1
    else:
        indices = [i for i, _ in item]
    return "".join("%d/" % i for i in indices)


def restore_text(input_text: str, labels, mark_for_class=None) -> str:
    """Insert a mark after each character labeled with a punctuation class."""
    seq = labels.labels if isinstance(labels, LabelSequence) else list(labels)
    if len(seq) != len(input_text):
        raise LengthMismatch("%d labels for %d characters" % (len(seq), len(input_text)))
    marks = dict(DEFAULT_MARK_FOR_CLASS)
    if mark_for_class:
        marks.update(mark_for_class)
    out = []
    for ch, label in zip(input_text, seq):
        out.append(ch)
        if label != NONE:
            out.append(marks[label])
    return "".join(out)


def model_gradcheck(kind: str = "core", seed: int = 0, t_len: int = 7,
                    vocab_size: int = 11, n_classes: int = 4, d_e: int = 4,
                    d_h: int = 3, heads: int = 2, window=None, eps: float = 1e-5,
                    max_coords_per_tensor: int = 6) -> float:
    """Finite-difference check of a tiny f64 model; returns the max relative error."""
    rng = np.random.default_rng(seed)
    ids = rng.integers(0, vocab_size, size=t_len)
    targets = rng.integers(0, n_classes, size=t_len)
    if kind == "core":
        net = CoreModel(vocab_size, n_classes, d_e=d_e, d_h=d_h, heads=heads,
                        dropout=0.0, window=window, seed=seed, dtype=np.float64)
    elif kind == "baseline":
        net = BaselineModel(vocab_size, n_classes, d_e=d_e, d_h=d_h,
                            dropout=0.0, seed=seed, dtype=np.float64)
    else:
        raise ValueError("unknown model kind %r" % kind)

    def loss_fn(_params):
        return nd.cross_entropy(net.forward(ids), targets)

    return nd.gradcheck(loss_fn, net.named_tensors(), eps=eps,
                        max_coords_per_tensor=max_coords_per_tensor,
                        rng=np.random.default_rng(seed + 1))


# ---------------------------------------------------------------------------
# persistence


def save_model(model, path, vocab, task, inventory):
    """Write the GWPT tensor file plus its JSON sidecar (path + ".json")."""
    ckpt.save_tensors(path, model.named_tensors())
    class_names = {mark: CLASS_NAMES[cls] for mark, cls in inventory.class_map.items()}
    meta = {
        "kind": model.kind,
        "dims": model.dims(),
        "heads": model.n_heads,
        "vocab_sha256": vocab.sha256(),
        "task": task,
        "inventory": {"marks": list(inventory.marks), "class_map": class_names},
    }
    ckpt.write_sidecar(str(path) + ".json", meta)


def load_model(path):
    """Rebuild a model from a GWPT file and its sidecar; returns (model, meta)."""
    meta = ckpt.read_sidecar(str(path) + ".json")
    tensors = ckpt.load_tensors(path)
    dims = meta["dims"]
    dtype = np.dtype(dims.get("dtype", "float64"))
    if meta["kind"] == "core":
        model = CoreModel(dims["vocab_size"], dims["classes"], d_e=dims["d_e"],
                          d_h=dims["d_h"], heads=meta["heads"],
                          dropout=dims.get("dropout", 0.0),
                          window=dims.get("window"), dtype=dtype)
    elif meta["kind"] == "baseline":
        model = BaselineModel(dims["vocab_size"], dims["classes"], d_e=dims["d_e"],
                              d_h=dims["d_h"], dropout=dims.get("dropout", 0.0),
                              dtype=dtype)
    else:
        raise ValueError("unknown model kind %r" % meta["kind"])
    named = model.named_tensors()
    if set(named) != set(tensors):
        missing = set(named) ^ set(tensors)
        raise ValueError("checkpoint tensor names do not match model: %s" % sorted(missing)[:5])
    for name, tensor in named.items():
        arr = tensors[name].astype(dtype)
        if arr.shape != tensor.data.shape:
            raise ValueError("tensor %s shape %s != expected %s"
                             % (name, arr.shape, tensor.data.shape))
        tensor.data = arr
        tensor.grad = np.zeros_like(arr)
    return model, meta
