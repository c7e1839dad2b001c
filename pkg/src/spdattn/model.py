"""The full decoder: feature extraction, epoch covariances, manifold
attention, eigenvalue clamp, log-flatten readout, linear classifier.

Parameters live in a :class:`ParamRegistry` that separates Euclidean
tensors (convolutions, classifier) from Stiefel tensors (the three
attention projections), because the two families take different
optimizer steps.  The forward pass is recorded on a
:class:`~spdattn.autodiff.Tape`, so gradients, input saliency, and the
attention matrix all come out of one pass.
"""

import contextlib
import os
import struct
from dataclasses import dataclass

import numpy as np

from .attention import AttentionMatrix
from .autodiff import Tape, random_stiefel
from .errors import ConfigError, ContractError, FormatError, SpdError, StageError
from .layers import ConvSpec

_CKPT_MAGIC = b"#spdattn-checkpoint-1\n"

_INT_CFG = (
    "channels",
    "timepoints",
    "classes",
    "m",
    "d_c",
    "d_u",
    "spatial_filters",
    "temporal_kernel",
    "stride",
    "seed",
)
_FLOAT_CFG = ("eps", "eps_re")


@dataclass
class ModelConfig:
    """Hyperparameters of the decoder.

    ``spatial_filters`` defaults to the channel count and ``d_u`` to
    ``d_c - 4``; both may be set explicitly.  ``m`` is the number of
    covariance epochs per trial.
    """

    channels: int
    timepoints: int
    classes: int
    m: int = 3
    d_c: int = 20
    d_u: int | None = None
    spatial_filters: int | None = None
    temporal_kernel: int = 12
    stride: int = 1
    eps: float = 1e-5
    eps_re: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.spatial_filters is None:
            self.spatial_filters = int(self.channels)
        if self.d_u is None:
            self.d_u = int(self.d_c) - 4
        for name in _INT_CFG:
            setattr(self, name, int(getattr(self, name)))
        for name in _FLOAT_CFG:
            setattr(self, name, float(getattr(self, name)))
        if self.channels < 1 or self.timepoints < 2:
            raise ConfigError("trial dimensions must be positive")
        if self.classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.classes}")
        if self.m < 1:
            raise ConfigError(f"epoch count must be >= 1, got {self.m}")
        if not 0 < self.d_u < self.d_c:
            raise ConfigError(f"require 0 < d_u < d_c, got d_u={self.d_u}, d_c={self.d_c}")
        if self.eps <= 0 or self.eps_re <= 0:
            raise ConfigError("eps and eps_re must be positive")
        if self.stride < 1:
            raise ConfigError("stride must be >= 1")
        if self.temporal_kernel > self.timepoints:
            raise ConfigError(
                f"temporal kernel {self.temporal_kernel} exceeds trial length "
                f"{self.timepoints}"
            )
        if self.t_prime < 2 * self.m:
            raise ConfigError(
                f"feature length T'={self.t_prime} too short for m={self.m} epochs "
                "(need T' >= 2m)"
            )

    @property
    def conv(self):
        return ConvSpec(
            spatial_filters=self.spatial_filters,
            temporal_filters=self.d_c,
            temporal_kernel=self.temporal_kernel,
            stride=self.stride,
        )

    @property
    def t_prime(self):
        return (self.timepoints - self.temporal_kernel) // self.stride + 1

    @property
    def feature_dim(self):
        """Length of the concatenated classifier input."""
        per_epoch = self.d_u * (self.d_u + 1) // 2
        return self.m * per_epoch


class ParamRegistry:
    """Named parameter tensors, split by optimizer family.

    Attributes
    ----------
    euclidean : dict of str -> ndarray
        Convolution and classifier tensors, updated by plain SGD.
    stiefel : dict of str -> ndarray
        Row-orthonormal attention projections, updated by tangent
        projection plus QR retraction.
    """

    def __init__(self, euclidean, stiefel):
        overlap = set(euclidean) & set(stiefel)
        if overlap:
            raise ContractError(f"parameter names registered twice: {sorted(overlap)}")
        self.euclidean = dict(euclidean)
        self.stiefel = dict(stiefel)

    def items(self):
        for name in sorted(self.euclidean):
            yield name, self.euclidean[name]
        for name in sorted(self.stiefel):
            yield name, self.stiefel[name]

    def names(self):
        return [name for name, _ in self.items()]

    def copy(self):
        return ParamRegistry(
            {k: v.copy() for k, v in self.euclidean.items()},
            {k: v.copy() for k, v in self.stiefel.items()},
        )

    def total_parameters(self):
        return sum(int(v.size) for _, v in self.items())


def init_params(cfg):
    """Seeded initialization.

    Euclidean tensors are Gaussian with standard deviation
    ``1/sqrt(fan_in)`` (classifier bias zero); Stiefel tensors are
    Gaussian draws retracted onto the manifold.  The query and key
    projections start identical: the similarity kernel is built on a
    distance, so equal projections make every epoch maximally similar
    to itself and the attention rows start self-peaked instead of
    uniform.  Independent draws concentrate all pairwise distances
    around one value, which flattens the rows and starves the early
    gradient signal.  Training is free to separate the two afterwards.
    """
    rng = np.random.default_rng(cfg.seed)
    s, c = cfg.spatial_filters, cfg.channels
    f, k = cfg.d_c, cfg.temporal_kernel
    w_spatial = rng.normal(0.0, 1.0 / np.sqrt(c), (s, c))
    w_temporal = rng.normal(0.0, 1.0 / np.sqrt(s * k), (f, s, k))
    wq = random_stiefel(cfg.d_u, cfg.d_c, rng)
    wk = wq.copy()
    wv = random_stiefel(cfg.d_u, cfg.d_c, rng)
    d = cfg.feature_dim
    fc_w = rng.normal(0.0, 1.0 / np.sqrt(d), (cfg.classes, d))
    fc_b = np.zeros(cfg.classes)
    return ParamRegistry(
        euclidean={
            "conv.spatial": w_spatial,
            "conv.temporal": w_temporal,
            "fc.weight": fc_w,
            "fc.bias": fc_b,
        },
        stiefel={"attn.wq": wq, "attn.wk": wk, "attn.wv": wv},
    )


@contextlib.contextmanager
def _stage(name):
    # Attach the pipeline stage to package errors; programming errors
    # pass through untouched.
    try:
        yield
    except StageError:
        raise
    except SpdError as exc:
        raise StageError(name, exc) from exc


class _Trace:
    """Node handles from one recorded forward pass."""

    __slots__ = ("tape", "input", "params", "logits", "probs", "attention")

    def __init__(self, tape, input_node, param_nodes, logits, probs, attention):
        self.tape = tape
        self.input = input_node
        self.params = param_nodes
        self.logits = logits
        self.probs = probs
        self.attention = attention


def _record(trial, params, cfg):
    trial = np.asarray(trial, dtype=np.float64)
    if trial.shape != (cfg.channels, cfg.timepoints):
        raise ContractError(
            f"trial shape {trial.shape} does not match config "
            f"({cfg.channels}, {cfg.timepoints})"
        )
    t = Tape()
    x = t.leaf(trial, name="input")
    nodes = {name: t.leaf(value, name=name) for name, value in params.items()}

    with _stage("feature-extraction"):
        h = t.matmul(nodes["conv.spatial"], x)
        fm = t.temporal_conv(h, nodes["conv.temporal"], cfg.stride)
    with _stage("e2r"):
        xs = t.trace_norm(t.epoch_scm(fm, cfg.m), cfg.eps)
    with _stage("attention"):
        log_q = t.spd_log(t.bimap(xs, nodes["attn.wq"]))
        log_k = t.spd_log(t.bimap(xs, nodes["attn.wk"]))
        log_v = t.spd_log(t.bimap(xs, nodes["attn.wv"]))
        raw = t.dist_to_sim(t.pairwise_dist(log_q, log_k))
        prob = t.row_softmax(raw)
        attended = t.sym_exp(t.mix(prob, log_v))
    with _stage("reeig"):
        clamped = t.eig_clamp(attended, cfg.eps_re)
    with _stage("r2e"):
        feats = t.triu_flatten(t.spd_log(clamped))
        flat = t.reshape(feats, (cfg.feature_dim,))
    with _stage("classify"):
        logits = t.affine(nodes["fc.weight"], flat, nodes["fc.bias"])
        probs = t.softmax(logits)

    att = AttentionMatrix(raw.value.copy(), prob.value.copy())
    return _Trace(t, x, nodes, logits, probs, att)


def forward(trial, params, cfg):
    """Run the decoder on one trial.

    Returns
    -------
    probabilities : ndarray, shape (classes,)
    attention : AttentionMatrix
        By-product of the pass, for interpretation.
    tape : Tape
        The recorded computation, ready for a backward sweep.
    """
    trace = _record(trial, params, cfg)
    return trace.probs.value.copy(), trace.attention, trace.tape


def loss_and_grads(trials, labels, params, cfg, with_input_grads=False):
    """Mean cross-entropy over a batch and its parameter gradients.

    The batch is reduced by an ordered sum, so results are bitwise
    reproducible.  With ``with_input_grads`` the per-trial gradients of
    the loss with respect to the raw inputs are returned as well.

    Returns
    -------
    loss : float
    grads : dict of str -> ndarray
        One gradient per registered parameter (batch mean).
    input_grads : list of ndarray, optional
        Only when ``with_input_grads`` is true.
    """
    trials = np.asarray(trials, dtype=np.float64)
    if trials.ndim == 2:
        trials = trials[None]
    labels = np.atleast_1d(np.asarray(labels))
    if trials.shape[0] == 0:
        raise ContractError("empty batch")
    if trials.shape[0] != labels.shape[0]:
        raise ContractError(
            f"{trials.shape[0]} trials vs {labels.shape[0]} labels"
        )
    for lab in labels:
        if not 0 <= int(lab) < cfg.classes:
            raise IndexError(f"label {int(lab)} out of range for {cfg.classes} classes")

    n = trials.shape[0]
    total = 0.0
    grand = None
    input_grads = []
    for i in range(n):
        trace = _record(trials[i], params, cfg)
        loss_node = trace.tape.nll(trace.probs, int(labels[i]))
        leaf_grads = trace.tape.backward(loss_node)
        total += loss_node.value
        contrib = {name: leaf_grads[node] for name, node in trace.params.items()}
        if grand is None:
            grand = contrib
        else:
            for name in grand:
                grand[name] = grand[name] + contrib[name]
        if with_input_grads:
            input_grads.append(leaf_grads[trace.input])
    loss = total / n
    grads = {name: g / n for name, g in grand.items()}
    if with_input_grads:
        return loss, grads, input_grads
    return loss, grads


def saliency(trial, params, cfg, target):
    """Gradient of the target-class logit with respect to the input.

    Returns a C x T array; callers typically take the absolute value
    and average over trials or time for topographic export.
    """
    trace = _record(trial, params, cfg)
    logit = trace.tape.pick(trace.logits, target)
    leaf_grads = trace.tape.backward(logit)
    return leaf_grads[trace.input]


# -- checkpoint serialization -------------------------------------------------


def _config_block(cfg):
    values = {name: getattr(cfg, name) for name in _INT_CFG + _FLOAT_CFG}
    lines = [f"{key}={values[key]!r}" for key in sorted(values)]
    return ("\n".join(lines) + "\n").encode("ascii")


def _parse_config_block(blob):
    entries = {}
    for line in blob.decode("ascii").strip().split("\n"):
        key, _, value = line.partition("=")
        if not _:
            raise FormatError(f"malformed config line {line!r}")
        entries[key] = value
    expected = set(_INT_CFG + _FLOAT_CFG)
    if set(entries) != expected:
        raise FormatError(
            f"config keys {sorted(entries)} do not match expected {sorted(expected)}"
        )
    kwargs = {name: int(entries[name]) for name in _INT_CFG}
    kwargs.update({name: float(entries[name]) for name in _FLOAT_CFG})
    return ModelConfig(**kwargs)


def save_checkpoint(path, params, cfg):
    """Write parameters and config as a versioned little-endian binary.

    Layout: magic line; uint32 config length + canonical key-sorted
    config text; uint32 tensor count; per tensor (sorted by group then
    name) a group byte (``E``/``S``), uint16 name length + name, uint8
    rank, uint32 dims, float64 payload.  The write is atomic.
    """
    cfg_blob = _config_block(cfg)
    chunks = [_CKPT_MAGIC, struct.pack("<I", len(cfg_blob)), cfg_blob]
    tensors = [("E", name, params.euclidean[name]) for name in sorted(params.euclidean)]
    tensors += [("S", name, params.stiefel[name]) for name in sorted(params.stiefel)]
    chunks.append(struct.pack("<I", len(tensors)))
    for group, name, value in tensors:
        encoded = name.encode("ascii")
        value = np.ascontiguousarray(value, dtype="<f8")
        chunks.append(group.encode("ascii"))
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", value.ndim))
        chunks.append(struct.pack(f"<{value.ndim}I", *value.shape))
        chunks.append(value.tobytes())
    blob = b"".join(chunks)
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


class _Reader:
    def __init__(self, blob):
        self.blob = blob
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.blob):
            raise FormatError("checkpoint truncated")
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out


def load_checkpoint(path):
    """Read a checkpoint written by :func:`save_checkpoint`.

    Returns
    -------
    (params, cfg) : (ParamRegistry, ModelConfig)
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(_CKPT_MAGIC):
        raise FormatError(f"{path}: not a checkpoint file (magic mismatch)")
    reader = _Reader(blob[len(_CKPT_MAGIC) :])
    (cfg_len,) = struct.unpack("<I", reader.take(4))
    cfg = _parse_config_block(reader.take(cfg_len))
    (count,) = struct.unpack("<I", reader.take(4))
    euclidean, stiefel = {}, {}
    for _ in range(count):
        group = reader.take(1).decode("ascii")
        if group not in ("E", "S"):
            raise FormatError(f"unknown tensor group {group!r}")
        (name_len,) = struct.unpack("<H", reader.take(2))
        name = reader.take(name_len).decode("ascii")
        (rank,) = struct.unpack("<B", reader.take(1))
        shape = struct.unpack(f"<{rank}I", reader.take(4 * rank))
        size = int(np.prod(shape)) if rank else 1
        data = np.frombuffer(reader.take(8 * size), dtype="<f8").reshape(shape)
        (euclidean if group == "E" else stiefel)[name] = data.astype(np.float64)
    if reader.pos != len(reader.blob):
        raise FormatError(
            f"checkpoint has {len(reader.blob) - reader.pos} trailing bytes"
        )
    return ParamRegistry(euclidean, stiefel), cfg
