"""Multi-layer networks of tree-approximated unary functions.

Layer l holds one tree per input unit; each tree outputs a vector with one
entry per unit of layer l+1, and unit j of the next layer is the sum of the
j-th outputs over the layer's trees (optionally plus the raw inputs when the
identity residual is enabled).  The forward pass runs on ramp values, weight
updates use the step-sign rule via ``tree.update``, and errors propagate
down through the exact ramp derivatives times the codec derivative.

Inputs that overflow to +-inf mid-network make the sample unusable for
training: the sample is skipped and counted.  Evaluation carries on through
infinities using the raw-bit boundary codes.  NaN anywhere is an error.
"""

from __future__ import annotations

import json
import math
import struct
import time
from dataclasses import dataclass, field
from io import BytesIO

import numpy as np

from .basis import BasisProfile
from .codec import CodecConfig, encode, encode_derivative
from .config import codec_from_dict, codec_to_dict, profile_from_dict, profile_to_dict
from .datasets import MnistSet
from .tree import DenseTree, ModelFormatError, PatriciaTree, PredictResult

_NET_MAGIC = b"SKN1"


class SampleSkipped(Exception):
    """An intermediate value overflowed; the sample is unusable for training."""


class NumericAbort(RuntimeError):
    """NaN appeared during computation; training must not continue."""


@dataclass
class NetworkSpec:
    """Layer widths plus the codec/basis configuration of each layer.

    ``widths`` = [inputs, hidden..., outputs]; layer l owns widths[l] trees,
    each with one output per unit of layer l+1.  The input layer may use its
    own codec (e.g. fixed-point for bounded data); hidden layers see
    unbounded sums and default to the float codec.

    ``scaled_updates`` completes the trees' energy-normalized updates at the
    network level: the per-tree error is divided by the layer width (n trees
    sum into every output unit) and by the network gain
    1 + sum_l |delta_l|^2 / |delta_out|^2 (every layer's exact correction
    reaches the output through the layer Jacobians).  Together these keep
    the per-sample output correction near ``alpha * delta`` regardless of
    widths, depth or how far training has progressed, which is what lets
    one fixed learning rate serve every experiment.  Disabling it gives the
    raw rule (each tree takes the full layer error).
    """

    widths: list[int]
    residual: str = "none"
    input_codec: CodecConfig = field(default_factory=CodecConfig)
    hidden_codec: CodecConfig = field(default_factory=CodecConfig)
    input_profile: BasisProfile | None = None
    hidden_profile: BasisProfile | None = None
    scaled_updates: bool = True
    residual_backprop: str = "sum"

    def __post_init__(self):
        if len(self.widths) < 2 or any(w < 1 for w in self.widths):
            raise ValueError("widths must list >= 2 positive layer sizes")
        if self.residual not in ("none", "identity"):
            raise ValueError(f"unknown residual mode {self.residual!r}")
        if self.residual_backprop not in ("sum", "mean", "none"):
            raise ValueError(f"unknown residual backprop {self.residual_backprop!r}")
        from .basis import sign_exponent_significand_profile, single_region_profile
        if self.input_profile is None:
            if self.input_codec.kind == "float754":
                self.input_profile = sign_exponent_significand_profile(
                    significand_bits=self.input_codec.significand_bits)
            else:
                self.input_profile = single_region_profile(self.input_codec.precision)
        if self.hidden_profile is None:
            if self.hidden_codec.kind == "float754":
                self.hidden_profile = sign_exponent_significand_profile(
                    significand_bits=self.hidden_codec.significand_bits)
            else:
                self.hidden_profile = single_region_profile(self.hidden_codec.precision)

    @property
    def n_layers(self) -> int:
        return len(self.widths) - 1

    def codec_for(self, layer: int) -> CodecConfig:
        return self.input_codec if layer == 0 else self.hidden_codec

    def profile_for(self, layer: int) -> BasisProfile:
        return self.input_profile if layer == 0 else self.hidden_profile


@dataclass
class Seeds:
    weights: int = 0  # kept for config completeness; coefficients start at 0
    train: int = 1
    test: int = 2


@dataclass
class TrainConfig:
    alpha: float = 1.0
    samples: int = 10**6
    seeds: Seeds = field(default_factory=Seeds)
    loss: str = "mse"
    test_samples: int = 10**4
    checkpoint_test_samples: int = 10**3

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.loss != "mse":
            raise ValueError("only mse loss is implemented")


@dataclass
class LayerTape:
    x: np.ndarray
    codes: list
    results: list[PredictResult]


@dataclass
class ForwardTape:
    layers: list[LayerTape]
    y: np.ndarray


class Network:
    def __init__(self, spec: NetworkSpec, backend: str = "patricia"):
        if backend not in ("patricia", "dense"):
            raise ValueError(f"unknown backend {backend!r}")
        self.spec = spec
        self.backend = backend
        cls = PatriciaTree if backend == "patricia" else DenseTree
        self.layers = []
        for l in range(spec.n_layers):
            codec = spec.codec_for(l)
            profile = spec.profile_for(l)
            self.layers.append([cls(spec.widths[l + 1], codec.precision, profile)
                                for _ in range(spec.widths[l])])

    # ---- forward -----------------------------------------------------------

    def forward(self, x, training: bool = True) -> tuple[np.ndarray, ForwardTape]:
        """Run the composition; returns the output and the tape of intermediates.

        In training mode an overflowed (+-inf) intermediate raises
        SampleSkipped; evaluation instead continues through the boundary
        code.  NaN raises NumericAbort in both modes.
        """
        vec = np.atleast_1d(np.asarray(x, dtype=np.float64))
        if vec.shape != (self.spec.widths[0],):
            raise ValueError(f"input must have shape ({self.spec.widths[0]},)")
        tapes = []
        for l, layer in enumerate(self.layers):
            if np.isnan(vec).any():
                raise NumericAbort("NaN appeared during forward")
            codec = self.spec.codec_for(l)
            codes = []
            for xi in vec:
                xi = float(xi)
                if training and math.isinf(xi):
                    raise SampleSkipped
                codes.append(encode(xi, codec, allow_infinite=not training))
            results = [tree.predict(code) for tree, code in zip(layer, codes)]
            out = results[0].y.copy()
            for res in results[1:]:
                out += res.y
            if self.spec.residual == "identity":
                out += vec.sum()
            tapes.append(LayerTape(vec, codes, results))
            vec = out
        if np.isnan(vec).any():
            raise NumericAbort("NaN appeared during forward")
        return vec, ForwardTape(tapes, vec)

    def predict(self, x) -> np.ndarray:
        return self.forward(x, training=False)[0]

    # ---- backward ----------------------------------------------------------

    def backward_and_update(self, tape: ForwardTape, target, alpha: float) -> float:
        """One step-sign update from a completed forward pass; returns the loss.

        Layer errors are derived from the tape before any tree changes, so
        the update order cannot influence propagation.  A non-finite error
        anywhere skips the sample without touching the model.
        """
        target = np.atleast_1d(np.asarray(target, dtype=np.float64))
        widths = self.spec.widths
        if target.shape != (widths[-1],):
            raise ValueError(f"target must have shape ({widths[-1]},)")
        delta = target - tape.y
        loss = 0.5 * float(delta @ delta)
        deltas = [None] * (self.spec.n_layers + 1)
        deltas[-1] = delta
        for l in range(self.spec.n_layers - 1, 0, -1):
            lt = tape.layers[l]
            codec = self.spec.codec_for(l)
            down = np.empty(widths[l])
            up = deltas[l + 1]
            residual = 0.0
            if self.spec.residual == "identity":
                if self.spec.residual_backprop == "sum":
                    residual = float(up.sum())
                elif self.spec.residual_backprop == "mean":
                    residual = float(up.mean())
            for i in range(widths[l]):
                chain = float(up @ lt.results[i].dy_du) * encode_derivative(float(lt.x[i]), codec)
                down[i] = chain + residual
            deltas[l] = down
        if not all(np.isfinite(d).all() for d in deltas[1:]):
            raise SampleSkipped
        gain = 1.0
        if self.spec.scaled_updates:
            base = float(delta @ delta)
            if base > 0.0:
                hidden = sum(float(d @ d) for d in deltas[1:-1])
                gain = 1.0 + hidden / base
        for l, layer in enumerate(self.layers):
            d = deltas[l + 1]
            scale = alpha / (widths[l] * gain) if self.spec.scaled_updates else alpha
            codes = tape.layers[l].codes
            for i, tree in enumerate(layer):
                tree.update(codes[i], d, scale)
        return loss

    def model_derivative(self, x, index: int) -> np.ndarray:
        """d output / d x[index] at x, via one evaluation-mode forward."""
        _, tape = self.forward(x, training=False)
        v = np.zeros(self.spec.widths[0])
        v[index] = 1.0
        for l in range(self.spec.n_layers):
            lt = tape.layers[l]
            codec = self.spec.codec_for(l)
            out = np.zeros(self.spec.widths[l + 1])
            for i, vi in enumerate(v):
                if vi == 0.0:
                    continue
                du_dx = encode_derivative(float(lt.x[i]), codec)
                out += vi * du_dx * lt.results[i].dy_du
            if self.spec.residual == "identity":
                out += v.sum()
            v = out
        return v

    # ---- bookkeeping ---------------------------------------------------

    def node_count(self) -> int:
        total = 0
        for layer in self.layers:
            for tree in layer:
                total += tree.node_count if isinstance(tree, PatriciaTree) else tree.node_count()
        return total

    def save(self, path) -> None:
        if self.backend != "patricia":
            raise ValueError("only the patricia backend serializes")
        spec = self.spec
        header = json.dumps({
            "widths": spec.widths,
            "residual": spec.residual,
            "input_codec": codec_to_dict(spec.input_codec),
            "hidden_codec": codec_to_dict(spec.hidden_codec),
            "input_profile": profile_to_dict(spec.input_profile),
            "hidden_profile": profile_to_dict(spec.hidden_profile),
            "scaled_updates": spec.scaled_updates,
            "residual_backprop": spec.residual_backprop,
        }).encode()
        out = BytesIO()
        out.write(_NET_MAGIC)
        out.write(struct.pack("<I", len(header)))
        out.write(header)
        for layer in self.layers:
            for tree in layer:
                blob = tree.serialize()
                out.write(struct.pack("<Q", len(blob)))
                out.write(blob)
        with open(path, "wb") as handle:
            handle.write(out.getvalue())

    @classmethod
    def load(cls, path) -> "Network":
        with open(path, "rb") as handle:
            buf = handle.read()
        if buf[:4] != _NET_MAGIC:
            raise ModelFormatError("bad magic: not a network model file")
        (hlen,) = struct.unpack_from("<I", buf, 4)
        try:
            raw = json.loads(buf[8:8 + hlen].decode())
            spec = NetworkSpec(
                widths=list(raw["widths"]),
                residual=raw["residual"],
                input_codec=codec_from_dict(raw["input_codec"]),
                hidden_codec=codec_from_dict(raw["hidden_codec"]),
                input_profile=profile_from_dict(raw["input_profile"]),
                hidden_profile=profile_from_dict(raw["hidden_profile"]),
                scaled_updates=raw["scaled_updates"],
                residual_backprop=raw["residual_backprop"],
            )
        except (KeyError, ValueError, UnicodeDecodeError) as exc:
            raise ModelFormatError(f"corrupt network header: {exc}") from exc
        net = cls(spec)
        pos = 8 + hlen
        for layer in net.layers:
            for i in range(len(layer)):
                if pos + 8 > len(buf):
                    raise ModelFormatError("truncated network file")
                (blen,) = struct.unpack_from("<Q", buf, pos)
                pos += 8
                if pos + blen > len(buf):
                    raise ModelFormatError("truncated network file")
                layer[i] = PatriciaTree.deserialize(buf[pos:pos + blen])
                pos += blen
        if pos != len(buf):
            raise ModelFormatError("trailing data after network")
        return net


# ---- training and evaluation -------------------------------------------

@dataclass
class CheckpointRow:
    step: int
    train_rmse: float
    test_rmse: float
    nodes: int
    skipped: int


@dataclass
class TrainingReport:
    curve: list[CheckpointRow]
    processed: int
    skipped: int
    presented: int
    final_test_rmse: float
    best_test_rmse: float
    best_step: int
    node_count: int
    wall_time_s: float


def _checkpoint_interval(step: int) -> int:
    return max(1, 10 ** int(math.log10(step)) // 10)


def evaluate(net: Network, inputs, targets, kind: str = "rmse") -> float:
    """Test metric over a finite dataset: pooled RMSE or argmax accuracy.

    Evaluation-mode forwards: overflowed intermediates are carried through,
    matching how the training curves are scored.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    if kind == "rmse":
        targets = np.atleast_2d(np.asarray(targets, dtype=np.float64).reshape(len(inputs), -1))
        total = 0.0
        n = 0
        for x, t in zip(inputs, targets):
            err = net.predict(x) - t
            total += float(err @ err)
            n += err.size
        return math.sqrt(total / n) if n else 0.0
    if kind == "accuracy":
        hits = 0
        for x, label in zip(inputs, targets):
            hits += int(np.argmax(net.predict(x)) == int(label))
        return hits / len(inputs) if len(inputs) else 0.0
    raise ValueError(f"unknown metric kind {kind!r}")


def train(net: Network, stream, cfg: TrainConfig, test_data=None,
          callbacks=None) -> TrainingReport:
    """Sample-by-sample training with log-spaced test checkpoints.

    ``stream`` yields (input vector, target); ``test_data`` is an optional
    (inputs, targets) pair used for the periodic test RMSE (a fixed prefix
    of ``checkpoint_test_samples`` rows) and the final full-set score.
    """
    t0 = time.perf_counter()
    rows: list[CheckpointRow] = []

    def test_rmse(full: bool) -> float:
        if test_data is None:
            return math.nan
        inputs, targets = test_data
        if not full:
            inputs = inputs[:cfg.checkpoint_test_samples]
            targets = targets[:cfg.checkpoint_test_samples]
        return evaluate(net, inputs, targets, "rmse")

    def emit(step, train_rmse, skipped):
        row = CheckpointRow(step, train_rmse, test_rmse(False), net.node_count(), skipped)
        rows.append(row)
        if callbacks:
            callbacks(row)

    emit(0, math.nan, 0)
    processed = 0
    skipped = 0
    sq_acc = 0.0
    sq_n = 0
    it = iter(stream)
    for step in range(1, cfg.samples + 1):
        x, target = next(it)
        try:
            _, tape = net.forward(x, training=True)
            loss = net.backward_and_update(tape, target, cfg.alpha)
            processed += 1
            sq_acc += 2.0 * loss
            sq_n += 1
        except SampleSkipped:
            skipped += 1
        if step % _checkpoint_interval(step) == 0 or step == cfg.samples:
            emit(step, math.sqrt(sq_acc / sq_n) if sq_n else math.nan, skipped)
            sq_acc = 0.0
            sq_n = 0
    final = test_rmse(True)
    scored = [r for r in rows if not math.isnan(r.test_rmse)]
    best = min(scored, key=lambda r: r.test_rmse) if scored else None
    return TrainingReport(
        curve=rows,
        processed=processed,
        skipped=skipped,
        presented=processed + skipped,
        final_test_rmse=final,
        best_test_rmse=best.test_rmse if best else math.nan,
        best_step=best.step if best else 0,
        node_count=net.node_count(),
        wall_time_s=time.perf_counter() - t0,
    )


def train_classifier(net: Network, train_set: MnistSet, test_set: MnistSet,
                     epochs: int, alpha: float = 1.0, seed: int = 1,
                     eval_subset: int | None = None, callbacks=None):
    """Epoch-based one-hot MSE training; returns per-epoch accuracy rows.

    Row 0 reports the untrained network.  Per-epoch accuracy uses the first
    ``eval_subset`` test images when given (the final epoch always scores
    the full test set).
    """
    n_classes = net.spec.widths[-1]
    rng = np.random.default_rng(seed)
    rows = []

    def accuracy(full):
        n = len(test_set) if full or eval_subset is None else min(eval_subset, len(test_set))
        return evaluate(net, test_set.images[:n], test_set.labels[:n], "accuracy")

    def emit(epoch, train_rmse, skipped, full):
        row = {"epoch": epoch, "train_rmse": train_rmse,
               "test_accuracy": accuracy(full), "nodes": net.node_count(),
               "skipped": skipped}
        rows.append(row)
        if callbacks:
            callbacks(row)

    emit(0, math.nan, 0, epochs == 0)
    skipped = 0
    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(train_set))
        sq_acc = 0.0
        sq_n = 0
        for idx in order:
            target = np.zeros(n_classes)
            target[train_set.labels[idx]] = 1.0
            try:
                _, tape = net.forward(train_set.images[idx], training=True)
                loss = net.backward_and_update(tape, target, alpha)
                sq_acc += 2.0 * loss
                sq_n += 1
            except SampleSkipped:
                skipped += 1
        emit(epoch, math.sqrt(sq_acc / sq_n) if sq_n else math.nan, skipped,
             epoch == epochs)
    return rows
