"""Feedforward ReLU networks, input boxes and the ``.nnet`` file format."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np


class NetworkError(ValueError):
    """Raised for malformed networks or bad evaluation inputs."""


class NNetParseError(NetworkError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class Stability(enum.Enum):
    STABLE_ACTIVE = "active"
    STABLE_INACTIVE = "inactive"
    UNSTABLE = "unstable"


@dataclass(frozen=True)
class InputNormalization:
    mins: np.ndarray
    maxes: np.ndarray
    means: np.ndarray
    ranges: np.ndarray

    def normalize(self, x):
        return (np.asarray(x, dtype=float) - self.means) / self.ranges

    def denormalize(self, x):
        return np.asarray(x, dtype=float) * self.ranges + self.means


@dataclass(frozen=True)
class OutputNormalization:
    mean: float
    range: float

    def normalize(self, y):
        return (np.asarray(y, dtype=float) - self.mean) / self.range

    def denormalize(self, y):
        return np.asarray(y, dtype=float) * self.range + self.mean


@dataclass(frozen=True)
class ReluNetwork:
    """ReLU network ``z_{i+1} = W_i z_i + b_i`` with ReLU on every hidden layer.

    ``weights[i]`` has shape ``(widths[i+1], widths[i])``; row ``k`` feeds node
    ``k`` of the next layer. The output layer is affine (no ReLU).
    """

    weights: tuple
    biases: tuple
    input_normalization: Optional[InputNormalization] = None
    output_normalization: Optional[OutputNormalization] = None
    widths: tuple = field(init=False)

    def __post_init__(self):
        weights = tuple(np.array(w, dtype=float, copy=True) for w in self.weights)
        biases = tuple(np.array(b, dtype=float, copy=True).reshape(-1) for b in self.biases)
        if not weights:
            raise NetworkError("a network needs at least one weight layer (K >= 2)")
        if len(weights) != len(biases):
            raise NetworkError("weights and biases must have the same number of layers")
        widths = [weights[0].shape[1] if weights[0].ndim == 2 else -1]
        for i, (w, b) in enumerate(zip(weights, biases)):
            if w.ndim != 2:
                raise NetworkError(f"weight matrix {i} is not two-dimensional")
            if w.shape[1] != widths[-1]:
                raise NetworkError(
                    f"weight matrix {i} has {w.shape[1]} columns, expected {widths[-1]}"
                )
            if b.shape[0] != w.shape[0]:
                raise NetworkError(
                    f"bias {i} has length {b.shape[0]}, expected {w.shape[0]}"
                )
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise NetworkError(f"layer {i} contains non-finite parameters")
            widths.append(w.shape[0])
        if min(widths) < 1:
            raise NetworkError("all layer widths must be >= 1")
        for arr in weights + biases:
            arr.setflags(write=False)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "biases", biases)
        object.__setattr__(self, "widths", tuple(int(n) for n in widths))

    @property
    def layer_count(self) -> int:
        """K, the number of layers including input and output."""
        return len(self.widths)

    @property
    def n_inputs(self) -> int:
        return self.widths[0]

    @property
    def n_outputs(self) -> int:
        return self.widths[-1]

    @property
    def hidden_widths(self) -> tuple:
        return self.widths[1:-1]

    def __call__(self, x):
        return forward(self, x)


@dataclass(frozen=True)
class InputBox:
    """Axis-aligned box ``lower <= x <= upper``.

    The bias view stacks the ``+I`` rows (upper bounds) over the ``-I`` rows
    (negated lower bounds), giving ``2 * n`` facet biases.
    """

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.array(self.lower, dtype=float, copy=True).reshape(-1)
        upper = np.array(self.upper, dtype=float, copy=True).reshape(-1)
        if lower.shape != upper.shape:
            raise NetworkError("box bounds have different lengths")
        if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
            raise NetworkError("box bounds must be finite")
        if np.any(lower > upper):
            bad = int(np.argmax(lower > upper))
            raise NetworkError(f"box lower bound exceeds upper bound on axis {bad}")
        lower.setflags(write=False)
        upper.setflags(write=False)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @classmethod
    def from_bias(cls, bias) -> "InputBox":
        bias = np.asarray(bias, dtype=float)
        n = bias.shape[0] // 2
        return cls(-bias[n:], bias[:n])

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    @property
    def widths(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    @property
    def bias(self) -> np.ndarray:
        return np.concatenate([self.upper, -self.lower])

    def constraint_matrix(self) -> np.ndarray:
        eye = np.eye(self.dim)
        return np.vstack([eye, -eye])

    def contains(self, x, tol: float = 1e-9) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))

    def bisect(self, axis: int):
        mid = 0.5 * (self.lower[axis] + self.upper[axis])
        low_upper = self.upper.copy()
        low_upper[axis] = mid
        high_lower = self.lower.copy()
        high_lower[axis] = mid
        return mid, InputBox(self.lower, low_upper), InputBox(high_lower, self.upper)

    def corners(self) -> np.ndarray:
        n = self.dim
        idx = (np.arange(2 ** n)[:, None] >> np.arange(n)) & 1
        return np.where(idx == 1, self.upper, self.lower)

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        return rng.uniform(self.lower, self.upper, size=(count, self.dim))


def forward(net: ReluNetwork, x) -> np.ndarray:
    """Evaluate the network on one input (1-D) or a batch of inputs (2-D rows)."""
    z = np.asarray(x, dtype=float)
    if z.shape[-1] != net.n_inputs:
        raise NetworkError(f"input has length {z.shape[-1]}, network expects {net.n_inputs}")
    if not np.all(np.isfinite(z)):
        raise NetworkError("input contains non-finite values")
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = z @ w.T + b
        if i < last:
            z = np.maximum(z, 0.0)
    return z


def pre_activations(net: ReluNetwork, x) -> list:
    """Hidden pre-activations ``[z^_2, ..., z^_{K-1}]`` for one input or a batch."""
    z = np.asarray(x, dtype=float)
    out = []
    for w, b in zip(net.weights[:-1], net.biases[:-1]):
        zhat = z @ w.T + b
        out.append(zhat)
        z = np.maximum(zhat, 0.0)
    return out


def node_stability(bounds) -> list:
    """Per-node stability for every hidden layer.

    ``bounds`` is a ``BoundsTable`` or any sequence of ``(lower, upper)`` array
    pairs, one pair per weight layer.
    """
    pairs = bounds.layers() if hasattr(bounds, "layers") else bounds
    result = []
    for lower, upper in pairs:
        states = []
        for l, u in zip(np.asarray(lower, float), np.asarray(upper, float)):
            states.append(classify_node(l, u))
        result.append(states)
    return result


def classify_node(lower: float, upper: float) -> Stability:
    if upper <= 0.0:
        return Stability.STABLE_INACTIVE
    if lower >= 0.0:
        return Stability.STABLE_ACTIVE
    return Stability.UNSTABLE


# -- file formats --------------------------------------------------------------


def _parse_floats(text: str, lineno: int) -> list:
    values = []
    for tok in text.strip().rstrip(",").split(","):
        tok = tok.strip()
        if not tok:
            continue
        try:
            values.append(float(tok))
        except ValueError:
            raise NNetParseError(f"non-numeric token {tok!r}", lineno) from None
    return values


def load_nnet(path) -> ReluNetwork:
    """Read a network in the ``.nnet`` text format (ACAS Xu distribution)."""
    path = Path(path)
    with path.open() as fh:
        raw = fh.read().splitlines()

    lines = [(i + 1, s) for i, s in enumerate(raw)]
    pos = 0
    while pos < len(lines) and (
        lines[pos][1].lstrip().startswith("//") or not lines[pos][1].strip()
    ):
        pos += 1

    def take(what: str) -> tuple:
        nonlocal pos
        while pos < len(lines) and not lines[pos][1].strip():
            pos += 1
        if pos >= len(lines):
            raise NNetParseError(f"unexpected end of file while reading {what}")
        lineno, text = lines[pos]
        pos += 1
        return lineno, _parse_floats(text, lineno)

    lineno, header = take("header")
    if len(header) < 4:
        raise NNetParseError("header needs numLayers, inputSize, outputSize, maxLayerSize", lineno)
    n_layers, n_in, n_out = (int(v) for v in header[:3])
    lineno, sizes = take("layer sizes")
    sizes = [int(v) for v in sizes]
    if len(sizes) != n_layers + 1:
        raise NNetParseError(
            f"expected {n_layers + 1} layer sizes, found {len(sizes)}", lineno
        )
    if sizes[0] != n_in or sizes[-1] != n_out:
        raise NNetParseError("layer sizes disagree with input/output sizes", lineno)
    take("deprecated symmetry flag")
    _, mins = take("input minimums")
    _, maxes = take("input maximums")
    lineno_means, means = take("means")
    lineno_ranges, ranges = take("ranges")
    if len(mins) != n_in or len(maxes) != n_in:
        raise NNetParseError("input min/max lines must have one entry per input", lineno_ranges)
    if len(means) != n_in + 1:
        raise NNetParseError(f"means line needs {n_in + 1} entries", lineno_means)
    if len(ranges) != n_in + 1:
        raise NNetParseError(f"ranges line needs {n_in + 1} entries", lineno_ranges)

    weights, biases = [], []
    for layer in range(n_layers):
        rows, cols = sizes[layer + 1], sizes[layer]
        w = np.empty((rows, cols))
        for r in range(rows):
            lineno, vals = take(f"layer {layer} weight row {r}")
            if len(vals) != cols:
                raise NNetParseError(
                    f"layer {layer} weight row {r} has {len(vals)} entries, expected {cols}",
                    lineno,
                )
            w[r] = vals
        b = np.empty(rows)
        for r in range(rows):
            lineno, vals = take(f"layer {layer} bias row {r}")
            if len(vals) != 1:
                raise NNetParseError(
                    f"layer {layer} bias row {r} has {len(vals)} entries, expected 1", lineno
                )
            b[r] = vals[0]
        weights.append(w)
        biases.append(b)

    return ReluNetwork(
        weights,
        biases,
        input_normalization=InputNormalization(
            np.array(mins), np.array(maxes), np.array(means[:-1]), np.array(ranges[:-1])
        ),
        output_normalization=OutputNormalization(float(means[-1]), float(ranges[-1])),
    )


def save_nnet(net: ReluNetwork, path, comment: str = "") -> None:
    """Write ``net`` in ``.nnet`` format with round-trip (``repr``) precision."""
    norm = net.input_normalization
    if norm is None:
        n = net.n_inputs
        norm = InputNormalization(
            np.full(n, -np.finfo(float).max), np.full(n, np.finfo(float).max),
            np.zeros(n), np.ones(n),
        )
    out_norm = net.output_normalization or OutputNormalization(0.0, 1.0)

    def fmt(values) -> str:
        return ",".join(repr(float(v)) for v in values) + ","

    lines = []
    for c in comment.splitlines():
        lines.append(f"// {c}")
    widths = net.widths
    lines.append(fmt_ints([len(net.weights), widths[0], widths[-1], max(widths)]))
    lines.append(fmt_ints(widths))
    lines.append("0,")
    lines.append(fmt(norm.mins))
    lines.append(fmt(norm.maxes))
    lines.append(fmt(list(norm.means) + [out_norm.mean]))
    lines.append(fmt(list(norm.ranges) + [out_norm.range]))
    for w, b in zip(net.weights, net.biases):
        lines.extend(fmt(row) for row in w)
        lines.extend(fmt([v]) for v in b)
    Path(path).write_text("\n".join(lines) + "\n")


def fmt_ints(values) -> str:
    return ",".join(str(int(v)) for v in values) + ","


def load_json_network(path) -> ReluNetwork:
    """Minimal JSON format: ``{"weights": [...], "biases": [...], ...}``.

    Optional keys: ``widths`` (checked), ``input_normalization`` with
    ``mins/maxes/means/ranges`` and ``output_normalization`` with ``mean/range``.
    """
    data = json.loads(Path(path).read_text())
    return network_from_dict(data)


def network_from_dict(data: dict) -> ReluNetwork:
    try:
        weights = [np.array(w, dtype=float) for w in data["weights"]]
        biases = [np.array(b, dtype=float) for b in data["biases"]]
    except KeyError as exc:
        raise NetworkError(f"network document is missing {exc}") from None
    in_norm = out_norm = None
    if data.get("input_normalization"):
        d = data["input_normalization"]
        in_norm = InputNormalization(
            *(np.array(d[k], dtype=float) for k in ("mins", "maxes", "means", "ranges"))
        )
    if data.get("output_normalization"):
        d = data["output_normalization"]
        out_norm = OutputNormalization(float(d["mean"]), float(d["range"]))
    net = ReluNetwork(weights, biases, in_norm, out_norm)
    if "widths" in data and tuple(data["widths"]) != net.widths:
        raise NetworkError(f"declared widths {data['widths']} disagree with weights {net.widths}")
    return net


def network_to_dict(net: ReluNetwork) -> dict:
    data = {
        "widths": list(net.widths),
        "weights": [w.tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
    }
    if net.input_normalization is not None:
        n = net.input_normalization
        data["input_normalization"] = {
            "mins": n.mins.tolist(), "maxes": n.maxes.tolist(),
            "means": n.means.tolist(), "ranges": n.ranges.tolist(),
        }
    if net.output_normalization is not None:
        data["output_normalization"] = {
            "mean": net.output_normalization.mean, "range": net.output_normalization.range,
        }
    return data


def random_network(widths: Sequence[int], rng: np.random.Generator, scale: float = 1.0,
                   bias_scale: float = 0.5) -> ReluNetwork:
    """Gaussian-initialised network, used by tests and benchmarks."""
    weights = [rng.normal(0.0, scale / np.sqrt(m), size=(n, m)) for m, n in zip(widths, widths[1:])]
    biases = [rng.normal(0.0, bias_scale, size=n) for n in widths[1:]]
    return ReluNetwork(weights, biases)
