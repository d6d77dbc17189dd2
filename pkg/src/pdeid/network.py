"""Fully connected surrogate networks with trainable (3,2) rational activations.

Each hidden layer applies one shared RationalActivation object elementwise:
r(x) = (a3 x^3 + a2 x^2 + a1 x + a0) / (b2 x^2 + b1 x + b0), seven trainable
coefficients per layer. Initialization gives every activation the fixed
least-squares fit of that rational to the ramp max(0, x) on [-1, 1],
constrained to a3 = b2 and a2 = b1 so the far field tracks the ramp's
slope-1 branch (r(x) -> x + O(1/x)); see scripts/fit_ramp_activation.py for
the fit. Weights are Glorot-uniform, biases zero.

Checkpoints are JSON with stable keys: format, version, seed, architecture
{inputs, hidden, outputs}, layers [{weights, bias}, ...] (row-major, one row
per unit), activations [{numerator: [a3,a2,a1,a0], denominator: [b2,b1,b0]},
...]. Floats survive the round-trip bit-exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigError

# frozen output of scripts/fit_ramp_activation.py (max fit error on [-1,1]
# is RAMP_FIT_MAX_ERROR; denominator discriminant -1.2297 keeps it positive)
RAMP_INIT_NUMERATOR = (0.9264940992353079, 1.5736198150701877,
                       0.7640111344762114, 0.09007649507762311)
RAMP_INIT_DENOMINATOR = (0.9264940992353079, 1.5736198150701877, 1.0)
RAMP_FIT_MAX_ERROR = 0.09007649507762311

CHECKPOINT_FORMAT = "pdeid-network"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class NetworkArchitecture:
    """Input width 1 + n_D, hidden widths, single output."""

    n_inputs: int
    hidden: tuple
    n_outputs: int = 1

    def __post_init__(self):
        if self.n_inputs < 1:
            raise ConfigError("network needs at least one input")
        if len(self.hidden) < 1:
            raise ConfigError("network needs at least one hidden layer")
        if any(int(w) < 1 for w in self.hidden):
            raise ConfigError("zero-width hidden layer")
        if self.n_outputs != 1:
            raise ConfigError("networks are scalar-valued")
        object.__setattr__(self, "hidden", tuple(int(w) for w in self.hidden))


class RationalActivation:
    """Trainable degree-(3,2) rational function, one per hidden layer."""

    def __init__(self, numerator, denominator, tag=""):
        if len(numerator) != 4 or len(denominator) != 3:
            raise ConfigError("rational activation takes 4 numerator and "
                              "3 denominator coefficients")
        names = ("a3", "a2", "a1", "a0", "b2", "b1", "b0")
        self.coeffs = tuple(ad.leaf(f"{tag}{n}") for n in names)
        for node, value in zip(self.coeffs, (*numerator, *denominator)):
            node.set_value(float(value))

    @property
    def numerator(self):
        return tuple(c.val for c in self.coeffs[:4])

    @property
    def denominator(self):
        return tuple(c.val for c in self.coeffs[4:])

    def apply(self, x):
        a3, a2, a1, a0, b2, b1, b0 = self.coeffs
        x2 = ad.mul(x, x)
        x3 = ad.mul(x2, x)
        p = ad.affine([x3, x2, x], [a3, a2, a1], a0)
        q = ad.affine([x2, x], [b2, b1], b0)
        return ad.div(p, q)


def activation_eval(act, x):
    """Evaluate an activation at a number; raises on a zero denominator."""
    v = ad.leaf("x")
    v.set_value(float(x))
    return ad.evaluate(act.apply(v))


class Network:
    """Weight/bias leaves plus one rational activation per hidden layer."""

    def __init__(self, arch, seed=None):
        self.arch = arch
        self.seed = seed
        self.weights = []   # per layer: list of per-unit lists of leaves
        self.biases = []    # per layer: list of leaves
        widths = [arch.n_inputs, *arch.hidden, arch.n_outputs]
        for li, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
            self.weights.append([[ad.leaf(f"L{li}.w[{i},{j}]")
                                  for j in range(fan_in)]
                                 for i in range(fan_out)])
            self.biases.append([ad.leaf(f"L{li}.b[{i}]") for i in range(fan_out)])
        self.activations = [RationalActivation(RAMP_INIT_NUMERATOR,
                                               RAMP_INIT_DENOMINATOR,
                                               tag=f"act{li}.")
                            for li in range(len(arch.hidden))]

    def param_set(self):
        leaves = []
        for W, b in zip(self.weights, self.biases):
            for row in W:
                leaves.extend(row)
            leaves.extend(b)
        for act in self.activations:
            leaves.extend(act.coeffs)
        return ad.ParamSet(leaves)

    def forward(self, coords):
        """Output node for coordinate nodes (t, x1, ..); derivatives w.r.t.
        the coordinates require them to be leaves."""
        if len(coords) != self.arch.n_inputs:
            raise ConfigError(f"network expects {self.arch.n_inputs} inputs, "
                              f"got {len(coords)}")
        h = list(coords)
        n_hidden = len(self.arch.hidden)
        for li, (W, b) in enumerate(zip(self.weights, self.biases)):
            units = [ad.affine(h, row, bn) for row, bn in zip(W, b)]
            if li < n_hidden:
                act = self.activations[li]
                units = [act.apply(u) for u in units]
            h = units
        return h[0]

    def predict(self, points):
        """Evaluate at an (N, n_inputs) array of points."""
        points = np.asarray(points, dtype=np.float64)
        coords = [ad.leaf(f"in{d}") for d in range(self.arch.n_inputs)]
        out = self.forward(coords)
        for d, c in enumerate(coords):
            c.set_value(points[:, d])
        v = ad.evaluate(out)
        return np.full(len(points), v) if isinstance(v, float) else v


def init_network(arch, seed):
    """Glorot-uniform weights, zero biases, ramp-fit activations."""
    net = Network(arch, seed=seed)
    rng = np.random.default_rng(seed)
    widths = [arch.n_inputs, *arch.hidden, arch.n_outputs]
    for (fan_in, fan_out), W, b in zip(zip(widths[:-1], widths[1:]),
                                       net.weights, net.biases):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        draw = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        for i, row in enumerate(W):
            for j, w in enumerate(row):
                w.set_value(draw[i, j])
        for bn in b:
            bn.set_value(0.0)
    return net


def save_network(net, path):
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "seed": net.seed,
        "architecture": {
            "inputs": net.arch.n_inputs,
            "hidden": list(net.arch.hidden),
            "outputs": net.arch.n_outputs,
        },
        "layers": [
            {"weights": [[w.val for w in row] for row in W],
             "bias": [bn.val for bn in b]}
            for W, b in zip(net.weights, net.biases)
        ],
        "activations": [
            {"numerator": list(act.numerator),
             "denominator": list(act.denominator)}
            for act in net.activations
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)


def load_network(path):
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(f"{path}: not a network checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(f"{path}: unsupported checkpoint version "
                          f"{doc.get('version')!r}")
    arch = NetworkArchitecture(doc["architecture"]["inputs"],
                               tuple(doc["architecture"]["hidden"]),
                               doc["architecture"]["outputs"])
    net = Network(arch, seed=doc.get("seed"))
    for layer, W, b in zip(doc["layers"], net.weights, net.biases):
        for row_vals, row in zip(layer["weights"], W):
            for v, w in zip(row_vals, row):
                w.set_value(v)
        for v, bn in zip(layer["bias"], b):
            bn.set_value(v)
    for spec, act in zip(doc["activations"], net.activations):
        for node, v in zip(act.coeffs, (*spec["numerator"], *spec["denominator"])):
            node.set_value(v)
    return net
