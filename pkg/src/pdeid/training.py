"""Three-phase training: burn-in, sparsification, fine-tune.

Each phase runs full-batch Adam over the joint parameter set (every
network's weights, biases, and activation coefficients, plus the active
coefficients xi). Graphs, Adam moments, and targeted collocation sets are
rebuilt or reset at phase boundaries; xi values themselves carry across.
Coefficients whose magnitude falls below the prune threshold after burn-in
and after sparsification are permanently deactivated.

Per epoch: resample random collocation points, refresh the IRLS weights
from the current xi, evaluate the weighted total loss and its gradient,
take one Adam step, record residual magnitudes and refresh the targeted
set, append the history row, and check early stopping. All recorded losses
describe the model state entering the epoch (before the step); residual
magnitudes feeding the targeted refresh are the same pre-step values.
"""

from __future__ import annotations

import csv
import json
import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .data import load_points
from .errors import ConfigError, EmptyPDEError, NumericalError
from .losses import (CoefficientVector, CollocationState, DatasetLossGraph,
                     LossBreakdown, data_loss, lp_loss, lp_weights,
                     total_loss)
from .network import (NetworkArchitecture, init_network, save_network)
from .terms import build_eval_plan, load_library, parse_term

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
DEFAULT_PRUNE_THRESHOLD = 5e-4

PHASE_KINDS = ("burn-in", "sparsification", "fine-tune")


@dataclass(frozen=True)
class PhaseConfig:
    kind: str
    epochs: int
    lr: float = 1e-3
    w_data: float = 1.0
    w_coll: float = 1.0
    w_lp: float = 0.0
    patience: int = 0        # test-loss early stop; 0 disables
    metric_window: int = 0   # sparsity-metric plateau window; 0 disables
    metric_rtol: float = 1e-3

    def __post_init__(self):
        if self.kind not in PHASE_KINDS:
            raise ConfigError(f"unknown phase kind {self.kind!r}; expected "
                              f"one of {', '.join(PHASE_KINDS)}")
        if self.epochs < 1:
            raise ConfigError(f"{self.kind}: needs at least one epoch")
        if self.lr <= 0:
            raise ConfigError(f"{self.kind}: learning rate must be positive")
        if min(self.w_data, self.w_coll, self.w_lp) < 0:
            raise ConfigError(f"{self.kind}: loss weights must be >= 0")
        if self.kind == "sparsification":
            if self.w_lp <= 0:
                raise ConfigError("sparsification requires w_lp > 0")
        elif self.w_lp != 0:
            raise ConfigError(f"{self.kind} requires w_lp = 0, "
                              f"got {self.w_lp}")
        if self.patience < 0 or self.metric_window < 0:
            raise ConfigError(f"{self.kind}: early-stop settings must "
                              f"be >= 0")


class AdamMoments:
    """First/second moment accumulators aligned with one ParamSet."""

    def __init__(self, n):
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0


class TrainState:
    """Everything a phase needs: networks, xi, datasets, collocation."""

    def __init__(self, nets, xi, lib, plan, datasets, tests=None,
                 colloc=None):
        if len(nets) != len(datasets):
            raise ConfigError(f"{len(nets)} networks for "
                              f"{len(datasets)} datasets")
        if len(datasets) < 1:
            raise ConfigError("training needs at least one dataset")
        self.nets = list(nets)
        self.xi = xi
        self.lib = lib
        self.plan = plan
        self.datasets = list(datasets)
        self.tests = list(tests) if tests is not None \
            else [None] * len(datasets)
        if colloc is None:
            colloc = [CollocationState(ds.domain, 1000, seed=i)
                      for i, ds in enumerate(datasets)]
        self.colloc = list(colloc)
        if not (len(self.tests) == len(self.colloc) == len(self.datasets)):
            raise ConfigError("datasets, tests, and collocation states "
                              "must align")
        self.epoch = 0
        self.history = []        # per-epoch train loss rows (dicts)
        self.test_history = []   # per-epoch per-dataset test data loss
        self.xi_history = []     # per-epoch xi values + active mask
        self.phase_epochs = []   # epochs actually run, one per phase
        self.params = None
        self.moments = None

    @property
    def n_datasets(self):
        return len(self.datasets)

    def joint_params(self):
        params = self.xi.param_set()
        for net in self.nets:
            params = net.param_set() + params
        return params


def adam_step(state, grads, lr):
    """One bias-corrected Adam update over state.params."""
    grads = np.asarray(grads, dtype=np.float64)
    params = state.params
    if len(grads) != len(params):
        raise ConfigError(f"{len(grads)} gradients for "
                          f"{len(params)} parameters")
    bad = np.flatnonzero(~np.isfinite(grads))
    if bad.size:
        name = params[bad[0]].label or f"parameter {bad[0]}"
        raise NumericalError(f"non-finite gradient for {name} "
                             f"at epoch {state.epoch}")
    mom = state.moments
    mom.t += 1
    mom.m = ADAM_BETA1 * mom.m + (1.0 - ADAM_BETA1) * grads
    mom.v = ADAM_BETA2 * mom.v + (1.0 - ADAM_BETA2) * grads ** 2
    m_hat = mom.m / (1.0 - ADAM_BETA1 ** mom.t)
    v_hat = mom.v / (1.0 - ADAM_BETA2 ** mom.t)
    params.assign(params.values() - lr * (m_hat / (np.sqrt(v_hat)
                                                   + ADAM_EPS)))
    return state


def prune(xi, threshold):
    """Deactivate every |xi_k| below threshold; irreversible."""
    if threshold <= 0:
        raise ConfigError(f"prune threshold must be positive, "
                          f"got {threshold}")
    values = np.abs(xi.values())
    xi.deactivate(np.flatnonzero(xi.active & (values < threshold)))
    if xi.n_active == 0:
        raise EmptyPDEError(f"empty PDE: every coefficient fell below "
                            f"the prune threshold {threshold}")
    return xi.active


def run_phase(state, phase, phase_index=0):
    """Run one phase to its epoch cap or early stop; returns state."""
    state.params = state.joint_params()
    state.moments = AdamMoments(len(state.params))
    for cs in state.colloc:
        cs.start_phase(phase_index)

    graphs = [DatasetLossGraph(net, state.lib, state.plan, state.xi,
                               dataset=ds)
              for net, ds in zip(state.nets, state.datasets)]
    test_nodes = [data_loss(net, t) if t is not None and t.n > 0 else None
                  for net, t in zip(state.nets, state.tests)]
    parts = LossBreakdown([g.data_node for g in graphs],
                          [g.coll_node for g in graphs],
                          lp_loss(state.xi),
                          phase.w_data, phase.w_coll, phase.w_lp)
    total = total_loss(parts)

    best_test = math.inf
    stale = 0
    metric_start = len(state.history)
    epochs_run = 0
    for local_epoch in range(phase.epochs):
        for cs, graph in zip(state.colloc, graphs):
            cs.resample(local_epoch)
            graph.set_collocation(cs.all_points())
        lp_weights(state.xi)

        grads = ad.gradient(total, state.params)
        if not math.isfinite(total.val):
            raise NumericalError(f"non-finite loss at epoch {state.epoch}")
        test_row = [ad.evaluate(node) if node is not None else math.nan
                    for node in test_nodes]

        row = {"epoch": state.epoch,
               "data": [g.data_node.val for g in graphs],
               "coll": [g.coll_node.val for g in graphs],
               "lp": ad.evaluate(parts.lp_node),
               "metric": state.xi.lp_metric(),
               "n_active": state.xi.n_active}

        adam_step(state, grads, phase.lr)

        for cs, graph in zip(state.colloc, graphs):
            cs.record(graph.residual_magnitudes())
            cs.update_targeted()

        state.history.append(row)
        state.test_history.append(test_row)
        state.xi_history.append((state.epoch, state.xi.values(),
                                 state.xi.active.copy()))
        state.epoch += 1
        epochs_run += 1

        if phase.metric_window > 0:
            phase_rows = state.history[metric_start:]
            if len(phase_rows) > phase.metric_window:
                then = phase_rows[-(phase.metric_window + 1)]["metric"]
                now = phase_rows[-1]["metric"]
                if abs(now - then) < phase.metric_rtol * max(abs(then),
                                                             1e-300):
                    break
        if phase.patience > 0 and not all(math.isnan(v) for v in test_row):
            current = math.fsum(v for v in test_row if not math.isnan(v))
            if current < best_test:
                best_test = current
                stale = 0
            else:
                stale += 1
                if stale >= phase.patience:
                    break

    state.phase_epochs.append(epochs_run)
    return state


@dataclass
class IdentifiedPDE:
    lhs: object
    terms: tuple    # ((LibraryTerm, coefficient), ...) in library order
    provenance: dict


def report(pde):
    """Tabular one-liner: LHS = signed 4-decimal coefficients times terms."""
    if not pde.terms:
        raise EmptyPDEError("cannot report a PDE with no active terms")
    out = [pde.lhs.render(), " = "]
    for i, (term, coeff) in enumerate(pde.terms):
        if i == 0:
            out.append("-" if coeff < 0 else "")
        else:
            out.append(" - " if coeff < 0 else " + ")
        out.append(f"{abs(coeff):.4f}{term.render_grouped()}")
    return "".join(out)


_REPORT_TERM = re.compile(
    r"([+-]?)\s*([0-9]+\.[0-9]+)\s*((?:\([^()]+\)(?:\^[0-9]+)?)+)")


def parse_report(text):
    """Inverse of report: (lhs term, [(term, coefficient), ...])."""
    lhs_text, _, rhs_text = text.partition("=")
    if not rhs_text:
        raise ConfigError(f"no '=' in PDE report {text!r}")
    lhs = parse_term(lhs_text.strip())
    terms = []
    for sign, magnitude, body in _REPORT_TERM.findall(rhs_text):
        coeff = float(magnitude)
        if sign == "-":
            coeff = -coeff
        terms.append((parse_term(body), coeff))
    if not terms:
        raise ConfigError(f"no terms found in PDE report {text!r}")
    return lhs, terms


def _write_history(state, out_dir):
    n = state.n_datasets
    with open(out_dir / "history.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch",
                         *[f"data_loss_{i}" for i in range(n)],
                         *[f"coll_loss_{i}" for i in range(n)],
                         "lp_value", "lp_metric", "n_active"])
        for row in state.history:
            writer.writerow([row["epoch"],
                             *[repr(float(v)) for v in row["data"]],
                             *[repr(float(v)) for v in row["coll"]],
                             repr(float(row["lp"])),
                             repr(float(row["metric"])),
                             row["n_active"]])
    with open(out_dir / "test_history.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", *[f"test_data_loss_{i}"
                                    for i in range(n)]])
        for row, test in zip(state.history, state.test_history):
            writer.writerow([row["epoch"], *[repr(float(v)) for v in test]])
    k = state.xi.n_terms
    with open(out_dir / "xi_history.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", *[f"xi_{j}" for j in range(k)],
                         *[f"active_{j}" for j in range(k)]])
        for epoch, values, mask in state.xi_history:
            writer.writerow([epoch, *[repr(float(v)) for v in values],
                             *[int(b) for b in mask]])


def train(config):
    """Full pipeline: load, burn-in, prune, sparsify, prune, fine-tune."""
    lib = load_library(config.library)
    plan = build_eval_plan(lib)

    nets, datasets, tests, colloc = [], [], [], []
    for i, spec in enumerate(config.datasets):
        ds = load_points(spec.train)
        if ds.n < 1:
            raise ConfigError(f"{spec.train}: training dataset is empty")
        if lib.n_d > ds.domain.n_d:
            raise ConfigError(f"library needs {lib.n_d} spatial "
                              f"dimension(s); dataset {i} has "
                              f"{ds.domain.n_d}")
        datasets.append(ds)
        tests.append(load_points(spec.test) if spec.test else None)
        arch = NetworkArchitecture(1 + ds.domain.n_d, tuple(spec.hidden))
        nets.append(init_network(arch, spec.net_seed))
        colloc.append(CollocationState(ds.domain, config.n_random_coll,
                                       spec.colloc_seed))

    xi = CoefficientVector(lib.n_rhs, p=config.p, delta=config.delta)
    state = TrainState(nets, xi, lib, plan, datasets, tests, colloc)

    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    try:
        for phase_index, phase in enumerate(config.phases):
            run_phase(state, phase, phase_index)
            for i, net in enumerate(state.nets):
                save_network(net, out_dir / f"checkpoint_phase"
                                            f"{phase_index}_net{i}.json")
            if phase_index < len(config.phases) - 1:
                prune(state.xi, config.prune_threshold)
    finally:
        _write_history(state, out_dir)

    values = state.xi.values()
    pde = IdentifiedPDE(
        lhs=lib.lhs,
        terms=tuple((lib.rhs[k], values[k])
                    for k in state.xi.active_indices()),
        provenance={
            "library": str(config.library),
            "config_sha256": config.digest(),
            "seeds": {"net": [s.net_seed for s in config.datasets],
                      "collocation": [s.colloc_seed
                                      for s in config.datasets]},
            "phase_epochs": list(state.phase_epochs),
            "p": config.p,
            "delta": config.delta,
            "prune_threshold": config.prune_threshold,
        })

    text = report(pde)
    (out_dir / "identified_pde.txt").write_text(text + "\n")
    (out_dir / "provenance.json").write_text(
        json.dumps(pde.provenance, indent=1, sort_keys=True) + "\n")
    return pde
