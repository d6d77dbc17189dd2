"""The three training losses and collocation-point management.

Total loss = w_Data * sum_i Data_i + w_Coll * sum_i Coll_i + w_Lp * Lp with
Data the mean squared prediction error, Coll the mean squared PDE residual
over random plus targeted collocation points, and Lp the reweighted proxy
sum_k a_k xi_k^2 whose weights a_k = 1/max(delta, |xi_k|^(2-p)) are frozen
at epoch start. Holding a_k constant through backpropagation makes the Lp
gradient exactly 2 a_k xi_k, and at epoch start the proxy equals
sum_k |xi_k|^p whenever every active |xi_k|^(2-p) clears delta.

Graphs here are built once per phase and reused every epoch: coordinate
leaves take fresh (N,) arrays when collocation points are resampled, so the
per-epoch cost is pure array arithmetic. Only ACTIVE coefficients enter a
graph; pruning therefore requires a rebuild, which the trainer does at phase
boundaries.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .data import sample_domain_points
from .errors import ConfigError
from .terms import build_derivative_nodes, build_term_node

DEFAULT_P = 0.1
DEFAULT_DELTA = 1e-8


class CoefficientVector:
    """Trainable xi with an irreversible active mask and IRLS weights."""

    def __init__(self, n_terms, p=DEFAULT_P, delta=DEFAULT_DELTA):
        n_terms = int(n_terms)
        if n_terms < 1:
            raise ConfigError("need at least one RHS coefficient")
        if not 0.0 < p < 2.0:
            raise ConfigError(f"p must lie in (0, 2), got {p}")
        if delta <= 0.0:
            raise ConfigError(f"delta must be positive, got {delta}")
        self.p = float(p)
        self.delta = float(delta)
        self.xi = [ad.leaf(f"xi[{k}]") for k in range(n_terms)]
        for leaf in self.xi:
            leaf.set_value(0.0)
        self.active = np.ones(n_terms, dtype=bool)
        self.a_leaves = [ad.leaf(f"a[{k}]") for k in range(n_terms)]
        self.update_lp_weights()

    @property
    def n_terms(self):
        return len(self.xi)

    @property
    def n_active(self):
        return int(self.active.sum())

    def values(self):
        return np.array([leaf.val for leaf in self.xi])

    def weights(self):
        return np.array([leaf.val for leaf in self.a_leaves])

    def active_indices(self):
        return np.flatnonzero(self.active)

    def param_set(self):
        return ad.ParamSet([self.xi[k] for k in self.active_indices()])

    def deactivate(self, indices):
        """Permanently zero and exclude the given coefficients."""
        for k in indices:
            self.active[k] = False
            self.xi[k].set_value(0.0)

    def update_lp_weights(self):
        """Epoch-start IRLS refresh: a_k = 1 / max(delta, |xi_k|^(2 - p))."""
        a = 1.0 / np.maximum(self.delta,
                             np.abs(self.values()) ** (2.0 - self.p))
        for leaf, value in zip(self.a_leaves, a):
            leaf.set_value(float(value))
        return a

    def lp_metric(self):
        """sum over active k of |xi_k|^p, the sparsity measure reported
        per epoch and watched by fine-tune early stopping."""
        vals = self.values()[self.active]
        return float(np.sum(np.abs(vals) ** self.p))


def lp_weights(xi):
    return xi.update_lp_weights()


def lp_loss(xi):
    """sum over active k of a_k xi_k^2 with a_k as constants."""
    idx = xi.active_indices()
    return ad.affine([ad.intpow(xi.xi[k], 2) for k in idx],
                     [xi.a_leaves[k] for k in idx],
                     ad.const(0.0))


def sample_random_collocation(domain, n, seed):
    """n i.i.d. uniform points over (0, t_max] x box; fresh every epoch."""
    return sample_domain_points(domain, n, seed)


def select_targeted(magnitudes):
    """Mask of residual magnitudes exceeding mean + 3 * population std."""
    magnitudes = np.asarray(magnitudes, dtype=np.float64)
    if magnitudes.size == 0:
        return np.zeros(0, dtype=bool)
    return magnitudes > magnitudes.mean() + 3.0 * magnitudes.std()


class CollocationState:
    """Random and targeted collocation points for one dataset's domain."""

    def __init__(self, domain, n_random, seed, phase_index=0):
        if n_random < 1:
            raise ConfigError("need at least one random collocation point")
        self.domain = domain
        self.n_random = int(n_random)
        self.seed = int(seed)
        self.phase_index = int(phase_index)
        self.random_points = None
        self.targeted_points = np.empty((0, 1 + domain.n_d))
        self._recorded_points = None
        self.last_magnitudes = None

    def start_phase(self, phase_index):
        """Phase boundaries discard targeted points and recorded residuals."""
        self.phase_index = int(phase_index)
        self.targeted_points = np.empty((0, 1 + self.domain.n_d))
        self._recorded_points = None
        self.last_magnitudes = None

    def resample(self, epoch):
        self.random_points = sample_random_collocation(
            self.domain, self.n_random, [self.seed, self.phase_index, epoch])

    def all_points(self):
        if self.random_points is None:
            raise ConfigError("collocation points not sampled yet")
        return np.concatenate([self.random_points, self.targeted_points])

    @property
    def n_points(self):
        return len(self.all_points())

    def record(self, magnitudes):
        magnitudes = np.asarray(magnitudes, dtype=np.float64)
        points = self.all_points()
        if len(magnitudes) != len(points):
            raise ConfigError(f"{len(magnitudes)} residual magnitudes for "
                              f"{len(points)} collocation points")
        self._recorded_points = points
        self.last_magnitudes = magnitudes

    def update_targeted(self):
        """Next epoch's targeted set: recorded points with outlier residuals.
        Previous targeted points drop out unless they re-qualify."""
        if self.last_magnitudes is None:
            raise ConfigError("no residuals recorded this epoch")
        mask = select_targeted(self.last_magnitudes)
        self.targeted_points = self._recorded_points[mask]
        return self.targeted_points


class DatasetLossGraph:
    """Static loss graphs for one (network, dataset) pair.

    The data subgraph binds the dataset's points once at construction; the
    collocation subgraph's coordinate leaves are reassigned every epoch via
    set_collocation, which also rescales the mean by the current point
    count. The residual covers only the active coefficients at build time.
    """

    def __init__(self, net, lib, plan, xi, dataset=None):
        self.net = net
        self.xi = xi
        n_inputs = net.arch.n_inputs

        self.coll_coords = [ad.leaf(f"cc{d}") for d in range(n_inputs)]
        out = net.forward(self.coll_coords)
        derivs = build_derivative_nodes(out, self.coll_coords, plan)
        f0 = build_term_node(lib.lhs, derivs)
        idx = xi.active_indices()
        terms = [build_term_node(lib.rhs[k], derivs) for k in idx]
        self.term_nodes = terms
        self.f0_node = f0
        self.residual_node = ad.sub(
            f0, ad.affine(terms, [xi.xi[k] for k in idx], ad.const(0.0)))
        self._inv_n_coll = ad.leaf("1/n_coll")
        self.coll_node = ad.mul(ad.vsum(ad.intpow(self.residual_node, 2)),
                                self._inv_n_coll)
        self._n_coll = None

        self.data_node = None
        if dataset is not None:
            self.data_node = _build_data_node(net, dataset)

    def set_collocation(self, points):
        points = np.asarray(points, dtype=np.float64)
        if points.ndim != 2 or points.shape[0] < 1:
            raise ConfigError("collocation set must be a nonempty 2-D array")
        if points.shape[1] != len(self.coll_coords):
            raise ConfigError(f"collocation points have {points.shape[1]} "
                              f"coordinates, expected "
                              f"{len(self.coll_coords)}")
        for d, leaf in enumerate(self.coll_coords):
            leaf.set_value(points[:, d])
        self._n_coll = points.shape[0]
        self._inv_n_coll.set_value(1.0 / points.shape[0])

    def residual_magnitudes(self):
        """|R_PDE| per collocation point; evaluate the loss first."""
        val = self.residual_node.val
        if np.isscalar(val) or isinstance(val, float):
            return np.array([abs(val)])
        return np.abs(val)


def _build_data_node(net, dataset):
    if dataset is None or dataset.n < 1:
        raise ConfigError("data loss needs a nonempty dataset")
    n_inputs = net.arch.n_inputs
    if dataset.coords.shape[1] != n_inputs:
        raise ConfigError(f"dataset has {dataset.coords.shape[1]} "
                          f"coordinates but the network takes {n_inputs}")
    coords = [ad.leaf(f"dc{d}") for d in range(n_inputs)]
    target = ad.leaf("target")
    err = ad.sub(net.forward(coords), target)
    node = ad.mul(ad.vsum(ad.intpow(err, 2)), ad.const(1.0 / dataset.n))
    for d, leaf in enumerate(coords):
        leaf.set_value(dataset.coords[:, d])
    target.set_value(dataset.values)
    return node


def data_loss(net, dataset):
    """Mean squared prediction error as a scalar node over fixed points."""
    return _build_data_node(net, dataset)


def pde_residual(net, xi, lib, plan, point):
    """f0 - sum of active xi_k f_k at one point (or row-wise at many)."""
    point = np.asarray(point, dtype=np.float64)
    single = point.ndim == 1
    pts = np.atleast_2d(point)
    if pts.shape[1] != net.arch.n_inputs:
        raise ConfigError(f"point has {pts.shape[1]} coordinates but the "
                          f"network takes {net.arch.n_inputs}")
    graph = DatasetLossGraph(net, lib, plan, xi)
    if single:
        for d, leaf in enumerate(graph.coll_coords):
            leaf.set_value(float(pts[0, d]))
    else:
        for d, leaf in enumerate(graph.coll_coords):
            leaf.set_value(pts[:, d])
    ad.evaluate(graph.residual_node)
    return graph.residual_node


def collocation_loss(net, xi, lib, plan, colloc):
    """Mean |R_PDE|^2 over the collocation set; records |R| per point."""
    graph = DatasetLossGraph(net, lib, plan, xi)
    graph.set_collocation(colloc.all_points())
    ad.evaluate(graph.coll_node)
    colloc.record(graph.residual_magnitudes())
    return graph.coll_node


class LossBreakdown:
    """Per-dataset loss nodes plus the weights that combine them.

    total_loss attaches data_part / coll_part / lp_part, the weighted
    contribution nodes, so per-epoch reporting can read each piece of the
    exact composition.
    """

    def __init__(self, data_nodes, coll_nodes, lp_node, w_data, w_coll, w_lp):
        if min(w_data, w_coll, w_lp) < 0:
            raise ConfigError("loss weights must be >= 0")
        self.data_nodes = list(data_nodes)
        self.coll_nodes = list(coll_nodes)
        self.lp_node = lp_node
        self.w_data = float(w_data)
        self.w_coll = float(w_coll)
        self.w_lp = float(w_lp)
        self.data_part = None
        self.coll_part = None
        self.lp_part = None


def _fold_sum(nodes):
    acc = None
    for node in nodes:
        acc = node if acc is None else ad.add(acc, node)
    return acc if acc is not None else ad.const(0.0)


def total_loss(parts):
    """w_Data * sum(data) + w_Coll * sum(coll) + w_Lp * lp, left-folded."""
    parts.data_part = ad.mul(ad.const(parts.w_data),
                             _fold_sum(parts.data_nodes))
    parts.coll_part = ad.mul(ad.const(parts.w_coll),
                             _fold_sum(parts.coll_nodes))
    total = ad.add(parts.data_part, parts.coll_part)
    if parts.lp_node is not None and parts.w_lp > 0.0:
        parts.lp_part = ad.mul(ad.const(parts.w_lp), parts.lp_node)
        total = ad.add(total, parts.lp_part)
    else:
        parts.lp_part = None
    return total
