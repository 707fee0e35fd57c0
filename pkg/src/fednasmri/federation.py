"""Single-process simulation of federated architecture search and
fairness-weighted federated training.

Clients never share data; each round they receive immutable copies of the
global arrays, train locally and return updated arrays. Every client draws
its batch order from a generator seeded by ``(master_seed, client_id,
round, phase)``, and aggregation always sums in ascending client order, so
sequential and threaded execution give identical server states.
"""

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import AggregationError, ConfigurationError, ContractError
from .metrics import fairness_stats
from .optim import make_optimizer
from .reconstructor import UnrolledModel
from .search_space import ArchEncoding, CellStack, discretize

_SEARCH, _TRAIN, _INIT = 1, 2, 3


@dataclass
class FederationConfig:
    num_clients: int = 3
    rounds: int = 10
    local_epochs: int = 5
    lr_alpha: float = 1e-4
    lr_theta: float = 1e-3
    mix_coeff: float = 1.0
    gamma: float = 0.1
    fairness_enabled: bool = True
    batch_size: int = 4
    master_seed: int = 0
    alpha_weight_decay: float = 1e-3
    weight_decay: float = 0.0
    optimizer: str = "adam"
    workers: int = 1
    eval_batch: int = 16
    dtype: str = "float64"

    def __post_init__(self):
        if self.num_clients < 1 or self.rounds < 0 or self.local_epochs < 1:
            raise ConfigurationError("need num_clients >= 1, rounds >= 0, local_epochs >= 1")
        if self.lr_alpha <= 0 or self.lr_theta <= 0:
            raise ConfigurationError("learning rates must be positive")
        if self.gamma < 0:
            raise ConfigurationError("gamma must be >= 0")
        if self.batch_size < 1 or self.workers < 1:
            raise ConfigurationError("batch_size and workers must be >= 1")
        if self.optimizer not in ("adam", "adamw", "sgd"):
            raise ConfigurationError(f"unknown optimizer {self.optimizer!r}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigurationError(f"unsupported dtype {self.dtype!r}")


@dataclass
class ClientState:
    """One site. ``data`` holds SampleSets under ``train``/``val``/``test``."""

    client_id: int
    data: object
    local_theta: dict = None
    local_alpha: np.ndarray = None
    prev_local_loss: float = None
    opt_state: dict = field(default_factory=dict)

    @property
    def sample_count(self):
        return len(self.data.train)


@dataclass
class AggregationWeights:
    a: np.ndarray

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=np.float64)
        if self.a.ndim != 1 or np.any(self.a < 0) or abs(self.a.sum() - 1.0) > 1e-9:
            raise ContractError(f"aggregation weights must lie on the simplex: {self.a}")

    @classmethod
    def uniform(cls, n):
        return cls(np.full(n, 1.0 / n))

    @classmethod
    def by_samples(cls, counts):
        counts = np.asarray(counts, dtype=np.float64)
        return cls(counts / counts.sum())

    def __array__(self, dtype=None, copy=None):
        return self.a if dtype is None else self.a.astype(dtype)

    def __len__(self):
        return len(self.a)


@dataclass
class ServerState:
    global_theta: dict
    weights: AggregationWeights
    global_alpha: np.ndarray = None
    round: int = 0


@dataclass
class RoundReport:
    round: int
    client_ids: list
    gaps: list
    global_losses: list
    local_losses: list
    weights: list
    mean_global_loss: float
    std_global_loss: float
    phase: str = "train"

    def to_json(self):
        return json.dumps(asdict(self))


# helpers ------------------------------------------------------------------------

def client_rng(cfg, client_id, round_idx, phase):
    return np.random.default_rng([cfg.master_seed, client_id, round_idx, phase])


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def _as_params(arrays, requires_grad):
    if requires_grad:
        return {k: ad.Parameter(k, v) for k, v in arrays.items()}
    return {k: ad.Tensor(v) for k, v in arrays.items()}


def _copy(arrays):
    return {k: np.array(v, copy=True) for k, v in arrays.items()}


def evaluate_loss(model, theta, samples, alpha=None, batch_size=16):
    """Mean squared error of ``model`` over ``samples`` in fixed order."""
    n = len(samples)
    if n == 0:
        raise ConfigurationError("cannot evaluate on an empty split")
    params = _as_params(theta, False)
    alpha_t = None if alpha is None else ad.Tensor(alpha)
    total = 0.0
    for start in range(0, n, batch_size):
        idx = np.arange(start, min(n, start + batch_size))
        loss = model.loss(params, alpha_t, samples.batch(idx))
        total += loss.item() * len(idx)
    return total / n


def _run_clients(fn, clients, workers):
    if workers > 1 and len(clients) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, clients))
    return [fn(c) for c in clients]


def _alpha_optimizer(cfg):
    kind = "sgd" if cfg.optimizer == "sgd" else "adam"
    return make_optimizer(kind, cfg.lr_alpha, cfg.alpha_weight_decay)


def _theta_optimizer(cfg):
    return make_optimizer(cfg.optimizer, cfg.lr_theta, cfg.weight_decay)


# aggregation ----------------------------------------------------------------------

def aggregate(updates, weights=None):
    """Weighted elementwise average of client parameter sets.

    ``updates`` is a list of ``(params, sample_count)`` in ascending client
    order; ``params`` is an array or a ``{name: array}`` dict. Without
    explicit ``weights`` the sample counts are normalized. The sum is taken
    as offsets from the first client, so identical inputs come back exactly.
    """
    if not updates:
        raise AggregationError("nothing to aggregate")
    if weights is None:
        counts = np.array([n for _, n in updates], dtype=np.float64)
        weights = counts / counts.sum()
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (len(updates),):
        raise AggregationError(f"{weights.size} weights for {len(updates)} updates")
    if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-9:
        raise AggregationError(f"aggregation weights must lie on the simplex: {weights}")
    first = updates[0][0]
    if isinstance(first, dict):
        names = list(first)
        for params, _ in updates[1:]:
            if list(params) != names or any(np.shape(params[k]) != np.shape(first[k]) for k in names):
                raise AggregationError("client parameter sets differ in structure")
        return {k: _weighted_average([p[k] for p, _ in updates], weights) for k in names}
    for params, _ in updates[1:]:
        if np.shape(params) != np.shape(first):
            raise AggregationError("client parameter arrays differ in shape")
    return _weighted_average([p for p, _ in updates], weights)


def _weighted_average(arrays, weights):
    base = np.asarray(arrays[0])
    acc = base.astype(np.float64)
    for w, arr in zip(weights[1:], arrays[1:]):
        acc = acc + w * (np.asarray(arr, dtype=np.float64) - base)
    return acc.astype(base.dtype, copy=False) if base.dtype.kind == "f" else acc


# fairness ----------------------------------------------------------------------------

def compute_risk_gap(client, theta_global, model, alpha=None, batch_size=16):
    """Validation loss of the global model minus the client's stored local loss."""
    if client.prev_local_loss is None:
        raise ContractError(f"client {client.client_id} has no previous local model yet")
    return evaluate_loss(model, theta_global, client.data.val, alpha, batch_size) - client.prev_local_loss


def update_fair_weights(a_prev, gaps, gamma):
    """Raise the weight of clients whose gap is positive, then renormalize.

    Each positive gap adds ``gamma * gap / max(gaps)``; non-positive gaps
    leave the weight unchanged.
    """
    a = np.asarray(a_prev, dtype=np.float64)
    AggregationWeights(a)
    g = np.asarray(gaps, dtype=np.float64)
    if g.shape != a.shape:
        raise ContractError(f"{len(g)} gaps for {len(a)} weights")
    if np.isnan(g).any():
        raise ContractError("risk gap is NaN")
    if gamma < 0:
        raise ContractError("gamma must be >= 0")
    top = g.max()
    if top <= 0:
        return AggregationWeights(a.copy())
    beta = np.where(g > 0, a + gamma * np.maximum(g, 0) / top, a)
    return AggregationWeights(beta / beta.sum())


# searching phase -------------------------------------------------------------------

def local_search_step(client, theta, alpha, cfg, model, round_idx=1):
    """Run ``local_epochs`` of joint architecture/weight updates on one client.

    Per mini-batch: the architecture gradient mixes training and validation
    losses (``mix_coeff`` weights the latter); weights follow the training
    loss only. Returns ``(alpha_hat, theta_hat)``.
    """
    train, val = client.data.train, client.data.val
    if len(train) == 0 or len(val) == 0:
        raise ConfigurationError(f"client {client.client_id} needs nonempty train and val splits")
    rng = client_rng(cfg, client.client_id, round_idx, _SEARCH)
    theta = _copy(theta)
    alpha = np.array(alpha, copy=True)
    opt_a = client.opt_state.get("alpha") or _alpha_optimizer(cfg)
    opt_t = client.opt_state.get("theta") or _theta_optimizer(cfg)
    for _ in range(cfg.local_epochs):
        val_order = rng.permutation(len(val))
        for b, idx in enumerate(_batches(len(train), cfg.batch_size, rng)):
            params = _as_params(theta, True)
            alpha_p = ad.Parameter("alpha", alpha)
            params_all = dict(params, alpha=alpha_p)
            g_tr = ad.grad(model.loss(params, alpha_p, train.batch(idx)), params_all)
            g_alpha = g_tr.pop("alpha")
            if cfg.mix_coeff != 0:
                vb = np.take(val_order, np.arange(b * cfg.batch_size, (b + 1) * cfg.batch_size), mode="wrap")
                params_v = _as_params(theta, False)
                alpha_v = ad.Parameter("alpha", alpha)
                g_val = ad.grad(model.loss(params_v, alpha_v, val.batch(vb)), {"alpha": alpha_v})["alpha"]
                g_alpha = g_alpha + cfg.mix_coeff * g_val
            alpha = opt_a.step({"alpha": alpha}, {"alpha": g_alpha})["alpha"]
            theta = opt_t.step(theta, g_tr)
    client.opt_state["alpha"], client.opt_state["theta"] = opt_a, opt_t
    client.local_alpha, client.local_theta = alpha, theta
    return alpha, theta


@dataclass
class SearchResult:
    arch: object
    alpha: np.ndarray
    theta: dict
    reports: list

    def __iter__(self):
        return iter((self.arch, self.alpha, self.theta))


def build_supernet(channels=16, cells=3, topology=None, iterations=3, lambda_init=0.05):
    return UnrolledModel(CellStack(channels, cells, topology), iterations, lambda_init)


def searcher_run(cfg, clients, model, theta0=None, alpha0=None, on_round=None):
    """Federated differentiable search; returns the discretized architecture,
    final logits, final supernet weights and per-round reports."""
    if not model.is_supernet:
        raise ConfigurationError("searcher_run needs a supernet model")
    clients = sorted(clients, key=lambda c: c.client_id)
    denoiser = model.denoiser
    theta = theta0 if theta0 is not None else model.init_params(
        np.random.default_rng([cfg.master_seed, 0, 0, _INIT]), cfg.dtype)
    alpha = ArchEncoding.uniform(denoiser.topology.num_edges).logits if alpha0 is None else alpha0
    alpha = np.array(alpha, dtype=cfg.dtype)
    counts = [c.sample_count for c in clients]
    reports = [_search_report(0, clients, model, theta, alpha, counts, cfg)]
    if on_round:
        on_round(reports[-1])
    for r in range(1, cfg.rounds + 1):
        results = _run_clients(lambda c: local_search_step(c, theta, alpha, cfg, model, r), clients, cfg.workers)
        alpha = aggregate([(a, n) for (a, _), n in zip(results, counts)])
        theta = aggregate([(t, n) for (_, t), n in zip(results, counts)])
        reports.append(_search_report(r, clients, model, theta, alpha, counts, cfg))
        if on_round:
            on_round(reports[-1])
    arch = discretize(ArchEncoding(alpha), denoiser.topology, denoiser.channels, denoiser.cells)
    return SearchResult(arch, alpha, theta, reports)


def _search_report(r, clients, model, theta, alpha, counts, cfg):
    losses = [evaluate_loss(model, theta, c.data.val, alpha, cfg.eval_batch) for c in clients]
    mean, std = fairness_stats(losses)
    w = list(np.asarray(counts, dtype=np.float64) / sum(counts))
    return RoundReport(r, [c.client_id for c in clients], [None] * len(clients), losses,
                       [None] * len(clients), w, mean, std, phase="search")


# training phase --------------------------------------------------------------------

def local_train(client, theta, cfg, model, round_idx):
    train = client.data.train
    if len(train) == 0:
        raise ConfigurationError(f"client {client.client_id} has no training samples")
    rng = client_rng(cfg, client.client_id, round_idx, _TRAIN)
    theta = _copy(theta)
    opt = client.opt_state.get("theta") or _theta_optimizer(cfg)
    for _ in range(cfg.local_epochs):
        for idx in _batches(len(train), cfg.batch_size, rng):
            params = _as_params(theta, True)
            grads = ad.grad(model.loss(params, None, train.batch(idx)), params)
            theta = opt.step(theta, grads)
    client.opt_state["theta"] = opt
    return theta


def _client_round(client, theta_global, cfg, model, round_idx):
    global_loss = evaluate_loss(model, theta_global, client.data.val, None, cfg.eval_batch)
    gap = None if client.prev_local_loss is None else global_loss - client.prev_local_loss
    theta_hat = local_train(client, theta_global, cfg, model, round_idx)
    local_loss = evaluate_loss(model, theta_hat, client.data.val, None, cfg.eval_batch)
    client.local_theta = theta_hat
    client.prev_local_loss = local_loss
    return gap, global_loss, local_loss, theta_hat


def trainer_round(server, clients, cfg, model):
    """One communication round of fairness-adjusted federated training."""
    clients = sorted(clients, key=lambda c: c.client_id)
    r = server.round + 1
    theta = server.global_theta
    results = _run_clients(lambda c: _client_round(c, theta, cfg, model, r), clients, cfg.workers)
    gaps = [res[0] for res in results]
    counts = [c.sample_count for c in clients]
    if not cfg.fairness_enabled:
        weights = AggregationWeights.by_samples(counts)
    elif r >= 2 and all(g is not None for g in gaps):
        weights = update_fair_weights(server.weights, gaps, cfg.gamma)
    else:
        weights = server.weights
    server.global_theta = aggregate([(res[3], n) for res, n in zip(results, counts)], weights.a)
    server.weights = weights
    server.round = r
    global_losses = [res[1] for res in results]
    mean, std = fairness_stats(global_losses)
    return RoundReport(r, [c.client_id for c in clients], gaps, global_losses,
                       [res[2] for res in results], [float(x) for x in weights.a], mean, std)


def build_model(arch, iterations=3, lambda_init=0.05):
    return UnrolledModel(CellStack(arch=arch), iterations, lambda_init)


def trainer_run(cfg, clients, arch, iterations=3, theta0=None, on_round=None, model=None):
    """``cfg.rounds`` training rounds on a freshly initialized discrete model.

    ``on_round(report, server)`` is called after every round (used for
    streaming reports and periodic checkpoints).
    """
    model = model or build_model(arch, iterations)
    theta = theta0 if theta0 is not None else model.init_params(
        np.random.default_rng([cfg.master_seed, 0, 1, _INIT]), cfg.dtype)
    server = ServerState(_copy(theta), AggregationWeights.uniform(len(clients)))
    reports = []
    for _ in range(cfg.rounds):
        reports.append(trainer_round(server, clients, cfg, model))
        if on_round:
            on_round(reports[-1], server)
    return server.global_theta, reports
