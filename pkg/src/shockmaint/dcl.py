"""Rollout-based approximate policy iteration with a neural classifier.

Every epoch the assets are visited in a random order and each asset's
replace/postpone choice is a separate classification problem.  Training
states come from simulating the current policy; each sub-decision whose
restricted action set has two members is labelled by comparing rollouts of
both actions under the current policy, and a network trained on the labels
becomes the next generation.
"""

from __future__ import annotations

import csv
import logging
import math
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels as K
from .bayes import AssetBelief
from .degradation import DegradationParams, sample_period
from .evaluator import EvalReport, evaluate
from .heuristics import ThresholdPolicy
from .mlp import MLP, TrainReport, train_classifier
from .network import L1, L2, NetworkConfig, NetworkState, RolloutStart, kernel_instance, model_source, new_component
from .policy import Policy, pack_policy

log = logging.getLogger(__name__)

VARIANTS = {"f1_L2": K.FEAT_F1, "f2_L1": K.FEAT_F2, "f3_L1": K.FEAT_F3}
_TAG_LABEL = 0x1ABE1
_TAG_COLLECT = 0xC011EC7


def feature_dim(M: int, variant: str) -> int:
    return (6 if variant == "f3_L1" else 4) * M + 1


def _check_variant(variant: str) -> None:
    if variant not in VARIANTS:
        raise ValueError(f"unknown feature variant {variant!r}; use one of {sorted(VARIANTS)}")


def extract_features(config: NetworkConfig, state: NetworkState, m: int, eta: bool,
                     variant: str = "f3_L1") -> np.ndarray:
    """Feature vector for deciding asset ``m`` in the epoch sub-state ``state``.

    ``f1_L2`` blocks are (x, lam, q, iota), ``f2_L1`` replaces (lam, q) by the
    posterior means and ``f3_L1`` blocks are (x, lam_hat, q_hat, k, t, iota);
    the opportunity flag ``eta`` is appended.  Damage is clipped at the
    failure level.
    """
    _check_variant(variant)
    if variant == "f1_L2" and state.mode != L2:
        raise ValueError("f1_L2 features need the true parameters (an L2 state)")
    M = config.M
    w = 6 if variant == "f3_L1" else 4
    out = np.zeros(M * w + 1)
    for i, (asset, b) in enumerate(zip(config.assets, state.beliefs)):
        p = asset.prior
        o = i * w
        out[o] = min(b.x, asset.xi)
        if variant == "f1_L2":
            out[o + 1] = state.params[i].lam
            out[o + 2] = state.params[i].q
        else:
            out[o + 1] = (p.alpha + b.k) / (p.beta + b.t)
            out[o + 2] = (p.a + b.x) / (p.a + p.b + b.x + b.k)
        if variant == "f3_L1":
            out[o + 3] = b.k
            out[o + 4] = b.t
        out[o + w - 1] = 1.0 if i == m else 0.0
    out[M * w] = 1.0 if eta else 0.0
    return out


def restricted_actions(x: int, tau_pm: int, tau_opm: int, delta: float = 0.5, zeta: float = 1.5,
                       failed: bool = False) -> tuple[int, ...]:
    """Actions worth considering around the two-threshold policy."""
    if failed:
        return (1,)
    if x <= delta * tau_opm:
        return (0,)
    if x >= zeta * tau_pm:
        return (1,)
    return (0, 1)


# ---------------------------------------------------------------------------
# neural policy


@dataclass
class NNPolicy(Policy):
    """Sequential neural policy on a restricted action set.

    ``variant`` selects the features the network is fed.  A network trained
    on ``f1_L2`` features can be run with ``f2_L1`` (posterior means in place
    of the true parameters), which makes it usable without parameter
    knowledge.
    """

    model: MLP
    tau_pm: tuple[int, ...]
    tau_opm: tuple[int, ...]
    variant: str = "f3_L1"
    delta: float = 0.5
    zeta: float = 1.5
    name: str = "nn"

    def __post_init__(self):
        _check_variant(self.variant)
        self.tau_pm = tuple(int(v) for v in self.tau_pm)
        self.tau_opm = tuple(int(v) for v in self.tau_opm)
        M = len(self.tau_pm)
        if self.model.input_dim != feature_dim(M, self.variant):
            raise ValueError(f"network input {self.model.input_dim} does not fit {self.variant} "
                             f"features of {M} assets ({feature_dim(M, self.variant)})")

    @property
    def info(self) -> str:
        return "L2" if self.variant == "f1_L2" else "any"

    @classmethod
    def from_thresholds(cls, model: MLP, base: ThresholdPolicy, **kw) -> "NNPolicy":
        return cls(model, base.tau_pm, base.tau_opm, **kw)

    def with_variant(self, variant: str) -> "NNPolicy":
        return NNPolicy(self.model, self.tau_pm, self.tau_opm, variant, self.delta, self.zeta,
                        f"{self.name}[{variant}]")

    def kernel_policy(self, config: NetworkConfig):
        if len(self.tau_pm) != config.M:
            raise ValueError("policy and instance differ in the number of assets")
        return pack_policy(K.POL_MLP, config.M, self.tau_pm, self.tau_opm, variant=VARIANTS[self.variant],
                           delta=self.delta, zeta=self.zeta, weights=self.model.kernel_weights())

    def decide_one(self, config: NetworkConfig, state: NetworkState, m: int, eta: bool) -> int:
        x = state.beliefs[m].x
        allowed = restricted_actions(x, self.tau_pm[m], self.tau_opm[m], self.delta, self.zeta,
                                     x >= config.xi[m])
        if len(allowed) == 1:
            return allowed[0]
        f = extract_features(config, state, m, eta, self.variant)
        return int(self.model.predict(f)[0])

    def decide(self, config: NetworkConfig, state: NetworkState, order: Sequence[int] | None = None,
               rng: np.random.Generator | None = None) -> np.ndarray:
        return run_epoch(config, state, self, order, rng)[0]

    # model file: policy header, then the network block
    _MAGIC = b"SMPOL001"

    def save(self, path) -> None:
        M = len(self.tau_pm)
        head = struct.pack("<8sqqdd", self._MAGIC, list(VARIANTS).index(self.variant), M, self.delta, self.zeta)
        head += struct.pack(f"<{2 * M}q", *self.tau_pm, *self.tau_opm)
        with open(path, "wb") as fh:
            fh.write(head + self.model.to_bytes())

    @classmethod
    def load(cls, path) -> "NNPolicy":
        buf = open(path, "rb").read()
        magic, v, M, delta, zeta = struct.unpack_from("<8sqqdd", buf, 0)
        if magic != cls._MAGIC:
            raise ValueError(f"{path} is not a neural policy file")
        o = struct.calcsize("<8sqqdd")
        taus = struct.unpack_from(f"<{2 * M}q", buf, o)
        o += 16 * M
        model, _ = MLP.from_bytes(buf, o)
        return cls(model, taus[:M], taus[M:], list(VARIANTS)[v], delta, zeta)


def run_epoch(config: NetworkConfig, state: NetworkState, policy: Policy, order=None,
              rng: np.random.Generator | None = None, epsilon: float = 0.0, restrict=None, on_task=None):
    """Decide one epoch asset by asset, applying each replacement immediately.

    ``restrict(m, x)`` gives the restricted action set; sub-decisions with two
    allowed actions are reported to ``on_task(substate, order, j, eta,
    setup_paid)`` and explored with probability ``epsilon``.  Returns the
    joint action and the post-action state.
    """
    M = config.M
    order = list(range(M)) if order is None else [int(m) for m in order]
    failed = state.failed(config)
    eta = bool(failed.any())
    setup = False
    beliefs = list(state.beliefs)
    params = None if state.params is None else list(state.params)
    a = np.zeros(M, dtype=np.int64)
    for j, m in enumerate(order):
        sub = NetworkState(tuple(beliefs), state.mode, None if params is None else tuple(params))
        if failed[m]:
            am = 1
        else:
            allowed = (0, 1) if restrict is None else restrict(m, beliefs[m].x)
            if len(allowed) == 2 and on_task is not None:
                on_task(sub, order, j, eta, setup)
            am = policy.decide_one(config, sub, m, eta)
            if len(allowed) == 2 and epsilon > 0.0 and rng.random() < epsilon:
                am = int(rng.integers(2))
        if am:
            a[m] = 1
            eta = True
            setup = True
            beliefs[m] = AssetBelief()
            if params is not None:
                if rng is None:
                    raise ValueError("replacing a component in an L2 state needs an rng")
                params[m] = new_component(config.assets[m], rng)
    post = NetworkState(tuple(beliefs), state.mode, None if params is None else tuple(params))
    return a, post


# ---------------------------------------------------------------------------
# labelling


@dataclass
class LabelTask:
    state: NetworkState          # sub-state: earlier decisions of the epoch applied
    order: tuple[int, ...]
    position: int                # index into ``order`` of the asset being decided
    eta: bool
    setup_paid: bool

    @property
    def asset(self) -> int:
        return self.order[self.position]


@dataclass
class LabeledSample:
    features: np.ndarray
    label: int
    mean0: float = float("nan")
    mean1: float = float("nan")
    se_diff: float = float("nan")
    rollouts: int = 0
    confident: bool = True


def _rollout_starts(config: NetworkConfig, task: LabelTask):
    m = task.asset
    decided = np.zeros(config.M, dtype=np.bool_)
    decided[list(task.order[:task.position + 1])] = True
    common = dict(first_perm=np.array(task.order), decided=decided, use_ctrl=True)
    s0 = RolloutStart.from_state(task.state, eta0=task.eta, setup_paid0=task.setup_paid, **common)
    s1 = RolloutStart.from_state(task.state, eta0=True, setup_paid0=True, **common)
    # the candidate replacement: a fresh component drawn from the prior
    s1.x0[m] = s1.k0[m] = s1.t0[m] = 0
    s1.init_mode[m] = K.INIT_POSTERIOR
    s1.cost0 = config.assets[m].c_pm + (0.0 if task.setup_paid else config.c_st)
    return s0, s1


def label_state(config: NetworkConfig, task: LabelTask, base_policy: Policy, seed: int, variant: str = "f3_L1",
                horizon: int = 500, n0: int = 32, r_max: int = 7500, k: float = 2.0) -> LabeledSample:
    """Label one sub-decision by paired rollouts of replace vs postpone.

    Both candidates finish the epoch and continue with ``base_policy`` on
    common random numbers.  Pairs are added until the mean paired difference
    is ``k`` standard errors away from zero (after ``n0`` warm-up pairs) or
    ``r_max`` rollouts are spent; exact ties go to postpone.
    """
    m = task.asset
    feats = extract_features(config, task.state, m, task.eta, variant)
    if task.state.beliefs[m].x >= config.assets[m].xi:
        return LabeledSample(feats, 1)
    s0, s1 = _rollout_starts(config, task)
    res = K.label_pair(K.kernel_seed(seed), int(horizon), float(config.gamma), float(config.c_st), kernel_instance(config),
                       model_source(), base_policy.kernel_policy(config), s0.pack(), s1.pack(),
                       int(n0), int(r_max), float(k))
    label, m0, m1, se, n, conf = res
    return LabeledSample(feats, int(label), float(m0), float(m1), float(se), int(2 * n), bool(conf))


def rollout_q(config: NetworkConfig, task: LabelTask, base_policy: Policy, action: int, reps: int,
              seed: int, horizon: int = 500) -> np.ndarray:
    """Per-replication discounted costs of taking ``action`` in the task's sub-state."""
    s = _rollout_starts(config, task)[action]
    return K.run_reps(K.kernel_seed(seed), 0, int(reps), int(horizon), float(config.gamma), float(config.c_st),
                      kernel_instance(config), model_source(), base_policy.kernel_policy(config), s.pack())


# ---------------------------------------------------------------------------
# data collection


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    diag: np.ndarray   # columns: mean0, mean1, se_diff, rollouts, confident, asset, x
    variant: str

    DIAG = ("mean0", "mean1", "se_diff", "rollouts", "confident", "asset", "x")

    def __len__(self) -> int:
        return int(self.y.size)

    def audit(self) -> dict:
        M = (self.X.shape[1] - 1) // (6 if self.variant == "f3_L1" else 4)
        w = 6 if self.variant == "f3_L1" else 4
        iota = self.X[:, [i * w + w - 1 for i in range(M)]]
        return {"samples": len(self), "share_replace": float(self.y.mean()) if len(self) else float("nan"),
                "one_iota": bool(np.all(iota.sum(axis=1) == 1)),
                "low_confidence": int((self.diag[:, 4] == 0).sum()),
                "x_min": int(self.diag[:, 6].min()) if len(self) else -1,
                "x_max": int(self.diag[:, 6].max()) if len(self) else -1,
                "mean_rollouts": float(self.diag[:, 3].mean()) if len(self) else 0.0}

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"f{i}" for i in range(self.X.shape[1])] + ["label"] + list(self.DIAG))
            for f, l, d in zip(self.X, self.y, self.diag):
                w.writerow([repr(float(v)) for v in f] + [int(l)] + [repr(float(v)) for v in d])

    @classmethod
    def read_csv(cls, path, variant: str) -> "Dataset":
        rows = list(csv.reader(open(path)))
        head, body = rows[0], rows[1:]
        nf = head.index("label")
        a = np.array(body, dtype=float).reshape(len(body), len(head))
        return cls(a[:, :nf], a[:, nf].astype(np.int64), a[:, nf + 1:], variant)


def collect_tasks(base_policy: Policy, config: NetworkConfig, mode: str, max_samples: int, epsilon: float,
                  seed: int, restrict, episode_len: int = 100) -> list[LabelTask]:
    """Simulate the base policy from new systems and record labelling tasks.

    Every epoch uses a fresh random asset order.  Episodes of
    ``episode_len`` epochs restart from new components, so states are visited
    roughly in proportion to their discounted occupancy.
    """
    if mode not in (L1, L2):
        raise ValueError("training mode must be L1 or L2")
    rng = np.random.default_rng(int(seed) % 2**64)
    tasks: list[LabelTask] = []

    def on_task(sub, order, j, eta, setup):
        if len(tasks) < max_samples:
            tasks.append(LabelTask(sub, tuple(order), j, bool(eta), bool(setup)))

    while len(tasks) < max_samples:
        hidden = [new_component(a, rng) for a in config.assets]
        state = NetworkState(tuple(AssetBelief() for _ in config.assets), mode,
                             tuple(hidden) if mode == L2 else None)
        for _ in range(episode_len):
            if len(tasks) >= max_samples:
                break
            order = rng.permutation(config.M)
            sim = NetworkState(state.beliefs, L2, tuple(hidden))
            view = sim if mode == L2 else state
            a, post = run_epoch(config, view, base_policy, order, rng, epsilon, restrict, on_task)
            if mode == L2:
                hidden = list(post.params)
            else:
                for m in np.flatnonzero(a):
                    hidden[m] = new_component(config.assets[m], rng)
            beliefs = []
            for asset, b, p in zip(config.assets, post.beliefs, hidden):
                beliefs.append(b.update(sample_period(p, rng, asset.unit_shocks)))
            state = NetworkState(tuple(beliefs), mode, tuple(hidden) if mode == L2 else None)
    return tasks


def _label_chunk(args):
    config, tasks, base, seeds, variant, horizon, n0, r_max, k = args
    return [label_state(config, t, base, s, variant, horizon, n0, r_max, k) for t, s in zip(tasks, seeds)]


def label_tasks(config: NetworkConfig, tasks: list[LabelTask], base_policy: Policy, seed: int, generation: int,
                variant: str, horizon: int = 500, n0: int = 32, r_max: int = 7500, k: float = 2.0,
                workers: int = 1) -> Dataset:
    seeds = [K.derive_seed(seed, _TAG_LABEL, generation, i) for i in range(len(tasks))]
    n = max(1, min(workers, len(tasks)))
    edges = np.linspace(0, len(tasks), n + 1).astype(int)
    jobs = [(config, tasks[a:b], base_policy, seeds[a:b], variant, horizon, n0, r_max, k)
            for a, b in zip(edges[:-1], edges[1:]) if b > a]
    if n <= 1:
        parts = [_label_chunk(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=n) as ex:
            parts = list(ex.map(_label_chunk, jobs))
    samples = [s for p in parts for s in p]
    d = feature_dim(config.M, variant)
    X = np.array([s.features for s in samples]).reshape(len(samples), d)
    y = np.array([s.label for s in samples], dtype=np.int64)
    diag = np.array([[s.mean0, s.mean1, s.se_diff, s.rollouts, float(s.confident), t.asset,
                      t.state.beliefs[t.asset].x] for s, t in zip(samples, tasks)]).reshape(len(samples), 7)
    return Dataset(X, y, diag, variant)


def collect_samples(base_policy: Policy, config: NetworkConfig, mode: str, max_samples: int, epsilon: float,
                    seed: int, thresholds: ThresholdPolicy, variant: str, generation: int = 1,
                    delta: float = 0.5, zeta: float = 1.5, horizon: int = 500, n0: int = 32, r_max: int = 7500,
                    k: float = 2.0, workers: int = 1, episode_len: int = 100) -> Dataset:
    """Simulate ``base_policy``, then label every recorded sub-decision by rollouts."""
    def restrict(m, x):
        return restricted_actions(x, thresholds.tau_pm[m], thresholds.tau_opm[m], delta, zeta)

    tasks = collect_tasks(base_policy, config, mode, max_samples, epsilon,
                          K.derive_seed(seed, _TAG_COLLECT, generation), restrict, episode_len)
    return label_tasks(config, tasks, base_policy, seed, generation, variant, horizon, n0, r_max, k, workers)


# ---------------------------------------------------------------------------
# generations


@dataclass
class DCLSettings:
    """Defaults follow the usual DCL hyperparameters; budgets are per generation."""

    generations: int = 3
    max_samples: int = 50_000
    r_max: int = 7500
    k: float = 2.0
    n0: int = 32
    epsilon: float = 0.02
    rollout_horizon: int = 500
    batch_size: int = 64
    lr: float = 1e-3
    patience: int = 10
    max_epochs: int = 200
    delta: float = 0.5
    zeta: float = 1.5
    eval_reps: int = 10_000
    eval_horizon: int = 1000
    episode_len: int = 100


@dataclass
class Generation:
    index: int
    policy: NNPolicy
    dataset: dict
    training: TrainReport
    evaluation: EvalReport | None = None


def train_dcl(config: NetworkConfig, thresholds: ThresholdPolicy, mode: str = L1, variant: str | None = None,
              settings: DCLSettings | None = None, seed: int = 0, workers: int = 1,
              evaluate_mode: str | None = None, datasets_out=None) -> list[Generation]:
    """Run DCL generations starting from the two-threshold policy.

    Generation g is trained on states visited by, and labelled with rollouts
    of, generation g - 1 (generation 0 is ``thresholds``).
    """
    s = settings or DCLSettings()
    variant = variant or ("f1_L2" if mode == L2 else "f3_L1")
    _check_variant(variant)
    if mode == L1 and variant == "f1_L2":
        raise ValueError("f1_L2 features need L2 training")
    base: Policy = thresholds
    out = []
    for g in range(1, s.generations + 1):
        ds = collect_samples(base, config, mode, s.max_samples, s.epsilon, seed, thresholds, variant, g,
                             s.delta, s.zeta, s.rollout_horizon, s.n0, s.r_max, s.k, workers, s.episode_len)
        if datasets_out is not None:
            ds.write_csv(f"{datasets_out}/dataset_gen{g}.csv")
        audit = ds.audit()
        log.info("generation %d: %s", g, audit)
        model, rep = train_classifier(ds.X, ds.y, seed=K.derive_seed(seed, 0x7EA1, g) % 2**63,
                                      batch_size=s.batch_size, lr=s.lr, patience=s.patience,
                                      max_epochs=s.max_epochs)
        pol = NNPolicy.from_thresholds(model, thresholds, variant=variant, delta=s.delta, zeta=s.zeta,
                                       name=f"dcl_gen{g}")
        ev = None
        if evaluate_mode is not None:
            ev = evaluate(pol, config, evaluate_mode, s.eval_reps, s.eval_horizon, seed, workers)
            log.info("generation %d: J = %.4f +- %.4f", g, ev.mean, ev.ci_halfwidth)
        out.append(Generation(g, pol, audit, rep, ev))
        base = pol
    return out
