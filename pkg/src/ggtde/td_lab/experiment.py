"""Training loops on chain MDPs and the run log they produce.

Three learners share one update rule (``train_step`` on a batch of
transitions from ``batch_size`` environment copies stepped in lockstep):

``td_eval``
    state values of a fixed uniformly random behaviour policy;
``q_learning``
    action values with epsilon-greedy exploration over the ensemble mean
    and bootstrapping from the greedy action of the target ensemble;
``actor_critic``
    state-value critic plus a tabular softmax actor moved along the
    ensemble-mean TD error.

Value RMSE is measured against the exact oracle of what the critic
estimates: ``V^pi`` for the behaviour policy, ``Q*`` for Q-learning and
``V`` of the current actor for actor-critic.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from ..errors import ConfigError
from ..estimators import coefficient_of_variation
from ..ggd import GGDParams, fit_mle, variance
from ..weighting import WeightingConfig, XiSolve
from .env import ChainMDPSpec, make_chain_env, policy_value, value_iteration
from .network import CriticEnsemble
from .train import LOSS_KINDS, TrainBatch, head_kind_for, td_target, train_step

__all__ = [
    "AgentConfig",
    "ExperimentConfig",
    "TrainRunLog",
    "load_config",
    "run_experiment",
]

log = logging.getLogger(__name__)

LEARNERS = ("td_eval", "q_learning", "actor_critic")
SCHEMA_VERSION = 1
TIMESERIES_HEADER = ("step", "return", "cov_beta", "cov_variance", "value_rmse")


@dataclass(frozen=True)
class AgentConfig:
    learner: str = "td_eval"
    loss_kind: str = "ggd_nll_biev"
    nll_form: str = "modified"
    alpha_head: bool = False
    n_critics: int = 5
    hidden_dim: int = 16
    lr: float = 0.05
    lr_final: float | None = None
    max_grad_norm: float | None = None
    batch_size: int = 32
    target_refresh: int = 100
    epsilon: float = 0.1
    actor_lr: float = 0.1
    softplus_epsilon: float = 1e-4
    snapshot_batches: int = 32
    weighting: WeightingConfig = WeightingConfig()

    def __post_init__(self):
        if self.learner not in LEARNERS:
            raise ConfigError(f"learner must be one of {LEARNERS}, got {self.learner!r}")
        if self.loss_kind not in LOSS_KINDS:
            raise ConfigError(f"loss kind must be one of {LOSS_KINDS}, got {self.loss_kind!r}")
        if self.nll_form not in ("exact", "modified"):
            raise ConfigError("nll_form must be 'exact' or 'modified'")
        if self.n_critics < 2:
            raise ConfigError("n_critics must be >= 2")
        if self.hidden_dim < 1 or self.batch_size < 1 or self.target_refresh < 1 or self.snapshot_batches < 1:
            raise ConfigError("hidden_dim, batch_size, target_refresh and snapshot_batches must be >= 1")
        if not (self.lr >= 0 and self.actor_lr >= 0 and 0 <= self.epsilon <= 1):
            raise ConfigError("lr and actor_lr must be >= 0 and epsilon in [0, 1]")
        if self.lr_final is not None and not self.lr_final >= 0:
            raise ConfigError("lr_final must be >= 0")
        if self.max_grad_norm is not None and not self.max_grad_norm > 0:
            raise ConfigError("max_grad_norm must be > 0")
        xi = self.weighting.xi_mode
        if isinstance(xi, XiSolve) and xi.min_effective_batch > self.batch_size:
            raise ConfigError("weighting min effective batch exceeds batch_size")

    @property
    def head_kind(self) -> str:
        return head_kind_for(self.loss_kind, self.alpha_head)


@dataclass(frozen=True)
class ExperimentConfig:
    """Env, agent, weighting, loss and run sections of an experiment document."""

    env: ChainMDPSpec = ChainMDPSpec()
    agent: AgentConfig = AgentConfig()
    n_steps: int = 10_000
    checkpoints: int = 10

    def __post_init__(self):
        if self.n_steps < 1 or not 1 <= self.checkpoints <= self.n_steps:
            raise ConfigError("need n_steps >= 1 and 1 <= checkpoints <= n_steps")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        unknown = set(d) - {"env", "agent", "weighting", "loss", "run"}
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        agent = dict(d.get("agent", {}))
        loss = dict(d.get("loss", {}))
        bad = set(loss) - {"kind", "nll_form"}
        if bad:
            raise ConfigError(f"unknown loss fields: {sorted(bad)}")
        if "kind" in loss:
            agent["loss_kind"] = loss["kind"]
        if "nll_form" in loss:
            agent["nll_form"] = loss["nll_form"]
        bad = set(agent) - (set(AgentConfig.__dataclass_fields__) - {"weighting"})
        if bad:
            raise ConfigError(f"unknown agent fields: {sorted(bad)}")
        run = dict(d.get("run", {}))
        bad = set(run) - {"n_steps", "checkpoints"}
        if bad:
            raise ConfigError(f"unknown run fields: {sorted(bad)}")
        try:
            return cls(
                env=ChainMDPSpec.from_dict(d.get("env", {})),
                agent=AgentConfig(weighting=WeightingConfig.from_dict(d.get("weighting", {})), **agent),
                **run,
            )
        except TypeError as e:
            raise ConfigError(str(e)) from e

    def to_dict(self) -> dict:
        agent = {k: v for k, v in asdict(self.agent).items() if k not in ("weighting", "loss_kind", "nll_form")}
        return {
            "env": self.env.to_dict(),
            "agent": agent,
            "weighting": self.agent.weighting.to_dict(),
            "loss": {"kind": self.agent.loss_kind, "nll_form": self.agent.nll_form},
            "run": {"n_steps": self.n_steps, "checkpoints": self.checkpoints},
        }


def _coerce(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(doc: dict, overrides: list[str]) -> dict:
    """Apply ``section.key=value`` overrides; values are parsed as JSON when possible."""
    out = json.loads(json.dumps(doc))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        key, value = item.split("=", 1)
        parts = key.strip().split(".")
        node = out
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override path {key!r} crosses a non-object value")
        node[parts[-1]] = _coerce(value.strip())
    return out


def load_config(path, overrides: list[str] | None = None) -> ExperimentConfig:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    return ExperimentConfig.from_dict(apply_overrides(doc, overrides or []))


@dataclass
class TrainRunLog:
    """Per-checkpoint series plus TD-error snapshots keyed by tag."""

    step: list = field(default_factory=list)
    episodic_return: list = field(default_factory=list)
    beta_estimates: list = field(default_factory=list)
    variance_estimates: list = field(default_factory=list)
    cov_beta: list = field(default_factory=list)
    cov_variance: list = field(default_factory=list)
    td_error_snapshots: dict = field(default_factory=dict)
    value_rmse_vs_oracle: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TrainRunLog):
            return NotImplemented
        return json.dumps(self._payload(), sort_keys=True) == json.dumps(other._payload(), sort_keys=True)

    def _payload(self) -> dict:
        d = asdict(self)
        d["td_error_snapshots"] = {k: list(v) for k, v in self.td_error_snapshots.items()}
        return d

    def final_snapshot(self) -> np.ndarray:
        return np.asarray(self.td_error_snapshots["final"], dtype=float)

    def save(self, out_dir) -> Path:
        """Write ``run.json``, ``timeseries.csv`` and ``td_errors_<tag>.csv``."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        run = {
            "schema_version": SCHEMA_VERSION,
            "metadata": self.metadata,
            "beta_estimates": self.beta_estimates,
            "variance_estimates": self.variance_estimates,
            "snapshot_tags": list(self.td_error_snapshots),
        }
        (out / "run.json").write_text(json.dumps(run, indent=2, allow_nan=True) + "\n", encoding="utf-8")
        with open(out / "timeseries.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TIMESERIES_HEADER)
            for row in zip(self.step, self.episodic_return, self.cov_beta, self.cov_variance, self.value_rmse_vs_oracle):
                w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])
        for tag, deltas in self.td_error_snapshots.items():
            with open(out / f"td_errors_{tag}.csv", "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["delta"])
                w.writerows([repr(float(v))] for v in deltas)
        return out

    @classmethod
    def load(cls, run_dir) -> "TrainRunLog":
        """Inverse of :meth:`save`; raises ConfigError naming the offending file."""
        d = Path(run_dir)
        run_path, ts_path = d / "run.json", d / "timeseries.csv"
        try:
            run = json.loads(run_path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"{run_path}: {e}") from e
        if not isinstance(run, dict) or run.get("schema_version") != SCHEMA_VERSION:
            raise ConfigError(f"{run_path}: unsupported schema")
        try:
            with open(ts_path, newline="", encoding="utf-8") as fh:
                rows = list(csv.reader(fh))
        except OSError as e:
            raise ConfigError(f"{ts_path}: {e}") from e
        if not rows or tuple(rows[0]) != TIMESERIES_HEADER:
            raise ConfigError(f"{ts_path}: expected header {','.join(TIMESERIES_HEADER)}")
        try:
            body = [(int(r[0]), *map(float, r[1:])) for r in rows[1:]]
        except (ValueError, IndexError) as e:
            raise ConfigError(f"{ts_path}: malformed row ({e})") from e
        if any(len(r) != len(TIMESERIES_HEADER) for r in body):
            raise ConfigError(f"{ts_path}: wrong column count")
        snaps = {}
        for tag in run.get("snapshot_tags", []):
            p = d / f"td_errors_{tag}.csv"
            try:
                with open(p, newline="", encoding="utf-8") as fh:
                    r = list(csv.reader(fh))
                if not r or r[0] != ["delta"]:
                    raise ConfigError(f"{p}: expected header delta")
                snaps[tag] = [float(x[0]) for x in r[1:]]
            except (OSError, ValueError, IndexError) as e:
                raise ConfigError(f"{p}: {e}") from e
        cols = list(zip(*body)) if body else [[]] * len(TIMESERIES_HEADER)
        return cls(
            step=list(cols[0]),
            episodic_return=list(cols[1]),
            beta_estimates=run.get("beta_estimates", []),
            variance_estimates=run.get("variance_estimates", []),
            cov_beta=list(cols[2]),
            cov_variance=list(cols[3]),
            td_error_snapshots=snaps,
            value_rmse_vs_oracle=list(cols[4]),
            metadata=run.get("metadata", {}),
        )


def _safe_cov(xs) -> float:
    x = np.asarray(xs, dtype=float)
    if x.size < 2 or x.mean() == 0.0:
        return math.nan
    return coefficient_of_variation(x)


def _fit_beta(deltas: np.ndarray) -> float:
    d = np.asarray(deltas, dtype=float)
    if d.size < 10 or np.all(d == d[0]):
        return math.nan
    return fit_mle(d - np.median(d), "alpha_beta").params.beta


def _checkpoint_steps(n_steps: int, checkpoints: int) -> list[int]:
    return [int(round(n_steps * (i + 1) / checkpoints)) for i in range(checkpoints)]


class _Runner:
    def __init__(self, cfg: ExperimentConfig, seed: int):
        self.cfg = cfg
        self.agent = cfg.agent
        self.spec = cfg.env
        ss = np.random.SeedSequence([seed, cfg.env.seed])
        env_ss, net_ss, pol_ss = ss.spawn(3)
        self.pol_rng = np.random.default_rng(pol_ss)
        self.env = make_chain_env(self.spec, self.agent.batch_size, np.random.default_rng(env_ss))
        self.n_out = self.spec.n_actions if self.agent.learner == "q_learning" else 1
        self.online = CriticEnsemble.initialize(
            np.random.default_rng(net_ss),
            self.agent.n_critics,
            self.spec.n_states,
            hidden_dim=self.agent.hidden_dim,
            n_outputs=self.n_out,
            head_kind=self.agent.head_kind,
            softplus_epsilon=self.agent.softplus_epsilon,
        )
        self.eye = np.eye(self.spec.n_states)
        self._refresh_target()
        self.weighting = replace(self.agent.weighting, discount_gamma=self.spec.discount)
        self.logits = np.zeros((self.spec.n_states, self.spec.n_actions))
        self.returns_acc = np.zeros(self.agent.batch_size)
        self.finished_returns: list[float] = []
        if self.agent.learner == "q_learning":
            self.oracle_fixed = value_iteration(self.spec)[1]
        elif self.agent.learner == "td_eval":
            self.oracle_fixed = policy_value(self.spec, self._uniform())
        else:
            self.oracle_fixed = None

    def _uniform(self) -> np.ndarray:
        return np.full((self.spec.n_states, self.spec.n_actions), 1.0 / self.spec.n_actions)

    def _policy(self) -> np.ndarray:
        z = self.logits - self.logits.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def _act(self, states: np.ndarray) -> np.ndarray:
        n, m = states.size, self.spec.n_actions
        if self.agent.learner == "td_eval":
            return self.pol_rng.integers(0, m, n)
        if self.agent.learner == "actor_critic":
            cdf = np.cumsum(self._policy()[states], axis=1)
            u = self.pol_rng.random(n)[:, None]
            return np.minimum((u > cdf).sum(axis=1), m - 1)
        q = self.online.forward(self.eye[states]).values.mean(axis=0)
        greedy = np.argmax(q, axis=1)
        explore = self.pol_rng.random(n) < self.agent.epsilon
        return np.where(explore, self.pol_rng.integers(0, m, n), greedy)

    def _refresh_target(self) -> None:
        # one-hot features, so the frozen copy is fully described by its per-state outputs
        self.target = self.online.copy()
        self.target_table = self.target.forward(self.eye).values  # (K, S, O)

    def _targets(self, rewards, next_states) -> np.ndarray:
        nxt = self.target_table[:, next_states, :]  # (K, B, O)
        if self.agent.learner == "q_learning":
            a_star = np.argmax(nxt.mean(axis=0), axis=1)
            boot = np.take_along_axis(nxt, a_star[None, :, None], axis=2)[..., 0]
        else:
            boot = nxt[..., 0]
        return td_target(rewards[None, :], boot, self.spec.discount)

    def lr_at(self, step: int) -> float:
        a = self.agent
        if a.lr_final is None:
            return a.lr
        frac = step / self.cfg.n_steps
        return a.lr + (a.lr_final - a.lr) * frac

    def value_rmse(self) -> float:
        out = self.online.forward(self.eye).values.mean(axis=0)  # (S, O)
        if self.agent.learner == "q_learning":
            return float(np.sqrt(np.mean((out - self.oracle_fixed) ** 2)))
        oracle = self.oracle_fixed if self.oracle_fixed is not None else policy_value(self.spec, self._policy())
        return float(np.sqrt(np.mean((out[:, 0] - oracle) ** 2)))

    def head_estimates(self) -> tuple[list, list]:
        heads = self.online.forward(self.eye).heads
        if "beta" in heads:
            beta = heads["beta"].mean(axis=0).ravel()
            alpha = heads["alpha"].mean(axis=0).ravel() if "alpha" in heads else np.ones_like(beta)
            var = np.array([variance(GGDParams(a, b)) for a, b in zip(alpha, beta)])
            return beta.tolist(), var.tolist()
        if "sigma" in heads:
            return [], (heads["sigma"].mean(axis=0).ravel() ** 2).tolist()
        return [], []

    def step(self, t: int):
        states = self.env.state.copy()
        actions = self._act(states)
        res = self.env.step(actions)
        self.returns_acc += res.rewards
        if res.truncated.any():
            self.finished_returns.extend(self.returns_acc[res.truncated].tolist())
            self.returns_acc[res.truncated] = 0.0
        out_idx = actions if self.agent.learner == "q_learning" else np.zeros_like(actions)
        batch = TrainBatch(self.eye[states], out_idx, self._targets(res.rewards, res.next_states))
        diag = train_step(
            self.online,
            batch,
            self.weighting,
            self.agent.loss_kind,
            self.lr_at(t),
            self.agent.nll_form,
            step=t,
            max_grad_norm=self.agent.max_grad_norm,
        )
        if self.agent.learner == "actor_critic" and self.agent.actor_lr > 0:
            adv = diag.deltas.mean(axis=0)
            pi = self._policy()[states]
            g = -pi * adv[:, None]
            g[np.arange(states.size), actions] += adv
            np.add.at(self.logits, states, self.agent.actor_lr * g / states.size)
        if (t + 1) % self.agent.target_refresh == 0:
            self._refresh_target()
        return diag


def run_experiment(cfg: ExperimentConfig, seed: int) -> TrainRunLog:
    """Train one agent and log every checkpoint; deterministic given ``seed``.

    ``cfg.env.seed`` and ``seed`` together seed independent streams for the
    environment, the network initialization and the behaviour policy.
    """
    runner = _Runner(cfg, seed)
    marks = set(_checkpoint_steps(cfg.n_steps, cfg.checkpoints))
    last_mark = max(marks)
    window: list[np.ndarray] = []
    logbook = TrainRunLog()
    for t in range(cfg.n_steps):
        diag = runner.step(t)
        window.append(diag.deltas.mean(axis=0))
        if len(window) > cfg.agent.snapshot_batches:
            window.pop(0)
        if t + 1 == cfg.agent.snapshot_batches or (t + 1 == cfg.n_steps and "initial" not in logbook.td_error_snapshots):
            logbook.td_error_snapshots["initial"] = np.concatenate(window).tolist()
        step = t + 1
        if step in marks:
            betas, variances = runner.head_estimates()
            ret = float(np.mean(runner.finished_returns)) if runner.finished_returns else math.nan
            runner.finished_returns = []
            snap = np.concatenate(window).tolist()
            logbook.step.append(step)
            logbook.episodic_return.append(ret)
            logbook.beta_estimates.append(betas)
            logbook.variance_estimates.append(variances)
            logbook.cov_beta.append(_safe_cov(betas))
            logbook.cov_variance.append(_safe_cov(variances))
            logbook.value_rmse_vs_oracle.append(runner.value_rmse())
            logbook.td_error_snapshots[f"step{step}"] = snap
            if step == last_mark:
                logbook.td_error_snapshots["final"] = snap
            log.info("step %d rmse %.4f return %.3f", step, logbook.value_rmse_vs_oracle[-1], ret)
    logbook.metadata = {
        "seed": seed,
        "config": cfg.to_dict(),
        "final_value_rmse": logbook.value_rmse_vs_oracle[-1],
        "final_return": logbook.episodic_return[-1],
        "final_fitted_beta": _fit_beta(logbook.final_snapshot()),
    }
    return logbook
