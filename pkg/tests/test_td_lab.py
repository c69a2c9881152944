import json
import math

import numpy as np
import pytest

from ggtde.errors import ConfigError, DivergenceError, DomainError
from ggtde.ggd import BETA_BOX, excess_kurtosis
from ggtde.td_lab import (
    AgentConfig,
    ChainMDPSpec,
    CriticEnsemble,
    ExperimentConfig,
    RewardNoise,
    TrainBatch,
    TrainRunLog,
    apply_overrides,
    ensemble_loss,
    load_config,
    make_chain_env,
    policy_value,
    run_experiment,
    td_error,
    td_target,
    train_step,
    value_iteration,
)
from ggtde.td_lab.env import transition_matrix
from ggtde.td_lab.experiment import _Runner
from ggtde.td_lab.network import softplus
from ggtde.td_lab.train import LOSS_KINDS, head_kind_for
from ggtde.weighting import WeightingConfig, XiFixed, XiSolve


def _small_cfg(**agent):
    env = ChainMDPSpec(n_states=4, reward_noise=RewardNoise("laplace", scale=1.0), horizon=10)
    base = {"batch_size": 16, "snapshot_batches": 4, "target_refresh": 20}
    base.update(agent)
    return ExperimentConfig(env=env, agent=AgentConfig(**base), n_steps=60, checkpoints=3)


class TestEnv:
    def test_deterministic_rollout(self):
        spec = ChainMDPSpec(n_states=5, n_actions=3, reward_noise=RewardNoise("gaussian", sigma=0.0))
        runs = []
        for _ in range(2):
            env = make_chain_env(spec, 3, np.random.default_rng(1))
            traj = [env.step([1, 0, 2]) for _ in range(20)]
            runs.append(np.concatenate([np.concatenate([r.next_states, r.rewards]) for r in traj]))
        np.testing.assert_array_equal(runs[0], runs[1])

    def test_moves_and_rewards(self):
        spec = ChainMDPSpec(n_states=3, n_actions=3, horizon=100)
        env = make_chain_env(spec, 3)
        env.state = np.array([0, 1, 2])
        r = env.step([0, 1, 2])
        np.testing.assert_array_equal(r.next_states, [0, 2, 2])
        np.testing.assert_array_equal(r.rewards, [0.0, 0.0, 1.0])

    def test_truncation_resets(self):
        spec = ChainMDPSpec(n_states=4, horizon=2)
        env = make_chain_env(spec, 50, np.random.default_rng(0))
        env.step(np.ones(50, dtype=int))
        r = env.step(np.ones(50, dtype=int))
        assert r.truncated.all()
        assert np.all(env.t == 0)

    @pytest.mark.parametrize(
        "noise, expected",
        [
            (RewardNoise("ggd", alpha=1.0, beta=0.8), excess_kurtosis(0.8)),
            (RewardNoise("laplace", scale=2.0), 3.0),
            (RewardNoise("gumbel", scale=1.0), 2.4),
        ],
    )
    def test_noise_kurtosis(self, noise, expected):
        spec = ChainMDPSpec(n_states=5, reward_noise=noise)
        env = make_chain_env(spec, 1000, np.random.default_rng(11))
        acts = np.ones(1000, dtype=int)
        noise_draws = []
        for _ in range(1000):
            s = env.state.copy()
            noise_draws.append(env.step(acts).rewards - spec.rewards[s])
        x = np.concatenate(noise_draws)
        c = x - x.mean()
        k = np.mean(c**4) / np.mean(c**2) ** 2 - 3.0
        assert abs(k - expected) <= 0.1 * expected
        assert abs(x.mean()) < 0.01 * math.sqrt(np.mean(c**2)) * 5
        assert noise.excess_kurtosis() == pytest.approx(expected)

    def test_value_iteration_hand(self):
        spec = ChainMDPSpec(n_states=5, discount=0.9)
        v, q = value_iteration(spec)
        np.testing.assert_allclose(v, [0.9 ** (4 - s) / 0.1 for s in range(5)], rtol=1e-10)
        np.testing.assert_allclose(q[:, 1], v, rtol=1e-10)

    def test_policy_value_matches_optimal(self):
        spec = ChainMDPSpec(n_states=6, discount=0.8, transition_noise=0.2)
        right = np.zeros((6, 2))
        right[:, 1] = 1.0
        np.testing.assert_allclose(policy_value(spec, right), value_iteration(spec)[0], rtol=1e-9)

    def test_transition_rows(self):
        p = transition_matrix(ChainMDPSpec(n_states=4, n_actions=3, transition_noise=0.3))
        np.testing.assert_allclose(p.sum(axis=2), 1.0)

    @pytest.mark.parametrize(
        "kw",
        [
            {"n_states": 1},
            {"horizon": 0},
            {"discount": 1.0},
            {"transition_noise": 1.5},
            {"state_rewards": (1.0, 2.0)},
        ],
    )
    def test_invalid_spec(self, kw):
        with pytest.raises(ConfigError):
            ChainMDPSpec(**kw)

    def test_invalid_noise(self):
        with pytest.raises(ConfigError):
            RewardNoise("cauchy")
        with pytest.raises(ConfigError):
            RewardNoise.from_dict({"family": "laplace", "sigma": 1.0})
        with pytest.raises(ConfigError):
            RewardNoise("laplace", scale=0.0)

    def test_spec_roundtrip(self):
        spec = ChainMDPSpec(n_states=7, reward_noise=RewardNoise("ggd", alpha=0.5, beta=0.8), seed=3)
        assert ChainMDPSpec.from_dict(json.loads(json.dumps(spec.to_dict()))) == spec

    def test_make_env_rejects_dict(self):
        with pytest.raises(ConfigError):
            make_chain_env({"n_states": 3})


class TestTDArithmetic:
    @pytest.mark.parametrize("r, v, g, expected", [(1, 0, 0.9, 1.0), (0, 10, 0.5, 5.0), (-1, 2, 0.99, 0.98)])
    def test_target(self, r, v, g, expected):
        assert td_target(r, v, g) == pytest.approx(expected, abs=1e-15)

    @pytest.mark.parametrize("t, p, expected", [(5, 5, 0.0), (1, 0.25, 0.75)])
    def test_error(self, t, p, expected):
        assert td_error(t, p) == expected

    def test_batch_matches_scalar(self):
        rng = np.random.default_rng(0)
        t, p = rng.normal(size=20), rng.normal(size=20)
        np.testing.assert_array_equal(td_error(t, p), [td_error(a, b) for a, b in zip(t, p)])


class TestNetwork:
    def test_zero_weights(self):
        ens = CriticEnsemble(3, 4, hidden_dim=5, head_kind="alpha_beta_heads")
        ens.params["bv"][:] = [[0.5], [-1.0], [2.0]]
        ens.params["b_beta"][:] = 0.7
        out = ens.forward(np.ones(4))
        np.testing.assert_array_equal(out.values[:, 0, 0], [0.5, -1.0, 2.0])
        np.testing.assert_allclose(out.heads["beta"], softplus(0.7) + 1e-4)
        np.testing.assert_allclose(out.heads["alpha"], softplus(0.0) + 1e-4)

    def test_positivity_floor(self):
        ens = CriticEnsemble(2, 3, head_kind="beta_head", softplus_epsilon=0.1)
        ens.params["b_beta"][:] = -50.0
        assert np.allclose(ens.forward(np.zeros(3)).heads["beta"], 0.1)

    def test_floor_respects_box(self):
        ens = CriticEnsemble(2, 3, head_kind="beta_head")
        ens.params["b_beta"][:] = -50.0
        assert np.all(ens.forward(np.zeros(3)).heads["beta"] == BETA_BOX[0])

    def test_heads_positive(self):
        rng = np.random.default_rng(1)
        ens = CriticEnsemble.initialize(rng, 4, 6, head_kind="alpha_beta_heads")
        for k in ens.params:
            ens.params[k] += rng.normal(0, 3, ens.params[k].shape)
        out = ens.forward(rng.normal(size=(50, 6)))
        assert all(np.all(h > 0) for h in out.heads.values())

    def test_init_heads(self):
        ens = CriticEnsemble.initialize(np.random.default_rng(0), 5, 4, head_kind="alpha_beta_heads")
        out = ens.forward(np.eye(4))
        np.testing.assert_allclose(out.heads["beta"], 2.0)
        np.testing.assert_allclose(out.heads["alpha"], 1.0)

    def test_dimension_mismatch(self):
        ens = CriticEnsemble(2, 3)
        with pytest.raises(DomainError):
            ens.forward(np.ones(4))

    @pytest.mark.parametrize("kw", [{"n_critics": 1}, {"head_kind": "gamma"}, {"softplus_epsilon": 0.0}])
    def test_invalid(self, kw):
        args = {"n_critics": 2, "feature_dim": 3}
        args.update(kw)
        with pytest.raises(ConfigError):
            CriticEnsemble(**args)

    def test_forward_jacobian(self):
        rng = np.random.default_rng(2)
        ens = CriticEnsemble.initialize(rng, 3, 4, hidden_dim=6, n_outputs=2, head_kind="alpha_beta_heads")
        for k in ens.params:
            ens.params[k] += rng.normal(0, 0.3, ens.params[k].shape)
        x = rng.normal(size=(5, 4))
        out = ens.forward(x)
        up_v = rng.normal(size=out.values.shape)
        up_h = {n: rng.normal(size=v.shape) for n, v in out.heads.items()}
        grads = ens.backward(out.cache, up_v, up_h)

        def scalar():
            o = ens.forward(x)
            return float(np.sum(o.values * up_v) + sum(np.sum(o.heads[n] * up_h[n]) for n in up_h))

        for k in sorted(ens.params):
            for idx in [tuple(rng.integers(s) for s in ens.params[k].shape) for _ in range(3)]:
                orig = ens.params[k][idx]
                h = 1e-6
                ens.params[k][idx] = orig + h
                lp = scalar()
                ens.params[k][idx] = orig - h
                lm = scalar()
                ens.params[k][idx] = orig
                fd = (lp - lm) / (2 * h)
                assert abs(fd - grads[k][idx]) <= 1e-5 * max(abs(fd), abs(grads[k][idx])) + 1e-9, (k, idx)

    def test_digest_tracks_params(self):
        ens = CriticEnsemble.initialize(np.random.default_rng(0), 2, 3)
        twin = ens.copy()
        assert twin.digest() == ens.digest()
        twin.params["bv"] += 1.0
        assert twin.digest() != ens.digest()


def _probe_setup(loss_kind, alpha_head=False, n_outputs=1, seed=0):
    rng = np.random.default_rng(seed)
    k, d, b = 4, 5, 24
    ens = CriticEnsemble.initialize(
        rng, k, d, hidden_dim=6, n_outputs=n_outputs, head_kind=head_kind_for(loss_kind, alpha_head)
    )
    for name in ens.params:
        ens.params[name] += rng.normal(0, 0.3, ens.params[name].shape)
    batch = TrainBatch(rng.normal(size=(b, d)), rng.integers(0, n_outputs, b), rng.normal(0, 2, (k, b)))
    return ens, batch, rng


def _fd_probes(ens, batch, cfg, loss_kind, nll_form, rng, probes=20):
    ev = ensemble_loss(ens, batch, cfg, loss_kind, nll_form)
    keys = sorted(ens.params)
    worst = 0.0
    for _ in range(probes):
        name = keys[rng.integers(len(keys))]
        idx = tuple(rng.integers(s) for s in ens.params[name].shape)
        orig = ens.params[name][idx]
        h = 1e-6
        ens.params[name][idx] = orig + h
        lp = ensemble_loss(ens, batch, cfg, loss_kind, nll_form, weights=ev.weights).loss
        ens.params[name][idx] = orig - h
        lm = ensemble_loss(ens, batch, cfg, loss_kind, nll_form, weights=ev.weights).loss
        ens.params[name][idx] = orig
        fd = (lp - lm) / (2 * h)
        an = ev.grads[name][idx]
        err = abs(fd - an) / max(abs(fd), abs(an), 1e-5)
        worst = max(worst, err)
    return worst


class TestLossGradients:
    @pytest.mark.parametrize("loss_kind", LOSS_KINDS)
    @pytest.mark.parametrize("nll_form", ["modified", "exact"])
    def test_finite_differences(self, loss_kind, nll_form):
        ens, batch, rng = _probe_setup(loss_kind)
        cfg = WeightingConfig(xi_mode=XiSolve(8), lam=0.5)
        assert _fd_probes(ens, batch, cfg, loss_kind, nll_form, rng) <= 1e-4

    @pytest.mark.parametrize("loss_kind", ["ggd_nll_biev", "ggd_nll_only"])
    def test_alpha_head(self, loss_kind):
        ens, batch, rng = _probe_setup(loss_kind, alpha_head=True, seed=3)
        cfg = WeightingConfig(xi_mode=XiFixed(0.5), reg_loss="absolute", scheme="biv")
        assert _fd_probes(ens, batch, cfg, loss_kind, "exact", rng) <= 1e-4

    def test_multi_output(self):
        ens, batch, rng = _probe_setup("ggd_nll_biev", n_outputs=3, seed=4)
        assert _fd_probes(ens, batch, WeightingConfig(), "ggd_nll_biev", "modified", rng) <= 1e-4

    def test_zero_lambda_matches_attenuation_only(self):
        ens, batch, _ = _probe_setup("ggd_nll_biev", seed=5)
        cfg = WeightingConfig(lam=0.0)
        a = ensemble_loss(ens, batch, cfg, "ggd_nll_biev")
        b = ensemble_loss(ens, batch, cfg, "ggd_nll_only")
        assert a.loss == b.loss
        for name in a.grads:
            np.testing.assert_array_equal(a.grads[name], b.grads[name])

    def test_head_kind_mismatch(self):
        ens, batch, _ = _probe_setup("mse")
        with pytest.raises(ConfigError):
            ensemble_loss(ens, batch, WeightingConfig(), "ggd_nll_biev")

    def test_divergence_reports_term(self):
        ens, batch, _ = _probe_setup("ggd_nll_biev")
        bad = TrainBatch(batch.features, batch.actions, np.full(batch.targets.shape, np.inf))
        before = ens.digest()
        with pytest.raises(DivergenceError) as info:
            train_step(ens, bad, WeightingConfig(xi_mode=XiFixed(1.0)), "ggd_nll_biev", 0.1, step=7)
        assert info.value.step == 7
        assert "td_error" in str(info.value)
        assert ens.digest() == before


class TestTrainStep:
    def test_zero_lr(self):
        ens, batch, _ = _probe_setup("gaussian_nll_biv")
        before = ens.digest()
        diag = train_step(ens, batch, WeightingConfig(), "gaussian_nll_biv", 0.0)
        assert ens.digest() == before
        assert math.isfinite(diag.loss)

    def test_one_state_contraction(self):
        ens = CriticEnsemble.initialize(np.random.default_rng(0), 3, 1, hidden_dim=4)
        batch = TrainBatch(np.ones((1, 1)), np.zeros(1, dtype=int), np.full((3, 1), 2.5))
        for step in range(10_000):
            train_step(ens, batch, WeightingConfig(), "mse", 0.05)
            if np.all(np.abs(ens.forward(np.ones(1)).values - 2.5) <= 1e-6):
                break
        np.testing.assert_allclose(ens.forward(np.ones(1)).values, 2.5, atol=1e-6)
        assert step < 10_000

    def test_gradient_clipping(self):
        ens, batch, _ = _probe_setup("mse")
        twin = ens.copy()
        diag = train_step(ens, batch, WeightingConfig(), "mse", 0.1, max_grad_norm=1e-3)
        moved = np.sqrt(sum(np.sum((ens.params[k] - twin.params[k]) ** 2) for k in ens.params))
        assert moved == pytest.approx(0.1 * 1e-3, rel=1e-9)
        assert diag.grad_norm > 1e-3

    def test_negative_lr(self):
        ens, batch, _ = _probe_setup("mse")
        with pytest.raises(DomainError):
            train_step(ens, batch, WeightingConfig(), "mse", -1.0)


class TestExperiment:
    @pytest.mark.parametrize("learner", ["td_eval", "q_learning", "actor_critic"])
    def test_deterministic(self, learner):
        cfg = _small_cfg(learner=learner)
        a, b = run_experiment(cfg, 3), run_experiment(cfg, 3)
        assert a == b
        assert a != run_experiment(cfg, 4)

    def test_log_shape(self):
        cfg = _small_cfg()
        lg = run_experiment(cfg, 0)
        assert lg.step == [20, 40, 60]
        n = len(lg.step)
        assert len(lg.episodic_return) == len(lg.cov_beta) == len(lg.cov_variance) == n
        assert len(lg.value_rmse_vs_oracle) == len(lg.beta_estimates) == n
        assert all(len(b) == cfg.env.n_states for b in lg.beta_estimates)
        assert {"initial", "final", "step20", "step40", "step60"} <= set(lg.td_error_snapshots)
        assert len(lg.final_snapshot()) == cfg.agent.snapshot_batches * cfg.agent.batch_size
        assert lg.metadata["seed"] == 0

    @pytest.mark.parametrize("loss_kind", LOSS_KINDS)
    def test_all_losses_run(self, loss_kind):
        lg = run_experiment(_small_cfg(loss_kind=loss_kind), 1)
        assert all(math.isfinite(v) for v in lg.value_rmse_vs_oracle)

    def test_target_contract(self):
        cfg = _small_cfg(target_refresh=10)
        runner = _Runner(cfg, 0)
        frozen = runner.target.digest()
        table = runner.target_table.copy()
        for t in range(9):
            runner.step(t)
            assert runner.target.digest() == frozen
            np.testing.assert_array_equal(runner.target_table, table)
            np.testing.assert_array_equal(runner.target.forward(runner.eye).values, table)
        assert runner.online.digest() != frozen
        runner.step(9)
        assert runner.target.digest() == runner.online.digest() != frozen

    def test_targets_use_frozen_copy(self):
        runner = _Runner(_small_cfg(), 0)
        runner.online.params["bv"] += 100.0
        r, nxt = np.zeros(3), np.array([0, 1, 2])
        want = td_target(0.0, runner.target.forward(runner.eye[nxt]).values[..., 0], runner.spec.discount)
        np.testing.assert_allclose(runner._targets(r, nxt), want, rtol=1e-12)

    def test_linear_lr_decay(self):
        runner = _Runner(_small_cfg(lr=0.1, lr_final=0.0), 0)
        assert runner.lr_at(0) == 0.1
        assert runner.lr_at(30) == pytest.approx(0.05)

    def test_save_load_roundtrip(self, tmp_path):
        lg = run_experiment(_small_cfg(), 2)
        lg.save(tmp_path / "run")
        back = TrainRunLog.load(tmp_path / "run")
        assert back == lg
        text = (tmp_path / "run" / "timeseries.csv").read_bytes()
        assert text.startswith(b"step,return,cov_beta,cov_variance,value_rmse\n")
        assert b"\r" not in text

    def test_load_names_bad_file(self, tmp_path):
        run_experiment(_small_cfg(), 2).save(tmp_path)
        (tmp_path / "timeseries.csv").write_text("a,b\n", encoding="utf-8")
        with pytest.raises(ConfigError, match="timeseries.csv"):
            TrainRunLog.load(tmp_path)
        with pytest.raises(ConfigError, match="run.json"):
            TrainRunLog.load(tmp_path / "missing")

    def test_config_roundtrip(self, tmp_path):
        cfg = _small_cfg(loss_kind="gaussian_nll_biv", lr_final=0.01)
        path = tmp_path / "c.json"
        path.write_text(json.dumps(cfg.to_dict()), encoding="utf-8")
        assert load_config(path) == cfg
        changed = load_config(path, ["agent.lr=0.2", "env.reward_noise.scale=3", "loss.kind=mse"])
        assert changed.agent.lr == 0.2
        assert changed.env.reward_noise.scale == 3.0
        assert changed.agent.loss_kind == "mse"

    @pytest.mark.parametrize(
        "doc",
        [
            {"extra": {}},
            {"agent": {"speed": 1}},
            {"loss": {"kind": "huber"}},
            {"run": {"n_steps": 0}},
            {"env": {"colour": "red"}},
        ],
    )
    def test_config_rejects(self, doc):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict(doc)

    def test_override_syntax(self):
        with pytest.raises(ConfigError):
            apply_overrides({}, ["agent.lr"])
        assert apply_overrides({"a": {"b": 1}}, ["a.c=x"]) == {"a": {"b": 1, "c": "x"}}

    def test_min_batch_exceeds_batch_size(self):
        with pytest.raises(ConfigError):
            AgentConfig(batch_size=8, weighting=WeightingConfig(xi_mode=XiSolve(16)))


@pytest.mark.slow
def test_fitted_shape_tracks_reward_noise():
    def fitted(noise):
        env = ChainMDPSpec(n_states=10, discount=0.9, reward_noise=noise, horizon=50)
        cfg = ExperimentConfig(env=env, agent=AgentConfig(learner="q_learning"), n_steps=10_000, checkpoints=2)
        return np.array([run_experiment(cfg, seed).metadata["final_fitted_beta"] for seed in range(3)])

    gauss = fitted(RewardNoise("gaussian", sigma=2.0))
    laplace = fitted(RewardNoise("laplace", scale=2.0))
    assert np.all((gauss >= 1.4) & (gauss <= 3.0))
    assert np.all(laplace < gauss)
