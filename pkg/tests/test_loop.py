import math

import numpy as np
import pytest
from conftest import small_instance

from cdp_lab.core import Policy, substream
from cdp_lab.environments.classes import qstar, realizable_class
from cdp_lab.environments.mdp import TabularMDP, make_low_rank_mdp, make_random_mdp
from cdp_lab.errors import AlgorithmFailure
from cdp_lab.function_class import FunctionClass, SurvivingSet, greedy_policy
from cdp_lab.olive import (
    OliveConfig,
    check_termination,
    choose_optimistic,
    eliminate,
    level_iteration_bound,
    run_guess_m,
    run_olive,
    run_oliver,
)
from cdp_lab.oracle import BellmanOracle, exact_value_of_policy, optimal_valid_value


def two_step_env() -> TabularMDP:
    """One state, two levels; action 1 pays 1/4 at each level"""
    return TabularMDP(
        horizon=2,
        action_count=2,
        init=np.array([1.0]),
        transitions=(np.ones((1, 2, 1)),),
        reward_mean=(np.array([[0.0, 0.25]]), np.array([[0.0, 0.25]])),
    )


def shifted_pair_class(env: TabularMDP, shift: float = 0.2) -> FunctionClass:
    """Member 0 is Q* shifted up by `shift`, member 1 is Q*"""
    optimal = qstar(env)
    tables = tuple(
        np.stack([np.clip(table + shift, 0.0, 1.0), table]) for table in optimal.values
    )
    return FunctionClass.from_tables(tables, qstar_index=1)


def population_config(epsilon: float, rank: int, **changes) -> OliveConfig:
    settings = {
        "epsilon": epsilon,
        "delta": 0.1,
        "rank": rank,
        "zeta": 2 * math.sqrt(rank),
        "mode": "population",
    }
    return OliveConfig(**{**settings, **changes})


def optimal_value(env) -> float:
    return exact_value_of_policy(env, greedy_policy(qstar(env)))


class TestSteps:
    def test_choose_singleton(self):
        mask = np.array([False, False, True])
        assert choose_optimistic(SurvivingSet(mask), np.array([0.9, 0.8, 0.1])) == 2

    def test_choose_ties_to_lowest_index(self):
        assert choose_optimistic(SurvivingSet.full(3), np.array([0.3, 0.9, 0.9])) == 1

    def test_choose_from_nothing(self):
        with pytest.raises(AlgorithmFailure):
            choose_optimistic(SurvivingSet(np.zeros(3, dtype=bool)), np.zeros(3))

    def test_zero_errors_terminate(self):
        assert check_termination(np.zeros(3), 0.1) == (True, None)

    def test_level_pick(self):
        assert check_termination(np.array([0.3, 0.3]), 0.8) == (False, 1)

    def test_level_pick_skips_small_levels(self):
        assert check_termination(np.array([0.01, 0.5, 0.4]), 0.3) == (False, 2)

    def test_zero_errors_eliminate_nothing(self):
        surviving = SurvivingSet.full(4)
        kept = eliminate(surviving, surviving.indices, np.zeros(4), 0.0)
        assert len(kept) == 4

    def test_eliminating_everything_fails(self):
        surviving = SurvivingSet.full(2)
        with pytest.raises(AlgorithmFailure):
            eliminate(surviving, surviving.indices, np.array([0.5, -0.5]), 0.1)


class TestTwoStepTrace:
    def test_population_trace(self):
        env = two_step_env()
        result = run_olive(env, shifted_pair_class(env), population_config(0.05, 1), None)

        assert result.success
        assert result.chosen == 1
        assert result.total_episodes == 0
        first, second = result.records
        assert first.chosen == 0 and first.level == 2 and first.eliminated == [0]
        assert first.self_errors == pytest.approx([0.0, 0.2])
        assert (first.survivors_before, first.survivors_after) == (2, 1)
        assert second.chosen == 1 and second.terminated
        assert exact_value_of_policy(env, result.policy) == pytest.approx(0.5)

    def test_iteration_budget(self):
        env = two_step_env()
        config = population_config(0.05, 1, max_iterations=1)
        result = run_olive(env, shifted_pair_class(env), config, None)
        assert not result.success
        assert result.exhausted == "iterations"
        assert result.policy is None

    def test_episode_budget(self):
        env = two_step_env()
        config = OliveConfig(epsilon=0.05, delta=0.1, rank=1, zeta=2.0, n_est=200, max_episodes=100)
        result = run_olive(env, shifted_pair_class(env), config, np.random.default_rng(0))
        assert result.exhausted == "episodes"
        assert result.total_episodes == 0

    def test_sampled_trace_matches_population(self):
        env = two_step_env()
        fclass = shifted_pair_class(env)
        population = run_olive(env, fclass, population_config(0.05, 1), None)
        sampled = run_olive(
            env,
            fclass,
            population_config(0.05, 1, mode="sampled", n_est=100, n_eval=100, n=2000),
            substream(0, "episodes"),
        )
        assert sampled.same_trace(population)
        assert sampled.total_episodes == 100 + 2 * 100 + 2000


class TestPopulationOlive:
    def test_singleton_qstar_class(self, mdp):
        fclass = FunctionClass.from_qfunctions([qstar(mdp)], qstar_index=0)
        result = run_olive(mdp, fclass, population_config(0.05, 3), None)
        assert result.iterations == 1
        assert result.policy.same_as(greedy_policy(qstar(mdp)))

    @pytest.mark.parametrize("seed", range(20))
    def test_returns_an_epsilon_optimal_policy(self, seed):
        rng = np.random.default_rng(seed)
        states, actions, horizon = (int(rng.integers(1, 6)), int(rng.integers(1, 4)), int(rng.integers(1, 5)))
        env, fclass = small_instance(seed, states, actions, horizon)
        rank = max(env.latent_counts)
        epsilon = 0.05
        config = population_config(epsilon, rank)

        result = run_olive(env, fclass, config, None)

        assert result.success
        assert exact_value_of_policy(env, result.policy) >= optimal_value(env) - epsilon
        limit = level_iteration_bound(rank, config.zeta, result.parameters.phi)
        for h in range(1, env.horizon + 1):
            assert sum(r.level == h for r in result.records) <= limit
        values = BellmanOracle(env, fclass).initial_values()
        for record in result.records:
            assert record.predicted_value >= values[0] - 1e-12
        sizes = [r.survivors_after for r in result.records]
        assert sizes == sorted(sizes, reverse=True)


class TestPairClasses:
    @pytest.mark.parametrize("seed", range(20))
    def test_population_trace_matches_the_q_class(self, seed):
        rng = np.random.default_rng(seed)
        states, actions, horizon = (int(v) for v in rng.integers((1, 1, 1), (6, 4, 5)))
        env, fclass = small_instance(seed, states, actions, horizon)
        pairs = fclass.as_pairs()
        assert not pairs.is_q_class
        config = population_config(0.05, max(env.latent_counts))

        result = run_olive(env, fclass, config, None)
        paired = run_olive(env, pairs, config, None)

        assert paired.records == result.records
        assert paired.chosen == result.chosen
        assert paired.policy.same_as(result.policy)

    def test_sampled_trace_matches_the_q_class(self):
        env = make_random_mdp(3, 2, 2, seed=5)
        fclass = realizable_class(env, 8, 0.3, substream(5, "function_class"))
        config = OliveConfig(
            epsilon=0.2,
            delta=0.1,
            rank=3,
            zeta=2 * math.sqrt(3),
            phi=0.03,
            n_est=500,
            n_eval=500,
            n=5000,
        )
        result = run_olive(env, fclass, config, substream(5, "episodes"))
        paired = run_olive(env, fclass.as_pairs(), config, substream(5, "episodes"))
        assert paired.records == result.records
        assert paired.total_episodes == result.total_episodes


class TestSampledOlive:
    def test_desk_scale_success_rate(self):
        epsilon = 0.2
        successes = 0
        for seed in range(20):
            env = make_random_mdp(3, 2, 2, seed=seed)
            fclass = realizable_class(env, 8, 0.3, substream(seed, "function_class"))
            config = OliveConfig(
                epsilon=epsilon,
                delta=0.1,
                rank=3,
                zeta=2 * math.sqrt(3),
                phi=0.03,
                n_est=2000,
                n_eval=2000,
                n=20000,
            )
            result = run_olive(env, fclass, config, substream(seed, "episodes"))
            if result.policy is not None:
                successes += exact_value_of_policy(env, result.policy) >= optimal_value(env) - epsilon
        assert successes >= 16


class TestOliver:
    @pytest.mark.parametrize("seed", range(10))
    def test_theta_perturbed_class(self, seed):
        env, fclass = small_instance(seed)
        shift = 0.01 + 0.04 * np.random.default_rng(seed).random()
        tables = tuple(table.copy() for table in fclass.qvalues)
        for table in tables:
            table[0] = np.clip(table[0] + shift, 0.0, 1.0)
        perturbed = FunctionClass.from_tables(tables)

        theta = float(BellmanOracle(env, perturbed).max_abs_errors()[0])
        best = optimal_valid_value(env, perturbed, theta)
        assert best is not None
        epsilon, rank = 0.05, max(env.latent_counts)

        result = run_oliver(env, perturbed, population_config(epsilon, rank, theta=theta), None)

        assert result.success
        bound = best[1] - epsilon - 8 * env.horizon * math.sqrt(rank) * theta
        assert exact_value_of_policy(env, result.policy) >= bound - 1e-12

    def test_zero_slack_matches_olive_in_population(self, instance):
        env, fclass = instance
        config = population_config(0.05, 3)
        olive = run_olive(env, fclass, config, None)
        oliver = run_oliver(env, fclass, config, None)
        assert oliver.epsilon_effective == olive.epsilon_effective
        assert oliver.same_trace(olive)

    def test_zero_slack_matches_olive_sampled(self, instance):
        env, fclass = instance
        config = population_config(
            0.2, 3, mode="sampled", phi=0.05, n_est=200, n_eval=300, n=3000, max_iterations=20
        )
        olive = run_olive(env, fclass, config, substream(4, "episodes"))
        oliver = run_oliver(env, fclass, config, substream(4, "episodes"))
        assert oliver.same_trace(olive)
        assert oliver.total_episodes == olive.total_episodes


class TestGuessM:
    @pytest.mark.parametrize("seed,rank", [(s, [2, 3, 5][s % 3]) for s in range(10)])
    def test_withheld_rank(self, seed, rank):
        env = make_low_rank_mdp(6, 2, 3, rank=rank, seed=seed)
        fclass = realizable_class(env, 16, 0.3, np.random.default_rng(seed))
        epsilon = 0.05
        config = OliveConfig(epsilon=epsilon, delta=0.1, rank=1, zeta=2.0, mode="population")

        result = run_guess_m(env, fclass, config, None)

        assert result.success
        assert result.algorithm == "guessm"
        assert exact_value_of_policy(env, result.policy) >= optimal_value(env) - epsilon
        assert max(r.rank for r in result.records) <= 2 * rank

    def test_zeta_rule_sees_the_guessed_rank(self):
        env = two_step_env()
        config = population_config(0.05, 1)
        calls = []

        def zeta_rule(rank: int) -> float:
            calls.append(rank)
            return 2 * math.sqrt(rank)

        result = run_guess_m(env, shifted_pair_class(env), config, None, zeta_rule=zeta_rule)
        assert result.success
        assert calls[0] == 2
