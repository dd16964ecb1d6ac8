import math

import numpy as np
import pytest

from cdp_lab.core import Context, Policy
from cdp_lab.errors import ArgumentError, ContractViolation
from cdp_lab.function_class import (
    FunctionClass,
    PolicyValuePair,
    QFunction,
    SurvivingSet,
    greedy_policy,
    predicted_value,
    product_class,
    to_pair,
)


def two_level_q() -> QFunction:
    return QFunction(
        (
            np.array([[0.2, 0.7], [0.5, 0.5]]),
            np.array([[0.1, 0.0], [0.3, 0.9], [0.0, 0.0]]),
        )
    )


class TestQFunction:
    def test_greedy_breaks_ties_low(self):
        policy = greedy_policy(two_level_q())
        np.testing.assert_array_equal(policy.actions[0], [1, 0])
        np.testing.assert_array_equal(policy.actions[1], [0, 1, 0])

    def test_terminal_is_zero(self):
        assert two_level_q()(Context(0, 3), 1) == 0.0

    def test_lookup(self):
        assert two_level_q()(Context(1, 2), 1) == pytest.approx(0.9)

    def test_predicted_value(self):
        assert predicted_value(two_level_q(), Context(0, 1)) == pytest.approx(0.7)
        with pytest.raises(ArgumentError):
            predicted_value(two_level_q(), Context(0, 2))

    def test_values_must_lie_in_unit_interval(self):
        with pytest.raises(ArgumentError):
            QFunction((np.array([[1.5, 0.0]]),))

    def test_pair_view(self):
        pair = to_pair(two_level_q())
        np.testing.assert_allclose(pair.vvalue[0], [0.7, 0.5])
        assert pair.value_at(Context(1, 2)) == pytest.approx(0.9)


class TestPolicy:
    def test_partial_policy_refuses_unknown_contexts(self):
        policy = Policy.from_mapping((2, 2), {Context(0, 1): 1})
        assert policy(Context(0, 1)) == 1
        with pytest.raises(ContractViolation):
            policy(Context(1, 1))
        with pytest.raises(ContractViolation):
            policy(Context(0, 3))

    def test_same_as(self):
        assert Policy.constant((2, 3), 1).same_as(Policy.constant((2, 3), 1))
        assert not Policy.constant((2, 3), 1).same_as(Policy.constant((2, 3), 0))


class TestFunctionClass:
    def test_member_order_is_kept(self):
        members = [two_level_q(), QFunction(tuple(np.zeros_like(t) for t in two_level_q().values))]
        fclass = FunctionClass.from_qfunctions(members, qstar_index=0)
        assert len(fclass) == 2
        np.testing.assert_array_equal(fclass[1].values[0], members[1].values[0])
        assert fclass.policy(0).same_as(greedy_policy(members[0]))
        assert fclass.log_size == pytest.approx(math.log(2))

    def test_members_must_share_context_space(self):
        other = QFunction((np.zeros((3, 2)), np.zeros((3, 2))))
        with pytest.raises(ArgumentError):
            FunctionClass.from_qfunctions([two_level_q(), other])

    def test_empty_class(self):
        with pytest.raises(ArgumentError):
            FunctionClass.from_qfunctions([])


class TestProductClass:
    def test_policy_major_order_and_log_size(self):
        policies = [Policy.constant((2,), 0), Policy.constant((2,), 1)]
        values = [(np.array([0.1, 0.2]),), (np.array([0.3, 0.4]),), (np.array([0.5, 0.6]),)]
        fclass = product_class(policies, values, action_count=2)

        assert len(fclass) == 6
        assert fclass.log_size == pytest.approx(math.log(2) + math.log(3))
        for index in range(6):
            pair = fclass[index]
            assert isinstance(pair, PolicyValuePair)
            assert pair.policy.same_as(policies[index // 3])
            np.testing.assert_allclose(pair.vvalue[0], values[index % 3][0])

    def test_shapes_must_agree(self):
        with pytest.raises(ArgumentError):
            product_class([Policy.constant((2,), 0)], [(np.zeros(3),)], action_count=2)


class TestSurvivingSet:
    def test_keep_only_shrinks(self):
        surviving = SurvivingSet.full(5)
        indices = surviving.indices
        shrunk = surviving.keep(indices, np.array([True, False, True, False, True]))
        np.testing.assert_array_equal(shrunk.indices, [0, 2, 4])
        again = shrunk.keep(shrunk.indices, np.array([True, True, True]))
        assert len(again) == 3
        assert 1 not in again
