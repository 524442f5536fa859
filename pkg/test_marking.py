import math

import numpy as np
import pytest

from errors import ConfigError
from marking import MarkParams, equilibration_strategy, mark, maximum_strategy, premarked


def equilibration_oracle(eta, theta, total=None, already=0.0):
    total = sum(v * v for v in eta) if total is None else total
    if total == 0:
        return set(range(len(eta)))
    marked, acc = set(), already
    for value in sorted(set(eta), reverse=True):
        batch = [i for i, v in enumerate(eta) if v == value]
        marked.update(batch)
        acc += value * value * len(batch)
        if acc >= theta * total:
            break
    return marked


def mark_oracle(eta, strategy, theta, epsilon):
    order = sorted(range(len(eta)), key=lambda i: (-eta[i], i))
    count = math.ceil(round(epsilon * len(eta), 9))
    head, tail = set(order[:count]), order[count:]
    if not tail:
        return head
    tail_eta = [eta[i] for i in tail]
    if strategy == "maximum":
        chosen = {k for k, v in enumerate(tail_eta) if v >= theta * max(tail_eta)}
    else:
        chosen = equilibration_oracle(tail_eta, theta)
    return head | {tail[k] for k in chosen}


def test_maximum_strategy_examples():
    assert maximum_strategy([1, 2, 4], 0.5).tolist() == [1, 2]
    assert maximum_strategy([3.0, 3.0, 3.0], 0.9).tolist() == [0, 1, 2]


def test_maximum_strategy_matches_filter():
    rng = np.random.default_rng(0)
    eta = rng.random(1000)
    expected = [i for i, v in enumerate(eta) if v >= 0.75 * eta.max()]
    assert maximum_strategy(eta, 0.75).tolist() == expected


def test_equilibration_one_batch_suffices():
    assert equilibration_strategy([3, 1, 1, 1], 0.5).tolist() == [0]


def test_equilibration_adds_whole_batches():
    # 8 < 0.9 * 9 forces the last batch in
    assert equilibration_strategy([2, 2, 1], 0.9).tolist() == [0, 1, 2]
    assert equilibration_strategy([2, 2, 1], 0.5).tolist() == [0, 1]
    assert equilibration_strategy([1.5] * 7, 0.1).tolist() == list(range(7))


def test_equilibration_all_zero_marks_everything():
    assert equilibration_strategy([0.0, 0.0], 0.5).tolist() == [0, 1]


@pytest.mark.parametrize("theta", [0.25, 0.5, 0.75])
def test_equilibration_matches_oracle(theta):
    rng = np.random.default_rng(1)
    for _ in range(20):
        # rounded values create ties
        eta = np.round(rng.random(200), 2)
        assert set(equilibration_strategy(eta, theta).tolist()) == equilibration_oracle(eta.tolist(), theta)


@pytest.mark.parametrize("theta", [0.25, 0.5, 0.75])
def test_equilibration_marked_mass_is_minimal(theta):
    rng = np.random.default_rng(2)
    eta = rng.random(300)
    marked = equilibration_strategy(eta, theta)
    squared = eta**2
    assert squared[marked].sum() >= theta * squared.sum()
    smallest = marked[np.argmin(eta[marked])]
    assert squared[marked].sum() - squared[smallest] < theta * squared.sum()


def test_strategies_reject_bad_input():
    with pytest.raises(ValueError):
        maximum_strategy([], 0.5)
    with pytest.raises(ValueError):
        equilibration_strategy([1.0, -1.0], 0.5)
    with pytest.raises(ValueError):
        maximum_strategy([1.0, np.nan], 0.5)
    with pytest.raises(ConfigError):
        maximum_strategy([1.0], 1.0)
    with pytest.raises(ConfigError):
        equilibration_strategy([1.0], 0.0)


def test_premarked_counts_and_ties():
    assert premarked([1, 5, 5, 2], 0.5).tolist() == [1, 2]
    assert premarked([5, 5, 5, 5], 0.25).tolist() == [0]
    assert premarked(np.arange(100.0), 0.01).tolist() == [99]
    # ceil(0.001 * 10) = 1
    assert premarked(np.arange(10.0), 0.001).tolist() == [9]
    assert premarked(np.arange(10.0), 0.0).tolist() == []


@pytest.mark.parametrize("strategy", ["maximum", "equilibration"])
def test_mark_without_epsilon_is_bare_strategy(strategy):
    rng = np.random.default_rng(4)
    eta = rng.random(50)
    bare = maximum_strategy(eta, 0.5) if strategy == "maximum" else equilibration_strategy(eta, 0.5)
    assert mark(eta, MarkParams(strategy, 0.5, 0.0)).tolist() == bare.tolist()


@pytest.mark.parametrize("strategy", ["maximum", "equilibration"])
def test_mark_with_full_epsilon_marks_everything(strategy):
    eta = np.array([0.1, 3.0, 0.0, 2.0])
    assert mark(eta, MarkParams(strategy, 0.75, 1.0)).tolist() == [0, 1, 2, 3]


@pytest.mark.parametrize("strategy", ["maximum", "equilibration"])
@pytest.mark.parametrize("epsilon", [0.001, 0.01, 0.1])
@pytest.mark.parametrize("theta", [0.25, 0.75])
def test_mark_matches_oracle(strategy, epsilon, theta):
    rng = np.random.default_rng(5)
    for _ in range(10):
        eta = np.round(rng.random(500), 3)
        expected = sorted(mark_oracle(eta.tolist(), strategy, theta, epsilon))
        assert mark(eta, MarkParams(strategy, theta, epsilon)).tolist() == expected


def test_mark_output_is_sorted_and_unique():
    rng = np.random.default_rng(6)
    eta = rng.random(100)
    marked = mark(eta, MarkParams("equilibration", 0.5, 0.1))
    assert marked.dtype == np.int64
    assert np.all(np.diff(marked) > 0)
    assert set(premarked(eta, 0.1).tolist()) <= set(marked.tolist())


def test_global_statistics_use_the_whole_vector():
    eta = np.array([10.0, 1.0, 0.9, 0.1])
    subset = mark(eta, MarkParams("maximum", 0.5, 0.25, "subset"))
    whole = mark(eta, MarkParams("maximum", 0.5, 0.25, "global"))
    assert subset.tolist() == [0, 1, 2]
    # threshold 0.5 * 10 leaves only the pre-marked element
    assert whole.tolist() == [0]
    # pre-marked mass 100 already exceeds 0.5 * 101.82
    assert mark(eta, MarkParams("equilibration", 0.5, 0.25, "global")).tolist() == [0]


def test_mark_params_validation():
    with pytest.raises(ConfigError):
        MarkParams(strategy="bulk")
    with pytest.raises(ConfigError):
        MarkParams(theta=1.5)
    with pytest.raises(ConfigError):
        MarkParams(epsilon=-0.1)
    with pytest.raises(ConfigError):
        MarkParams(complement_stats="all")


@pytest.mark.parametrize("seed", range(20))
def test_strategies_are_monotone_in_theta(seed):
    rng = np.random.default_rng(100 + seed)
    eta = rng.random(int(rng.integers(1, 300))) ** 3
    low, high = sorted(rng.uniform(0.05, 1.0, 2))
    assert set(maximum_strategy(eta, high).tolist()) <= set(maximum_strategy(eta, low).tolist())
    assert set(equilibration_strategy(eta, low).tolist()) <= set(equilibration_strategy(eta, high).tolist())


@pytest.mark.parametrize("seed", range(20))
def test_strategies_ignore_the_scale_of_eta(seed):
    rng = np.random.default_rng(200 + seed)
    eta = rng.random(int(rng.integers(1, 300)))
    theta = rng.uniform(0.05, 1.0)
    # powers of two scale without rounding
    scale = 2.0 ** int(rng.integers(-10, 11))
    assert maximum_strategy(scale * eta, theta).tolist() == maximum_strategy(eta, theta).tolist()
    assert equilibration_strategy(scale * eta, theta).tolist() == equilibration_strategy(eta, theta).tolist()


@pytest.mark.parametrize("strategy", ["maximum", "equilibration"])
@pytest.mark.parametrize("seed", range(10))
def test_mark_follows_a_permutation_of_the_elements(strategy, seed):
    rng = np.random.default_rng(300 + seed)
    eta = rng.random(int(rng.integers(1, 300)))
    perm = rng.permutation(len(eta))
    params = MarkParams(strategy, rng.uniform(0.05, 1.0), 0.01)
    marked = mark(eta, params)
    assert sorted(perm[mark(eta[perm], params)].tolist()) == marked.tolist()
