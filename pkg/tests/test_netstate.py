import numpy as np
import pytest

from mlsaom import JointState, Toggle, apply_toggle, hamming, jaccard_stability

from conftest import random_state


def test_toggle_creates_single_tie():
    s = JointState(3, 0)
    out = apply_toggle(s, Toggle(1, "X", 2))
    assert out.x[1, 2] == 1
    assert out.x.sum() == 1
    assert s.x.sum() == 0  # input untouched


def test_diagonal_toggle_is_identity():
    s = JointState(3, 2)
    s.toggle(Toggle(0, "X", 1))
    out = apply_toggle(s, Toggle(2, "X", None))
    assert out == s


def test_toggle_terminates_existing_tie():
    s = JointState(3, 0)
    s.toggle(Toggle(1, "X", 2))
    before = s.x.copy()
    out = apply_toggle(s, Toggle(1, "X", 2))
    assert out.x[1, 2] == 0
    diff = before != out.x
    assert diff.sum() == 1 and diff[1, 2]


def test_toggle_involution_and_hamming_property(rng):
    for _ in range(50):
        s = random_state(rng)
        i = int(rng.integers(s.n))
        if rng.random() < 0.5:
            j = int(rng.integers(s.n - 1))
            t = Toggle(i, "X", j if j < i else j + 1)
        else:
            t = Toggle(i, "Z", int(rng.integers(s.h)))
        once = apply_toggle(s, t)
        assert hamming(s.x, once.x) + hamming(s.z, once.z, exclude_diagonal=False) == 1
        twice = apply_toggle(once, t)
        assert twice == s
        once.validate()


def test_toggle_errors():
    s = JointState(3, 1)
    with pytest.raises(ValueError):
        Toggle(1, "X", 1)
    with pytest.raises(ValueError):
        Toggle(0, "Q", 1)
    with pytest.raises(IndexError):
        s.toggle(Toggle(0, "X", 7))
    with pytest.raises(IndexError):
        s.toggle(Toggle(5, "Z", 0))


def test_state_validation_rejects_bad_input():
    with pytest.raises(ValueError):
        JointState(3, 0, x=np.full((3, 3), 2))
    with pytest.raises(ValueError):
        JointState(3, 1, z=np.zeros((3, 2)))


def test_hamming_basics_and_oracle(rng):
    a = np.zeros((3, 3), dtype=int)
    assert hamming(a, a) == 0
    b = a.copy()
    b[0, 1] = b[2, 0] = 1
    assert hamming(a, b) == 2
    for _ in range(20):
        m1 = (rng.random((5, 5)) < 0.5).astype(int)
        m2 = (rng.random((5, 5)) < 0.5).astype(int)
        brute = sum(
            int(m1[i, j] != m2[i, j])
            for i in range(5)
            for j in range(5)
            if i != j
        )
        assert hamming(m1, m2) == brute
    with pytest.raises(ValueError):
        hamming(np.zeros((2, 2)), np.zeros((3, 3)))


def test_hamming_diagonal_skipped_only_for_square():
    a = np.zeros((2, 2), dtype=int)
    b = np.eye(2, dtype=int)
    assert hamming(a, b) == 0
    assert hamming(a, b, exclude_diagonal=False) == 2


def test_jaccard_values():
    a = np.zeros((3, 3), dtype=int)
    b = a.copy()
    a[0, 1] = a[0, 2] = 1
    assert jaccard_stability(a, a) == 1.0
    b[1, 0] = 1
    assert jaccard_stability(a, b) == 0.0
    # ties {0->1, 0->2} vs {0->2, 1->2}: overlap 1, union 3
    c = np.zeros((3, 3), dtype=int)
    c[0, 2] = c[1, 2] = 1
    assert jaccard_stability(a, c) == pytest.approx(1 / 3)
    with pytest.raises(ValueError):
        jaccard_stability(np.zeros((2, 2)), np.zeros((2, 2)))


def test_jaccard_symmetry(rng):
    for _ in range(20):
        a = (rng.random((4, 4)) < 0.4).astype(int)
        b = (rng.random((4, 4)) < 0.4).astype(int)
        if max(a.sum(), b.sum()) == 0:
            continue
        assert jaccard_stability(a, b) == pytest.approx(jaccard_stability(b, a))
