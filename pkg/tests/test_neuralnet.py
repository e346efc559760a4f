#!/usr/bin/env python3
"""
Tests for the MLP kernel: forward/backward passes, SGD, gradient checking
and tensor serialization.
"""

import unittest

import numpy as np

from rpprec.core.exceptions import CheckpointError, NumericalError, TapeError, ValidationError
from rpprec.core.neuralnet import (
    Mlp2,
    PolicyLoss,
    SgdConfig,
    ValueLoss,
    backward_policy,
    backward_value,
    forward_policy,
    forward_value,
    global_norm,
    grad_check,
    greedy_action,
    mlp_from_lines,
    mlp_to_lines,
    sample_categorical,
    sgd_step,
    softmax,
)


class TestForward(unittest.TestCase):

    def setUp(self):
        self.net = Mlp2.create(6, 5, 4, seed=1)
        self.state = np.random.default_rng(2).standard_normal(6)

    def test_policy_is_a_distribution(self):
        probs, tape = forward_policy(self.net, self.state)
        self.assertEqual(probs.shape, (4,))
        self.assertAlmostEqual(float(probs.sum()), 1.0)
        self.assertTrue(np.all(probs > 0))
        self.assertEqual(tape.kind, 'policy')

    def test_softmax_is_shift_stable(self):
        np.testing.assert_allclose(softmax(np.array([1000.0, 1001.0])), softmax(np.array([0.0, 1.0])))

    def test_input_validation(self):
        with self.assertRaises(ValidationError):
            forward_policy(self.net, np.zeros(3))
        with self.assertRaises(NumericalError):
            forward_policy(self.net, np.full(6, np.inf))

    def test_value_head_needs_one_output(self):
        with self.assertRaises(ValidationError):
            forward_value(self.net, self.state)

    def test_inconsistent_shapes(self):
        with self.assertRaises(ValidationError):
            Mlp2(np.zeros((3, 2)), np.zeros(3), np.zeros((2, 1)), np.zeros(1))

    def test_seeded_create(self):
        self.assertEqual(Mlp2.create(6, 5, 4, seed=1).fingerprint(), self.net.fingerprint())
        self.assertNotEqual(Mlp2.create(6, 5, 4, seed=2).fingerprint(), self.net.fingerprint())


class TestBackward(unittest.TestCase):
    """Analytic gradients against central differences."""

    def test_policy_gradients_match_numeric(self):
        for seed in range(5):
            rng = np.random.default_rng(seed)
            net = Mlp2.create(8, 7, 5, seed=seed)
            loss = PolicyLoss(rng.standard_normal(8), int(rng.integers(5)), float(rng.normal()))
            report = grad_check(net, loss)
            self.assertTrue(report.passed, report.per_tensor)

    def test_value_gradients_match_numeric(self):
        for seed in range(5):
            rng = np.random.default_rng(100 + seed)
            net = Mlp2.create(8, 7, 1, seed=seed)
            report = grad_check(net, ValueLoss(rng.standard_normal(8), float(rng.normal())))
            self.assertTrue(report.passed, report.per_tensor)

    def test_corrupted_gradient_is_detected(self):
        """Test scaling one analytic tensor makes the check fail."""
        rng = np.random.default_rng(7)
        net = Mlp2.create(8, 7, 5, seed=7)
        loss = PolicyLoss(rng.standard_normal(8), 2, 1.0)
        analytic = loss.gradients(net)
        analytic['W1'] = analytic['W1'] * 1.5
        report = grad_check(net, loss, analytic=analytic)
        self.assertFalse(report.passed)
        self.assertGreater(report.per_tensor['W1'], 1e-2)

    def test_zero_advantage_gives_zero_gradient(self):
        net = Mlp2.create(4, 3, 2, seed=0)
        _, tape = forward_policy(net, np.ones(4))
        grads = backward_policy(tape, 1, 0.0)
        self.assertEqual(global_norm(grads), 0.0)

    def test_tape_errors(self):
        """Test missing, mismatched and stale tapes are rejected."""
        net = Mlp2.create(4, 3, 1, seed=0)
        with self.assertRaises(TapeError):
            backward_value(None, 1.0)
        _, tape = forward_value(net, np.ones(4))
        with self.assertRaises(TapeError):
            backward_policy(tape, 0, 1.0)
        sgd_step(net, backward_value(tape, 1.0), lr=0.1)
        with self.assertRaises(TapeError):
            backward_value(tape, 1.0)

    def test_chosen_out_of_range(self):
        net = Mlp2.create(4, 3, 2, seed=0)
        _, tape = forward_policy(net, np.ones(4))
        with self.assertRaises(ValidationError):
            backward_policy(tape, 2, 1.0)


class TestSgd(unittest.TestCase):

    def test_clip_limits_step_norm(self):
        """Test the update norm never exceeds lr times clip."""
        net = Mlp2.zeros(2, 2, 1)
        grads = {name: np.full_like(array, 10.0) for name, array in net.params().items()}
        sgd_step(net, grads, lr=1.0, clip=5.0)
        self.assertAlmostEqual(global_norm(net.params()), 5.0)
        self.assertEqual(net.version, 1)

    def test_zero_rate_freezes(self):
        net = Mlp2.create(3, 2, 2, seed=5)
        before = net.fingerprint()
        grads = {name: np.ones_like(array) for name, array in net.params().items()}
        sgd_step(net, grads, lr=0.0)
        self.assertEqual(net.fingerprint(), before)

    def test_bad_arguments(self):
        net = Mlp2.zeros(2, 2, 1)
        with self.assertRaises(ValidationError):
            sgd_step(net, {}, lr=0.1)
        with self.assertRaises(ValidationError):
            SgdConfig(lr_actor=-1.0)
        with self.assertRaises(ValidationError):
            SgdConfig(clip=0.0)


class TestSampling(unittest.TestCase):

    def test_empirical_frequencies(self):
        rng = np.random.default_rng(0)
        probs = np.array([0.2, 0.5, 0.3])
        draws = np.bincount([sample_categorical(probs, rng) for _ in range(20000)], minlength=3) / 20000
        np.testing.assert_allclose(draws, probs, atol=0.02)

    def test_one_uniform_per_draw(self):
        """Test a draw consumes exactly one uniform from the stream."""
        a, b = np.random.default_rng(9), np.random.default_rng(9)
        sample_categorical(np.array([0.5, 0.5]), a)
        b.random()
        self.assertEqual(a.random(), b.random())

    def test_degenerate_probabilities(self):
        rng = np.random.default_rng(0)
        with self.assertRaises(NumericalError):
            sample_categorical(np.array([0.0, 0.0]), rng)
        with self.assertRaises(ValidationError):
            sample_categorical(np.array([]), rng)

    def test_greedy(self):
        self.assertEqual(greedy_action(np.array([0.1, 0.7, 0.2])), 1)


class TestSerialization(unittest.TestCase):

    def test_lines_restore_exact_parameters(self):
        net = Mlp2.create(5, 4, 3, seed=12)
        lines = mlp_to_lines('actor.1', net)
        self.assertEqual(lines[0], 'tensor actor.1.W1 5x4')
        restored = mlp_from_lines('actor.1', iter(lines))
        self.assertEqual(restored.fingerprint(), net.fingerprint())

    def test_corrupt_lines(self):
        """Test truncation, wrong names and bad widths raise CheckpointError."""
        lines = mlp_to_lines('critic', Mlp2.create(3, 2, 1, seed=0))
        with self.assertRaises(CheckpointError):
            mlp_from_lines('critic', iter(lines[:4]))
        with self.assertRaises(CheckpointError):
            mlp_from_lines('actor.1', iter(lines))
        broken = list(lines)
        broken[1] = '1.0'
        with self.assertRaises(CheckpointError):
            mlp_from_lines('critic', iter(broken))


if __name__ == '__main__':
    unittest.main()
