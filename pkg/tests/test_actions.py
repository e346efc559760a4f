#!/usr/bin/env python3
"""
Tests for the action catalog, prompt assembly and sentence refinement.
"""

import unittest

from rpprec.core.actions import (
    CANDIDATE_PLACEHOLDER,
    HISTORY_PLACEHOLDER,
    SentenceRefiner,
    apply_length_action,
    assemble,
    catalog_from_dict,
    check_template,
    history_sentence,
    load_catalog,
    render_candidate_list,
)
from rpprec.core.exceptions import ValidationError
from rpprec.core.llm_env import EchoBackend, LlmBackend
from rpprec.core.types import CandidateSet, ItemRef, JointAction, PatternKind, UserRecord


class StubBackend(LlmBackend):
    """Replies from a script; an Exception entry is raised instead."""

    name = 'stub'

    def __init__(self, replies):
        super().__init__()
        self.replies = list(replies)

    def _complete(self, prompt, temperature):
        reply = self.replies.pop(0)
        if isinstance(reply, Exception):
            raise reply
        return reply


def make_user():
    history = tuple(ItemRef(i, f"Movie {i}") for i in range(5))
    return UserRecord(0, history, ItemRef(9, 'Movie 9'), key='u0')


def make_cands():
    return CandidateSet((ItemRef(9, 'Movie 9'), ItemRef(10, 'Movie 10'), ItemRef(11, 'Movie 11')), 0)


class TestCatalog(unittest.TestCase):
    """The packaged catalog and catalog validation."""

    def setUp(self):
        self.catalog = load_catalog()

    def test_default_sizes(self):
        """Test the packaged catalog sizes per pattern."""
        sizes = self.catalog.sizes
        self.assertEqual(sizes[PatternKind.ROLE_PLAYING], 3)
        self.assertEqual(sizes[PatternKind.HISTORY_RECORDS], 4)
        self.assertEqual(sizes[PatternKind.REASONING_GUIDANCE], 9)
        self.assertEqual(sizes[PatternKind.OUTPUT_FORMAT], 5)
        self.assertEqual(self.catalog.joint_space_size, 540)
        self.assertEqual(self.catalog.l0, 1)

    def test_task_wise_defaults_are_index_zero(self):
        self.assertEqual(self.catalog.sentence(PatternKind.ROLE_PLAYING, 0).template, 'You are a movie expert.')
        self.assertIn(CANDIDATE_PLACEHOLDER, self.catalog.sentence(PatternKind.REASONING_GUIDANCE, 0).template)

    def test_out_of_range_names_pattern(self):
        with self.assertRaises(ValidationError) as ctx:
            self.catalog.sentence(PatternKind.OUTPUT_FORMAT, 5)
        self.assertEqual(ctx.exception.pattern, 'output_format')
        with self.assertRaises(ValidationError):
            self.catalog.increment(4)
        with self.assertRaises(ValidationError):
            self.catalog.sentence(PatternKind.HISTORY_RECORDS, 0)

    def test_history_index_for_target_length(self):
        """Test the smallest increment reaching the target from l0 is chosen."""
        self.assertEqual(self.catalog.history_index_for(10), 3)
        self.assertEqual(self.catalog.history_index_for(3), 1)
        self.assertEqual(self.catalog.history_index_for(4), 2)
        self.assertEqual(self.catalog.history_index_for(1), 0)

    def test_history_index_never_undershoots(self):
        # 1 + 4 falls one short of 6, so the step of 8 is the first that covers it
        self.assertEqual(self.catalog.history_index_for(6), 3)
        self.assertEqual(self.catalog.history_index_for(5), 2)
        self.assertEqual(self.catalog.history_index_for(9), 3)
        self.assertEqual(self.catalog.history_index_for(0), 0)
        self.assertEqual(self.catalog.history_index_for(50), 3)
        for target in range(0, 12):
            index = self.catalog.history_index_for(target)
            if self.catalog.l0 + self.catalog.increment(index).increment < target:
                self.assertEqual(index, 3)

    def test_round_trip_through_dict(self):
        self.assertEqual(catalog_from_dict(self.catalog.to_dict()), self.catalog)

    def test_template_placeholder_checks(self):
        """Test each pattern needs exactly its placeholders."""
        check_template(PatternKind.HISTORY_RECORDS, f"Seen {HISTORY_PLACEHOLDER}.")
        with self.assertRaises(ValidationError):
            check_template(PatternKind.HISTORY_RECORDS, "Seen nothing.")
        with self.assertRaises(ValidationError):
            check_template(PatternKind.ROLE_PLAYING, f"Expert on {CANDIDATE_PLACEHOLDER}")
        with self.assertRaises(ValidationError):
            check_template(PatternKind.REASONING_GUIDANCE, "Rank <SeqH2> using <SeqH7>")
        with self.assertRaises(ValidationError):
            check_template(PatternKind.OUTPUT_FORMAT, "   ")

    def test_duplicate_sentences_rejected(self):
        data = self.catalog.to_dict()
        data['patterns']['role_playing'] = ['Same.', 'Same.']
        with self.assertRaises(ValidationError):
            catalog_from_dict(data)

    def test_bad_version(self):
        data = self.catalog.to_dict()
        data['version'] = 2
        with self.assertRaises(ValidationError):
            catalog_from_dict(data)


class TestAssembly(unittest.TestCase):
    """Prompt text built from a joint action."""

    def setUp(self):
        self.catalog = load_catalog()
        self.user = make_user()
        self.cands = make_cands()

    def test_four_lines_in_pattern_order(self):
        """Test the prompt joins the four sentences with newlines."""
        prompt = assemble(self.user, self.cands, JointAction((0, 0, 0, 0)), 2, self.catalog)
        lines = prompt.text.split('\n')
        self.assertEqual(len(lines), 4)
        self.assertEqual(lines[0], 'You are a movie expert.')
        self.assertEqual(lines[1], 'I\'ve watched these movies "Movie 4", "Movie 3" recently.')
        self.assertTrue(lines[2].startswith('Please rank these candidate movies 1. "Movie 9", 2. "Movie 10"'))
        self.assertEqual(prompt.used_history_len, 2)
        self.assertNotIn('<SeqH', prompt.text)

    def test_history_length_is_clamped(self):
        prompt = assemble(self.user, self.cands, JointAction((0, 0, 0, 0)), 50, self.catalog)
        self.assertEqual(prompt.used_history_len, 5)
        prompt = assemble(self.user, self.cands, JointAction((0, 0, 0, 0)), 0, self.catalog)
        self.assertEqual(prompt.used_history_len, 1)

    def test_invalid_action_rejected(self):
        with self.assertRaises(ValidationError):
            assemble(self.user, self.cands, JointAction((3, 0, 0, 0)), 2, self.catalog)

    def test_template_override(self):
        """Test refined templates replace catalog text."""
        prompt = assemble(self.user, self.cands, JointAction((0, 0, 0, 0)), 1, self.catalog,
                          templates={PatternKind.ROLE_PLAYING: 'You are a film critic.'})
        self.assertTrue(prompt.text.startswith('You are a film critic.\n'))

    def test_history_sentence_and_lengths(self):
        self.assertEqual(history_sentence(self.user, 1), 'I\'ve watched these movies "Movie 4" recently.')
        with self.assertRaises(ValueError):
            history_sentence(self.user, 0)
        self.assertEqual(apply_length_action(1, self.catalog.increment(3), 20), 9)
        self.assertEqual(apply_length_action(9, 8, 12), 12)
        with self.assertRaises(ValueError):
            apply_length_action(0, 1, 5)

    def test_candidate_list(self):
        self.assertEqual(render_candidate_list(self.cands), '1. "Movie 9", 2. "Movie 10", 3. "Movie 11"')


class TestSentenceRefiner(unittest.TestCase):
    """Refinement through a secondary LLM, with fallback to the original."""

    def test_refined_reply_is_cleaned_and_cached(self):
        """Test replies are unquoted and cached per sentence."""
        backend = StubBackend(['  "You are a  film critic."  '])
        refiner = SentenceRefiner(backend, instruction='Refine:')
        self.assertEqual(refiner.refine_one('You are a movie expert.'), 'You are a film critic.')
        self.assertEqual(refiner.refine_one('You are a movie expert.'), 'You are a film critic.')
        self.assertEqual(backend.calls, 1)
        self.assertEqual(refiner.stats()['cache_hits'], 1)
        self.assertEqual(refiner.build_request('x'), 'Refine:\nx')

    def test_lost_placeholder_keeps_original(self):
        """Test a reply that drops a placeholder is rejected."""
        sentence = 'Please rank these candidate movies <SeqH2> now.'
        refiner = SentenceRefiner(StubBackend(['Please rank the movies now.']))
        self.assertEqual(refiner.refine_one(sentence), sentence)
        self.assertEqual(refiner.rejected, 1)

    def test_failure_keeps_original_and_is_not_cached(self):
        """Test a failing call falls back and is retried next time."""
        backend = StubBackend([RuntimeError('boom'), 'Refined.'])
        refiner = SentenceRefiner(backend)
        self.assertEqual(refiner.refine_one('Original.'), 'Original.')
        self.assertEqual(refiner.failures, 1)
        self.assertEqual(refiner.refine_one('Original.'), 'Refined.')
        self.assertEqual(backend.calls, 2)

    def test_echo_backend_is_identity(self):
        """Test the echo backend returns every template unchanged."""
        catalog = load_catalog()
        action = JointAction((1, 2, 3, 4))
        refined = SentenceRefiner(EchoBackend()).refine_templates(catalog, action)
        self.assertEqual(refined, catalog.templates(action))


if __name__ == '__main__':
    unittest.main()
