#!/usr/bin/env python3
"""
Tests for the shared domain types.
"""

import unittest

from rpprec.core.exceptions import IngestionError, ValidationError
from rpprec.core.types import (
    PATTERNS,
    CandidateSet,
    ItemCatalog,
    ItemRef,
    JointAction,
    PatternKind,
    UserRecord,
    intern_catalog,
    iter_joint_actions,
    validate_joint_action,
)


def make_items(n, start=0):
    return tuple(ItemRef(i, f"Movie {i}") for i in range(start, start + n))


class TestItemCatalog(unittest.TestCase):
    """Interning titles into dense ids."""

    def test_interning_is_idempotent_and_dense(self):
        """Test the same title always maps to the same id, in first-seen order."""
        catalog = ItemCatalog()
        first = catalog.intern('Heat')
        second = catalog.intern('Alien')
        again = catalog.intern('Heat')
        self.assertEqual(first.id, 0)
        self.assertEqual(second.id, 1)
        self.assertIs(again, first)
        self.assertEqual(len(catalog), 2)
        self.assertEqual(catalog.titles, ['Heat', 'Alien'])
        self.assertEqual(catalog.lookup('Alien'), second)
        self.assertIn('Heat', catalog)

    def test_empty_title_rejected_with_row(self):
        """Test an empty title raises IngestionError naming the row."""
        catalog = ItemCatalog()
        with self.assertRaises(IngestionError) as ctx:
            catalog.intern('', row=7)
        self.assertEqual(ctx.exception.row, 7)
        self.assertIn('row 7', str(ctx.exception))

    def test_line_break_in_title_rejected(self):
        """Test titles containing a line break are refused."""
        catalog = ItemCatalog()
        with self.assertRaises(IngestionError):
            catalog.intern('Two\nLines')
        with self.assertRaises(ValidationError):
            ItemRef(0, 'Para\u2029graph')

    def test_intern_catalog_returns_row_ids(self):
        """Test intern_catalog reuses ids for repeated titles."""
        catalog, ids = intern_catalog(['A', 'B', 'A', 'C'])
        self.assertEqual(ids, [0, 1, 0, 2])
        self.assertEqual(len(catalog), 3)

    def test_intern_catalog_rejects_empty(self):
        with self.assertRaises(IngestionError):
            intern_catalog([])


class TestUserAndCandidates(unittest.TestCase):
    """UserRecord and CandidateSet invariants."""

    def test_user_needs_four_history_items(self):
        """Test users with fewer than 4 history items are rejected."""
        items = make_items(5)
        with self.assertRaises(ValidationError):
            UserRecord(0, items[:3], items[4])
        user = UserRecord(0, items[:4], items[4])
        self.assertEqual(user.item_ids, frozenset(range(5)))

    def test_holdout_cannot_be_in_history(self):
        items = make_items(5)
        with self.assertRaises(ValidationError):
            UserRecord(0, items[:4], items[0])

    def test_candidate_set_ground_truth(self):
        """Test the ground truth property reads the item at its position."""
        items = make_items(10)
        cands = CandidateSet(items, 3)
        self.assertEqual(cands.ground_truth, items[3])
        self.assertEqual(len(cands), 10)

    def test_candidate_set_rejects_bad_position_and_duplicates(self):
        items = make_items(3)
        with self.assertRaises(ValidationError):
            CandidateSet(items, 3)
        with self.assertRaises(ValidationError):
            CandidateSet((items[0], items[1], items[0]), 0)
        with self.assertRaises(ValidationError):
            CandidateSet((), 0)


class TestJointAction(unittest.TestCase):
    """Joint actions across the four patterns."""

    def test_pattern_keys(self):
        """Test patterns resolve from names and numbers."""
        self.assertEqual(PatternKind.from_key('role_playing'), PatternKind.ROLE_PLAYING)
        self.assertEqual(PatternKind.from_key('history-records'), PatternKind.HISTORY_RECORDS)
        self.assertEqual(PatternKind.from_key('3'), PatternKind.REASONING_GUIDANCE)
        with self.assertRaises(ValidationError):
            PatternKind.from_key('tone')
        self.assertEqual(len(PATTERNS), 4)
        self.assertNotIn(PatternKind.HISTORY_RECORDS, PatternKind.sentence_patterns())

    def test_serialize_and_parse(self):
        """Test the compact text form."""
        action = JointAction((0, 3, 8, 4))
        self.assertEqual(action.serialize(), '1:0,2:3,3:8,4:4')
        self.assertEqual(JointAction.parse('4:4,3:8,2:3,1:0'), action)
        with self.assertRaises(ValidationError):
            JointAction.parse('1:0,2:3')
        with self.assertRaises(ValidationError):
            JointAction.parse('garbage')

    def test_indexing_and_replace(self):
        action = JointAction((1, 2, 3, 4))
        self.assertEqual(action[PatternKind.REASONING_GUIDANCE], 3)
        changed = action.replace(PatternKind.OUTPUT_FORMAT, 0)
        self.assertEqual(changed.indices, (1, 2, 3, 0))
        self.assertEqual(action.indices, (1, 2, 3, 4))
        self.assertEqual(action.as_dict()['history_records'], 2)

    def test_negative_index_rejected(self):
        with self.assertRaises(ValidationError) as ctx:
            JointAction((0, -1, 0, 0))
        self.assertEqual(ctx.exception.pattern, 'history_records')

    def test_validate_names_offending_pattern(self):
        """Test an out-of-range index names its pattern."""
        sizes = {PatternKind.ROLE_PLAYING: 3, PatternKind.HISTORY_RECORDS: 4,
                 PatternKind.REASONING_GUIDANCE: 9, PatternKind.OUTPUT_FORMAT: 5}
        self.assertEqual(validate_joint_action(JointAction((2, 3, 8, 4)), sizes).indices, (2, 3, 8, 4))
        with self.assertRaises(ValidationError) as ctx:
            validate_joint_action({'role_playing': 0, 'history_records': 0,
                                   'reasoning_guidance': 9, 'output_format': 0}, sizes)
        self.assertEqual(ctx.exception.pattern, 'reasoning_guidance')

    def test_iter_joint_actions_is_lexicographic(self):
        """Test enumeration order and pinning."""
        sizes = {PatternKind.ROLE_PLAYING: 2, PatternKind.HISTORY_RECORDS: 2,
                 PatternKind.REASONING_GUIDANCE: 2, PatternKind.OUTPUT_FORMAT: 2}
        actions = list(iter_joint_actions(sizes))
        self.assertEqual(len(actions), 16)
        self.assertEqual(actions[0].indices, (0, 0, 0, 0))
        self.assertEqual(actions[1].indices, (0, 0, 0, 1))
        self.assertEqual(actions[-1].indices, (1, 1, 1, 1))
        pinned = list(iter_joint_actions(sizes, fixed={PatternKind.HISTORY_RECORDS: 1}))
        self.assertEqual(len(pinned), 8)
        self.assertTrue(all(a[PatternKind.HISTORY_RECORDS] == 1 for a in pinned))

    def test_iter_joint_actions_covers_uneven_space_in_order(self):
        sizes = {PatternKind.ROLE_PLAYING: 3, PatternKind.HISTORY_RECORDS: 4,
                 PatternKind.REASONING_GUIDANCE: 9, PatternKind.OUTPUT_FORMAT: 5}
        indices = [a.indices for a in iter_joint_actions(sizes)]
        self.assertEqual(len(indices), 540)
        self.assertEqual(len(set(indices)), 540)
        self.assertEqual(indices, sorted(indices))
        self.assertEqual(indices[5], (0, 0, 1, 0))
        pinned = [a.indices for a in iter_joint_actions(
            sizes, fixed={PatternKind.ROLE_PLAYING: 2, PatternKind.OUTPUT_FORMAT: 4})]
        self.assertEqual(len(pinned), 36)
        self.assertEqual(pinned[0], (2, 0, 0, 4))
        self.assertEqual(pinned[-1], (2, 3, 8, 4))


if __name__ == '__main__':
    unittest.main()
