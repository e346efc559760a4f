#!/usr/bin/env python3
"""
Tests for reply parsing, the HTTP chat-completions backend and the
simulated recommender.
"""

import os
import tempfile
import unittest
from unittest import mock

import numpy as np
import requests

from rpprec.core.actions import assemble, load_catalog
from rpprec.core.dataset import sample_candidates
from rpprec.core.exceptions import EnvironmentFailure, ValidationError
from rpprec.core.llm_env import (
    API_KEY_ENV,
    ChatCompletionsBackend,
    EchoBackend,
    HttpSettings,
    LlmEnvironment,
    SimPopulation,
    gen_sim_population,
    http_complete,
    parse_reply,
    render_ranking,
    simulate_reply,
)
from rpprec.core.metrics import ndcg_at_k
from rpprec.core.types import CandidateSet, ItemRef, JointAction, PatternKind, UserRecord


def make_cands(*titles, truth=0):
    return CandidateSet(tuple(ItemRef(i, t) for i, t in enumerate(titles)), truth)


def response(status, body=None, text=''):
    resp = mock.Mock()
    resp.status_code = status
    resp.text = text
    if isinstance(body, Exception):
        resp.json.side_effect = body
    else:
        resp.json.return_value = body
    return resp


def chat_body(content):
    return {'choices': [{'message': {'role': 'assistant', 'content': content}}]}


class TestParseReply(unittest.TestCase):
    """Matching reply lines onto candidates."""

    def setUp(self):
        self.cands = make_cands('Movie 9', 'Movie 10', 'Movie 11')

    def test_trim_and_pad(self):
        """Test duplicates and noise are dropped and missing candidates appended."""
        reply = '1. Movie 10\n2. Movie 10\n3. Something else\n\n4. movie 9'
        ranking = parse_reply(reply, self.cands)
        self.assertEqual(ranking.order, (1, 0, 2))
        self.assertEqual(ranking.n_matched, 2)
        self.assertTrue(ranking.padded)
        self.assertEqual(ranking.rank_of(2), 3)

    def test_order_prefixes_and_quotes(self):
        reply = '(1) "Movie 11"\n2) Movie 9\n3. “Movie 10”'
        ranking = parse_reply(reply, self.cands)
        self.assertEqual(ranking.order, (2, 0, 1))
        self.assertFalse(ranking.padded)

    def test_longest_contained_title_wins(self):
        cands = make_cands('Alien', 'Aliens', 'Heat')
        ranking = parse_reply('I would pick Aliens first\nthen heat, obviously', cands)
        self.assertEqual(ranking.order[:2], (1, 2))
        self.assertEqual(ranking.n_matched, 2)

    def test_title_starting_with_number(self):
        cands = make_cands('2001: A Space Odyssey', 'Heat')
        self.assertEqual(parse_reply('2001: A Space Odyssey\nHeat', cands).order, (0, 1))
        self.assertEqual(parse_reply('1. Heat\n2. 2001: A Space Odyssey', cands).order, (1, 0))

    def test_order_number_never_matches_numeric_title(self):
        """Test a line's order number is not searched for candidate titles."""
        cands = make_cands('Alpha', 'Beta', '1', 'Gamma')
        ranking = parse_reply('1. Totally Unknown Film\n2. Beta\n3. Alpha', cands)
        self.assertEqual(ranking.order[:2], (1, 0))
        self.assertEqual(ranking.n_matched, 2)
        cands = make_cands('10', 'Heat')
        self.assertEqual(parse_reply('10. Unknown\n11. 10', cands).order, (0, 1))
        self.assertEqual(parse_reply('10. Unknown\n11. 10', cands).n_matched, 1)

    def test_empty_reply_is_identity(self):
        ranking = parse_reply('', self.cands)
        self.assertEqual(ranking.order, (0, 1, 2))
        self.assertEqual(ranking.n_matched, 0)
        self.assertEqual(parse_reply(None, self.cands).order, (0, 1, 2))

    def test_rendered_ranking_parses_back(self):
        order = (2, 0, 1)
        self.assertEqual(parse_reply(render_ranking(order, self.cands), self.cands).order, order)

    def test_random_replies_always_give_a_permutation(self):
        """Test ten thousand noisy replies each yield a full permutation."""
        rng = np.random.default_rng(0)
        titles = [f"Film {i}" for i in range(10)]
        cands = make_cands(*titles)
        noise = ['', 'Sure!', 'Here is the ranking:', '42.', '- none', '\t', 'film']
        for _ in range(10000):
            lines = []
            for _ in range(int(rng.integers(0, 15))):
                if rng.random() < 0.6:
                    title = titles[int(rng.integers(10))]
                    style = int(rng.integers(4))
                    lines.append([title, f"{rng.integers(1, 20)}. {title}", f'"{title}"', title.upper()][style])
                else:
                    lines.append(noise[int(rng.integers(len(noise)))])
            ranking = parse_reply('\n'.join(lines), cands)
            self.assertEqual(sorted(ranking.order), list(range(10)))
            self.assertLessEqual(ranking.n_matched, 10)
            self.assertEqual(ranking.padded, ranking.n_matched < 10)


class TestChatCompletionsBackend(unittest.TestCase):

    def setUp(self):
        self.settings = HttpSettings(endpoint='http://llm.test/v1/chat/completions', model='tiny',
                                     max_retries=2, backoff_factor=0)
        self.session = mock.Mock()

    def backend(self):
        return ChatCompletionsBackend(self.settings, session=self.session)

    def test_rate_limit_then_success(self):
        """Test a 429 is retried and the second reply is returned."""
        self.session.post.side_effect = [response(429), response(200, chat_body('1. Heat'))]
        backend = self.backend()
        self.assertEqual(backend.complete('rank these'), '1. Heat')
        self.assertEqual(self.session.post.call_count, 2)
        self.assertEqual(backend.retries, 1)
        self.assertEqual(backend.calls, 1)
        payload = self.session.post.call_args.kwargs['json']
        self.assertEqual(payload['model'], 'tiny')
        self.assertEqual(payload['messages'], [{'role': 'user', 'content': 'rank these'}])

    def test_transport_error_is_retried(self):
        self.session.post.side_effect = [requests.ConnectionError('reset'), response(200, chat_body('ok'))]
        self.assertEqual(self.backend().complete('x'), 'ok')

    def test_gives_up_after_max_retries(self):
        self.session.post.side_effect = [response(503)] * 3
        with self.assertRaises(EnvironmentFailure):
            self.backend().complete('x')
        self.assertEqual(self.session.post.call_count, 3)

    def test_client_error_is_not_retried(self):
        self.session.post.side_effect = [response(400, text='bad request')]
        with self.assertRaises(EnvironmentFailure):
            self.backend().complete('x')
        self.assertEqual(self.session.post.call_count, 1)

    def test_malformed_bodies(self):
        for body in ({}, {'choices': []}, chat_body(None), ValueError('not json')):
            with self.subTest(body=body):
                self.session.post.side_effect = [response(200, body)]
                with self.assertRaises(EnvironmentFailure):
                    self.backend().complete('x')

    def test_api_key_header(self):
        self.session.post.side_effect = [response(200, chat_body('ok'))]
        with mock.patch.dict(os.environ, {API_KEY_ENV: 'secret'}):
            self.backend().complete('x')
        headers = self.session.post.call_args.kwargs['headers']
        self.assertEqual(headers['Authorization'], 'Bearer secret')

    def test_http_complete_sends_temperature(self):
        self.session.post.side_effect = [response(200, chat_body('1. Heat'))]
        reply = http_complete(self.settings, 'rank these', temperature=0.2, session=self.session)
        self.assertEqual(reply, '1. Heat')
        self.assertEqual(self.session.post.call_args.kwargs['json']['temperature'], 0.2)

    def test_settings_validation(self):
        with self.assertRaises(ValidationError):
            HttpSettings(endpoint='', model='m')
        with self.assertRaises(ValidationError):
            HttpSettings(endpoint='http://x', model='m', max_in_flight=0)

    def test_llm_environment_counts_queries(self):
        catalog = load_catalog()
        cands = make_cands('Heat', 'Alien')
        user_items = tuple(ItemRef(i, f"Seen {i}") for i in range(10, 14))
        user = UserRecord(0, user_items, cands.items[0])
        prompt = assemble(user, cands, JointAction((0, 0, 0, 0)), 2, catalog)
        env = LlmEnvironment(EchoBackend())
        reply = env.query(user, prompt, cands, np.random.default_rng(0))
        self.assertEqual(reply, prompt.text.splitlines()[-1])
        self.assertEqual(env.calls, 1)
        self.assertEqual(env.backend.calls, 1)


class TestSimulator(unittest.TestCase):
    """The seeded simulated recommender and its populations."""

    def setUp(self):
        self.catalog = load_catalog()
        self.population = gen_sim_population(10, self.catalog, seed=11, n_items=80)

    def _prompt(self, user, action, length):
        cands = sample_candidates(user, self.population.catalog, seed=user.user_id)
        return assemble(user, cands, action, length, self.catalog), cands

    def test_preferred_action_with_full_history_ranks_truth_first(self):
        """Test a noiseless prompt puts the held-out item on top."""
        for user in self.population.users:
            spec = self.population.specs[user.user_id]
            prompt, cands = self._prompt(user, spec.preferred, len(user.history))
            reply = simulate_reply(spec, prompt, cands, np.random.default_rng(0))
            self.assertEqual(parse_reply(reply, cands).order[0], cands.ground_truth_pos)

    def test_short_history_demotes_truth(self):
        for user in self.population.users:
            spec = self.population.specs[user.user_id]
            prompt, cands = self._prompt(user, spec.preferred, 1)
            reply = simulate_reply(spec, prompt, cands, np.random.default_rng(0))
            # one title out of a window of w costs floor((1 - 1/w) * demotion) places
            shift = int((1.0 - 1.0 / spec.signal_window) * spec.demotion)
            self.assertEqual(parse_reply(reply, cands).rank_of(cands.ground_truth_pos), 1 + shift)

    def test_replies_are_seeded(self):
        user = self.population.users[0]
        action = JointAction((1, 0, 4, 2))
        prompt, cands = self._prompt(user, action, 3)
        spec = self.population.specs[user.user_id]
        a = simulate_reply(spec, prompt, cands, np.random.default_rng(5))
        b = simulate_reply(spec, prompt, cands, np.random.default_rng(5))
        self.assertEqual(a, b)

    def test_more_matched_sentences_never_hurt(self):
        """Test mean NDCG@10 rises with the number of matched sentence patterns."""
        user = self.population.users[0]
        spec = self.population.specs[user.user_id]
        sentence_kinds = PatternKind.sentence_patterns()
        means = []
        for matched in range(4):
            action = spec.preferred
            for kind in sentence_kinds[:3 - matched]:
                action = action.replace(kind, (spec.preferred[kind] + 1) % self.catalog.sizes[kind])
            self.assertEqual(spec.matched_patterns(action), matched)
            prompt, cands = self._prompt(user, action, len(user.history))
            rng = np.random.default_rng(matched)
            scores = [
                ndcg_at_k(parse_reply(simulate_reply(spec, prompt, cands, rng), cands).order,
                          cands.ground_truth_pos, 10)
                for _ in range(1000)
            ]
            means.append(float(np.mean(scores)))
        for lower, higher in zip(means, means[1:]):
            self.assertGreaterEqual(higher, lower)
        self.assertGreater(means[3], means[0])
        self.assertEqual(means[3], 1.0)

    def test_unknown_user_fails(self):
        env = self.population.environment()
        user = self.population.users[0]
        prompt, cands = self._prompt(user, JointAction((0, 0, 0, 0)), 2)
        env.specs.pop(user.user_id)
        with self.assertRaises(EnvironmentFailure):
            env.query(user, prompt, cands, np.random.default_rng(0))

    def test_population_is_seeded(self):
        again = gen_sim_population(10, self.catalog, seed=11, n_items=80)
        self.assertEqual(again.to_json(), self.population.to_json())
        other = gen_sim_population(10, self.catalog, seed=12, n_items=80)
        self.assertNotEqual(other.to_json(), self.population.to_json())

    def test_histories_are_long_enough(self):
        for user in self.population.users:
            self.assertTrue(10 <= len(user.history) <= 30)
            self.assertNotIn(user.holdout_item, user.history)

    def test_planted_action(self):
        planted = JointAction((2, 0, 5, 1))
        population = gen_sim_population(5, self.catalog, seed=1, n_items=64,
                                        planted_action=planted, planted_share=1.0)
        for spec in population.specs.values():
            for kind in PatternKind.sentence_patterns():
                self.assertEqual(spec.preferred[kind], planted[kind])

    def test_generation_validation(self):
        with self.assertRaises(ValidationError):
            gen_sim_population(0, self.catalog, seed=1)
        with self.assertRaises(ValidationError):
            gen_sim_population(5, self.catalog, seed=1, n_items=10)
        with self.assertRaises(ValidationError):
            gen_sim_population(5, self.catalog, seed=1, n_items=64, planted_share=1.5)

    def test_save_and_load(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'sim', 'population.json')
            self.population.save(path)
            loaded = SimPopulation.load(path)
        self.assertEqual(loaded.to_json(), self.population.to_json())
        user = loaded.users[3]
        np.testing.assert_allclose(loaded.specs[user.user_id].preference,
                                   self.population.specs[user.user_id].preference)

    def test_malformed_population(self):
        with self.assertRaises(ValidationError):
            SimPopulation.from_json('{"format": "other", "version": 1}')
        with self.assertRaises(ValidationError):
            SimPopulation.from_json('{"format": "rpprec-population", "version": 1}')

    def test_split(self):
        split = self.population.split(6, 3, seed=2)
        self.assertEqual(len(split.train_users), 6)
        self.assertEqual(len(split.test_users), 3)
        self.assertFalse(set(split.train_user_ids) & set(split.test_user_ids))
        with self.assertRaises(ValidationError):
            self.population.split(8, 3, seed=2)


if __name__ == '__main__':
    unittest.main()
