import asyncio
import json

import numpy as np
import pytest
from aiohttp import test_utils, web

from ext.constants import MISSING, AuthError, ConfigError, ContextOverflow, JudgeError, JudgeKind, TaskKind
from ext.dataset import TaskSpec
from ext.judge import (
    JudgeClient,
    JudgeSpec,
    build_system_prompt,
    build_user_prompt,
    parse_validate,
    serialize_row,
    sim_predict,
)

BINARY = TaskSpec(TaskKind.CLASSIFICATION, label_space=('yes', 'no'), target_name='label')
REGRESSION = TaskSpec(TaskKind.REGRESSION, value_range=(0.0, 10.0), target_name='y')
REMOTE = dict(kind=JudgeKind.REMOTE, endpoint_url='http://judge.invalid/v1/chat/completions',
              model_name='test-model')


def rows_with(n_features: int, n_rows: int = 2):
    return [{f"f{j}": float(i * 10 + j) for j in range(n_features)} for i in range(n_rows)]


def chat_body(content: str):
    return {'choices': [{'message': {'role': 'assistant', 'content': content}}]}


class ScriptedClient(JudgeClient):
    """Answers from a fixed list instead of the network"""

    def __init__(self, responses):
        super().__init__(JudgeSpec(**REMOTE))
        self.responses = list(responses)

    async def query(self, bundle):
        self.calls += 1
        return self.responses.pop(0) if self.responses else 'garbage'


async def with_server(handler, scenario):
    app = web.Application()
    app.router.add_post('/v1/chat/completions', handler)
    server = test_utils.TestServer(app)
    await server.start_server()
    try:
        return await scenario(str(server.make_url('/v1/chat/completions')))
    finally:
        await server.close()


class TestPrompts:
    """System and user prompt rendering"""

    def test_system_prompt_lists_labels(self):
        text = build_system_prompt(BINARY, {'name': 'credit', 'feature_summaries': [
            {'name': 'f0', 'min': 0.0, 'max': 2.5, 'mean': 1.25},
        ]})

        assert '"credit"' in text
        assert 'Permitted outputs: "yes", "no"' in text
        assert 'f0: min 0, max 2.5, mean 1.25' in text

    def test_regression_prompt_mentions_range(self):
        text = build_system_prompt(REGRESSION, {'name': 'housing'})
        assert 'Target range in the training data: 0 to 10' in text

    def test_few_shot_then_eval(self):
        few_shot = [({'f0': 1.0, 'f1': 2.0}, 'yes')]
        bundle = build_user_prompt(few_shot, [{'f0': 3.0, 'f1': 4.0}], cap=10, features=['f0', 'f1'])

        assert 'f0=1, f1=2 → yes' in bundle.user_text
        assert '[e0] f0=3, f1=4' in bundle.user_text
        assert bundle.n_context == 1
        assert bundle.eval_ids == ('e0',)

    def test_no_context(self):
        bundle = build_user_prompt([], rows_with(2), cap=10, features=['f0', 'f1'])

        assert 'Labeled examples' not in bundle.user_text
        assert bundle.user_text.startswith('Evaluation rows (2):')

    def test_feature_cap(self):
        features = [f"f{j}" for j in range(25)]
        bundle = build_user_prompt([], rows_with(25), cap=10, features=features)

        for line in bundle.user_text.splitlines()[1:]:
            assert line.count('=') == 10

    def test_prompt_is_stable(self):
        first = build_user_prompt([], rows_with(3), cap=3, features=['f0', 'f1', 'f2'])
        second = build_user_prompt([], rows_with(3), cap=3, features=['f0', 'f1', 'f2'])
        assert first.user_text == second.user_text

    def test_context_overflow(self):
        with pytest.raises(ContextOverflow):
            build_user_prompt([], rows_with(5, 100), cap=5, features=[f"f{j}" for j in range(5)], char_budget=200)

    def test_text_rows_collapse_whitespace(self):
        assert serialize_row({'review': 'a  fine\nfilm'}, ['review'], numeric=False) == 'review=a fine film'


class TestParseValidate:
    """Positional answer matching"""

    def test_case_and_whitespace(self):
        predictions = parse_validate("  YES \nNo\n", BINARY, 2)
        assert [p.parsed for p in predictions] == ['yes', 'no']

    def test_row_id_prefix_is_stripped(self):
        predictions = parse_validate("[e0] yes\n[e1] no", BINARY, 2)
        assert [p.parsed for p in predictions] == ['yes', 'no']

    def test_unknown_label_is_missing(self):
        predictions = parse_validate("yes\nmaybe", BINARY, 2)
        assert predictions[0].parsed == 'yes'
        assert predictions[1].parsed is MISSING

    def test_line_count_mismatch(self):
        predictions = parse_validate("yes", BINARY, 3, eval_ids=['a', 'b', 'c'])

        assert all(p.missing for p in predictions)
        assert [p.example_id for p in predictions] == ['a', 'b', 'c']

    def test_regression_values(self):
        predictions = parse_validate("3.5\nnan\nabc", REGRESSION, 3)

        assert predictions[0].parsed == 3.5
        assert predictions[1].parsed is MISSING
        assert predictions[2].parsed is MISSING


class TestSimulatedJudges:
    """Scripted and centroid judges"""

    def test_scripted_clamps_at_chance(self):
        spec = JudgeSpec(JudgeKind.SIM_SCRIPTED, base_accuracy=0.9, slope_per_intensity=-0.1)
        truths = ['yes', 'no'] * 2000
        predictions = sim_predict(spec, [{}] * len(truths), truths, 5.0, np.random.default_rng(0), BINARY)

        accuracy = np.mean([p.parsed == t for p, t in zip(predictions, truths)])
        assert accuracy == pytest.approx(0.5, abs=0.04)

    def test_scripted_perfect_at_zero_intensity(self):
        spec = JudgeSpec(JudgeKind.SIM_SCRIPTED, base_accuracy=1.0, slope_per_intensity=-0.1)
        truths = ['yes', 'no', 'no']
        predictions = sim_predict(spec, [{}] * 3, truths, 0.0, np.random.default_rng(0), BINARY)

        assert [p.parsed for p in predictions] == truths

    def test_scripted_wrong_answers_stay_in_label_space(self):
        spec = JudgeSpec(JudgeKind.SIM_SCRIPTED, base_accuracy=0.0)
        predictions = sim_predict(spec, [{}] * 50, ['yes'] * 50, 0.0, np.random.default_rng(1), BINARY)

        assert {p.parsed for p in predictions} <= {'yes', 'no'}

    def test_centroid_separates_clusters(self):
        few_shot = [({'u': -3.0 + 0.1 * i, 'v': -3.0}, 'a') for i in range(5)]
        few_shot += [({'u': 3.0 - 0.1 * i, 'v': 3.0}, 'b') for i in range(5)]
        task = TaskSpec(TaskKind.CLASSIFICATION, label_space=('a', 'b'), target_name='cls')
        predictions = sim_predict(JudgeSpec(JudgeKind.SIM_CENTROID), [{'u': -2.5, 'v': -2.0}, {'u': 2.0, 'v': 3.5}],
                                  ['a', 'b'], 0.0, np.random.default_rng(0), task,
                                  few_shot=few_shot, features=['u', 'v'])

        assert [p.parsed for p in predictions] == ['a', 'b']

    def test_centroid_on_text(self):
        few_shot = [({'review': 'great brilliant film'}, 'positive'), ({'review': 'dull awful film'}, 'negative')]
        task = TaskSpec(TaskKind.CLASSIFICATION, label_space=('positive', 'negative'), target_name='sentiment')
        predictions = sim_predict(JudgeSpec(JudgeKind.SIM_CENTROID), [{'review': 'a brilliant cast'}],
                                  ['positive'], 0.0, np.random.default_rng(0), task,
                                  few_shot=few_shot, features=['review'], numeric=False)

        assert predictions[0].parsed == 'positive'

    def test_centroid_needs_context(self):
        with pytest.raises(JudgeError):
            sim_predict(JudgeSpec(JudgeKind.SIM_CENTROID), [{'u': 0.0}], ['a'], 0.0,
                        np.random.default_rng(0), BINARY, features=['u'])


class TestJudgeSpec:

    def test_from_cli_scripted(self):
        spec = JudgeSpec.from_cli('sim:scripted:base=0.9,slope=-0.1,jitter=0.02,seed=3')

        assert spec.kind is JudgeKind.SIM_SCRIPTED
        assert (spec.base_accuracy, spec.slope_per_intensity, spec.response_jitter) == (0.9, -0.1, 0.02)
        assert spec.seed == 3

    def test_from_cli_remote_uses_defaults(self):
        spec = JudgeSpec.from_cli('remote:gpt-4o', defaults={'kind': 'remote', 'endpoint_url': 'http://x/v1'})

        assert spec.model_name == 'gpt-4o'
        assert spec.endpoint_url == 'http://x/v1'

    def test_from_cli_rejects_garbage(self):
        with pytest.raises(ConfigError):
            JudgeSpec.from_cli('oracle')
        with pytest.raises(ConfigError):
            JudgeSpec.from_cli('sim:scripted:wisdom=1')

    def test_remote_needs_endpoint(self):
        with pytest.raises(ConfigError):
            JudgeSpec(JudgeKind.REMOTE, model_name='m')

    def test_from_dict_unknown_key(self):
        with pytest.raises(ConfigError):
            JudgeSpec.from_dict({'kind': 'sim_centroid', 'colour': 'blue'})


class TestSchemaRetries:
    """Whole-batch re-asks on malformed output"""

    def _bundle(self):
        return build_user_prompt([], rows_with(1, 2), cap=1, features=['f0'], label_space=BINARY.label_space)

    def test_valid_after_two_malformed(self):
        client = ScriptedClient(['nonsense', 'yes', 'yes\nno'])
        predictions = asyncio.run(client.predict_batch(self._bundle(), BINARY))

        assert [p.parsed for p in predictions] == ['yes', 'no']
        assert all(p.retries_used == 2 for p in predictions)
        assert client.calls == 3

    def test_always_malformed(self):
        client = ScriptedClient([])
        predictions = asyncio.run(client.predict_batch(self._bundle(), BINARY))

        assert all(p.missing for p in predictions)
        assert all(p.retries_used == 3 for p in predictions)
        assert client.calls == 4


class TestRemoteTransport:
    """HTTP behaviour against a local chat-completions endpoint"""

    def test_rate_limit_then_success(self, monkeypatch, tmp_path):
        monkeypatch.setenv('JUDGECAL_API_KEY', 'secret')
        seen = []

        async def handler(request):
            seen.append(request.headers.get('Authorization'))
            if len(seen) <= 2:
                return web.json_response({'error': 'slow down'}, status=429)
            payload = await request.json()
            assert payload['model'] == 'test-model'
            return web.json_response(chat_body('yes\nno'))

        async def scenario(url):
            spec = JudgeSpec(JudgeKind.REMOTE, endpoint_url=url, model_name='test-model', backoff_start=0.01)
            client = JudgeClient(spec, transcript_path=tmp_path / 'judge.jsonl')
            try:
                bundle = build_user_prompt([], rows_with(1, 2), cap=1, features=['f0'],
                                           label_space=BINARY.label_space)
                return await client.predict_batch(bundle, BINARY), client.calls
            finally:
                await client.close()

        predictions, calls = asyncio.run(with_server(handler, scenario))

        assert [p.parsed for p in predictions] == ['yes', 'no']
        assert calls == 3
        assert seen[0] == 'Bearer secret'
        transcript = [json.loads(line) for line in (tmp_path / 'judge.jsonl').read_text().splitlines()]
        assert transcript[0]['response'] == 'yes\nno'

    def test_auth_failure_is_not_retried(self, monkeypatch):
        monkeypatch.setenv('JUDGECAL_API_KEY', 'wrong')
        seen = []

        async def handler(request):
            seen.append(1)
            return web.json_response({'error': 'bad key'}, status=401)

        async def scenario(url):
            spec = JudgeSpec(JudgeKind.REMOTE, endpoint_url=url, model_name='test-model', backoff_start=0.01)
            client = JudgeClient(spec)
            try:
                await client.query(build_user_prompt([], rows_with(1, 1), cap=1, features=['f0']))
            finally:
                await client.close()

        with pytest.raises(AuthError):
            asyncio.run(with_server(handler, scenario))
        assert len(seen) == 1

    def test_missing_api_key(self, monkeypatch):
        monkeypatch.delenv('JUDGECAL_API_KEY', raising=False)
        client = JudgeClient(JudgeSpec(**REMOTE))

        with pytest.raises(AuthError):
            asyncio.run(client.query(build_user_prompt([], rows_with(1, 1), cap=1, features=['f0'])))
