from ext.cache_manager import CacheManager, cached
from utils.command_handler import CommandAnalytics


class TestCacheManager:

    def test_singleton(self):
        assert CacheManager() is CacheManager()

    def test_cached_calls_once(self):
        calls = []

        @cached('square')
        def square(x):
            calls.append(x)
            return x * x

        assert square(4) == 16
        assert square(4) == 16
        assert square(5) == 25
        assert calls == [4, 5]
        assert CacheManager().hits == 1

    def test_command_analytics(self):
        analytics = CommandAnalytics()
        analytics.track_command('run', 1.5, 0)
        analytics.track_command('run', 0.5, 2)
        analytics.track_error('run', ValueError('boom'))

        stats = CacheManager().get('analytics:command:run')
        assert stats['total_uses'] == 2
        assert stats['exit_codes'] == {0: 1, 2: 1}
        assert CacheManager().get('analytics:errors:run')[0]['type'] == 'ValueError'
