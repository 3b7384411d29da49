import logging
from functools import wraps
from typing import Any, Dict

logger = logging.getLogger(__name__)


class CacheManager:
    """
    Process-wide memo for expensive, immutable artefacts

    Prepared datasets are keyed by everything that determines them (manifest
    path and mtime, split seed, feature cap), so a hit is safe to share between
    runs. Command analytics live here too for the lifetime of the process.
    """
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __init__(self):
        if not hasattr(self, 'initialized'):
            self.memory_cache: Dict[Any, Any] = {}
            self.hits = 0
            self.misses = 0
            self.logger = logging.getLogger('CacheManager')
            self.initialized = True

    def get(self, key, default: Any = None) -> Any:
        if key not in self.memory_cache:
            self.misses += 1
            return default
        self.hits += 1
        self.logger.debug(f"Cache hit: {key}")
        return self.memory_cache[key]

    def set(self, key, value: Any) -> None:
        self.memory_cache[key] = value
        self.logger.debug(f"Cache set: {key}")

    def clear(self) -> None:
        self.memory_cache.clear()
        self.hits = 0
        self.misses = 0


def cached(key_prefix: str):
    """Memoise a pure function on its (hashable) arguments"""
    def decorator(func):
        @wraps(func)
        def wrapper(*args, **kwargs):
            cache_key = (key_prefix, args, tuple(sorted(kwargs.items())))
            cache_manager = CacheManager()
            value = cache_manager.get(cache_key)
            if value is not None:
                return value
            value = func(*args, **kwargs)
            cache_manager.set(cache_key, value)
            return value
        return wrapper
    return decorator
