import asyncio
from asyncio import Lock, Semaphore
import logging
from contextlib import asynccontextmanager
from typing import Dict, Optional

from .constants import MAX_IN_FLIGHT


class BaseLockHandler:
    """Keyed locks plus a bounded gate for in-flight work"""

    def __init__(self, max_in_flight: int = MAX_IN_FLIGHT):
        self._locks: Dict[str, Lock] = {}
        self._gate: Optional[Semaphore] = None
        self.max_in_flight = max(1, int(max_in_flight))
        self.logger = logging.getLogger(self.__class__.__name__)

    async def acquire_lock(self, key: str, timeout: float = 10.0) -> Optional[Lock]:
        """
        Get or create the lock for ``key`` and acquire it

        Args:
            key: unique identifier for the lock
            timeout: maximum seconds to wait

        Returns:
            The acquired lock, or None on timeout
        """
        if key not in self._locks:
            self._locks[key] = Lock()

        try:
            await asyncio.wait_for(self._locks[key].acquire(), timeout=timeout)
            return self._locks[key]
        except asyncio.TimeoutError:
            self.logger.error(f"Failed to acquire lock for {key} within {timeout} seconds")
            return None

    def release_lock(self, key: str):
        """Release the lock for ``key``"""
        if key in self._locks and self._locks[key].locked():
            try:
                self._locks[key].release()
            except RuntimeError:
                self.logger.warning(f"Attempted to release an unlocked lock for {key}")

    @asynccontextmanager
    async def locked(self, key: str, timeout: float = 60.0):
        lock = await self.acquire_lock(key, timeout=timeout)
        if lock is None:
            raise asyncio.TimeoutError(f"lock {key} not acquired within {timeout}s")
        try:
            yield lock
        finally:
            self.release_lock(key)

    @asynccontextmanager
    async def in_flight(self):
        """Admit at most ``max_in_flight`` holders at once"""
        if self._gate is None:
            self._gate = Semaphore(self.max_in_flight)
        async with self._gate:
            yield

    def cleanup(self):
        self._locks.clear()
        self._gate = None

    async def __aenter__(self):
        return self

    async def __aexit__(self, exc_type, exc_val, exc_tb):
        self.cleanup()
