"""
In-memory caching for expensive per-dataset quantities
"""

import threading
from collections import OrderedDict
from typing import Any, Callable, Dict, Hashable, Optional
from dataclasses import dataclass
from src.core.structured_logging import get_structured_logger, emit_metric


@dataclass
class CacheEntry:
    """Cache entry with the number of reads served"""
    data: Any
    reads: int = 0


class MemoryCache:
    """Thread-safe in-memory cache with oldest-first eviction"""

    def __init__(self, name: str = "memory", max_entries: int = 64):
        self.name = name
        self.max_entries = max_entries
        self.cache: "OrderedDict[Hashable, CacheEntry]" = OrderedDict()
        self.logger = get_structured_logger("cache")
        self.hit_count = 0
        self.miss_count = 0
        self._lock = threading.Lock()

    def get(self, key: Hashable) -> Optional[Any]:
        """Get cached value, or None on a miss"""
        with self._lock:
            entry = self.cache.get(key)
            if entry is not None:
                entry.reads += 1
                self.hit_count += 1
            else:
                self.miss_count += 1

        if entry is not None:
            self.logger.debug("cache_hit", cache=self.name, key=str(key))
            emit_metric("cache_hit", 1, {"cache_type": self.name})
            return entry.data

        self.logger.debug("cache_miss", cache=self.name, key=str(key))
        emit_metric("cache_miss", 1, {"cache_type": self.name})
        return None

    def _store(self, key: Hashable, value: Any) -> None:
        # caller holds the lock
        self.cache[key] = CacheEntry(value)
        self.cache.move_to_end(key)
        while len(self.cache) > self.max_entries:
            evicted, _ = self.cache.popitem(last=False)
            self.logger.debug("cache_evicted", cache=self.name, key=str(evicted))

    def set(self, key: Hashable, value: Any) -> None:
        """Store a value, evicting the oldest entry when full"""
        with self._lock:
            self._store(key, value)
        self.logger.debug("cache_set", cache=self.name, key=str(key))

    def get_or_compute(self, key: Hashable, factory: Callable[[], Any]) -> Any:
        """Return the cached value or compute, store and return it.

        The first writer wins: a value computed concurrently for the same key is discarded
        in favor of the one already stored, so every reader sees the same object.
        """
        value = self.get(key)
        if value is not None:
            return value

        computed = factory()
        with self._lock:
            entry = self.cache.get(key)
            if entry is not None:
                return entry.data
            self._store(key, computed)
        return computed

    def clear(self) -> None:
        """Clear all cached entries"""
        with self._lock:
            self.cache.clear()
            self.hit_count = 0
            self.miss_count = 0
        self.logger.info("cache_cleared", cache=self.name)

    def get_stats(self) -> Dict[str, Any]:
        """Get cache statistics"""
        total_requests = self.hit_count + self.miss_count
        hit_rate = (self.hit_count / total_requests) if total_requests > 0 else 0

        return {
            "hit_count": self.hit_count,
            "miss_count": self.miss_count,
            "hit_rate": hit_rate,
            "cache_size": len(self.cache)
        }


gram_cache = MemoryCache(name="gram")
