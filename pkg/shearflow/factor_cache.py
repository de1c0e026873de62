"""
Sparse factorization cache
shearflow/factor_cache.py

Features:
- Composite keys (mesh fingerprint, operator tag, coefficient)
- Hit/miss statistics
- Bounded size, oldest entries evicted first
"""

import hashlib
import time
from typing import Any, Callable, Dict, Optional

from shearflow.config import config
from shearflow.logger import get_logger

logger = get_logger(__name__)


# ============================================================================
# CACHE KEY GENERATION
# ============================================================================

def generate_factor_key(fingerprint: str, tag: str, coefficient: Any = "") -> str:
    """
    Generate a unique cache key for an operator.

    Args:
        fingerprint: Mesh fingerprint
        tag: Operator family, e.g. "stokes"
        coefficient: Scalar (or repr-able) the operator depends on

    Returns:
        MD5 hash as cache key
    """
    if isinstance(coefficient, float):
        coefficient = repr(coefficient)
    composite = f"{fingerprint}|{tag}|{coefficient}"
    return hashlib.md5(composite.encode("utf-8")).hexdigest()


# ============================================================================
# CACHE STORAGE
# ============================================================================

class FactorCache:
    """
    In-memory store of sparse LU factorizations.
    """

    _STATS_DEFAULTS = {
        "hits": 0,
        "misses": 0,
        "evictions": 0,
    }

    def __init__(self, max_entries: Optional[int] = None):
        self.max_entries = max_entries or config.solver.FACTOR_CACHE_SIZE
        self._entries: Dict[str, Dict[str, Any]] = {}
        self._stats = dict(self._STATS_DEFAULTS)

    def get(self, key: str) -> Optional[Any]:
        entry = self._entries.get(key)
        if entry is None:
            self._stats["misses"] += 1
            logger.debug(f"Factor cache miss: {key[:8]}")
            return None
        self._stats["hits"] += 1
        logger.debug(f"Factor cache hit: {key[:8]} ({entry['tag']})")
        return entry["factor"]

    def set(self, key: str, factor: Any, tag: str = "") -> None:
        self._entries[key] = {"factor": factor, "timestamp": time.monotonic(), "tag": tag}
        self._cleanup_if_needed()

    def get_or_create(self, key: str, build: Callable[[], Any], tag: str = "") -> Any:
        """Return the cached factor or build, store and return it"""
        factor = self.get(key)
        if factor is None:
            factor = build()
            self.set(key, factor, tag)
        return factor

    def _cleanup_if_needed(self):
        excess = len(self._entries) - self.max_entries
        if excess <= 0:
            return
        oldest = sorted(self._entries, key=lambda k: self._entries[k]["timestamp"])[:excess]
        for key in oldest:
            del self._entries[key]
        self._stats["evictions"] += excess
        logger.debug(f"Factor cache cleanup: evicted {excess}, kept {len(self._entries)}")

    def clear(self):
        self._entries.clear()
        logger.info("Factor cache cleared")

    def get_stats(self) -> Dict[str, Any]:
        stats = dict(self._stats)
        total = stats["hits"] + stats["misses"]
        stats["total_lookups"] = total
        stats["hit_rate"] = stats["hits"] / total * 100 if total > 0 else 0
        stats["cache_size"] = len(self._entries)
        return stats

    def __len__(self) -> int:
        return len(self._entries)


# ============================================================================
# GLOBAL INSTANCE
# ============================================================================

_factor_cache: Optional[FactorCache] = None


def get_factor_cache() -> FactorCache:
    """Get or create the global factorization cache"""
    global _factor_cache
    if _factor_cache is None:
        _factor_cache = FactorCache()
    return _factor_cache
