import pytest

from shearflow import fem
from shearflow.factor_cache import FactorCache, generate_factor_key, get_factor_cache


def test_key_is_stable_and_distinct():
    assert generate_factor_key("abc", "stokes", 1.0) == generate_factor_key("abc", "stokes", 1.0)
    assert generate_factor_key("abc", "stokes", 1.0) != generate_factor_key("abc", "stokes", 2.0)
    assert generate_factor_key("abc", "stokes") != generate_factor_key("abd", "stokes")


def test_hits_misses_and_eviction():
    cache = FactorCache(max_entries=2)
    builds = []

    def build(name):
        builds.append(name)
        return name

    assert cache.get_or_create("a", lambda: build("a")) == "a"
    assert cache.get_or_create("a", lambda: build("a")) == "a"
    cache.get_or_create("b", lambda: build("b"))
    cache.get_or_create("c", lambda: build("c"))
    assert builds == ["a", "b", "c"]
    assert len(cache) == 2
    assert cache.get("a") is None

    stats = cache.get_stats()
    assert stats["hits"] == 1
    assert stats["evictions"] == 1
    assert stats["cache_size"] == 2
    assert stats["hit_rate"] == pytest.approx(100 * stats["hits"] / stats["total_lookups"])

    cache.clear()
    assert len(cache) == 0


def test_saddle_solver_reuses_factorization(dofmap4):
    cache = get_factor_cache()
    op = fem.assemble_stokes(dofmap4, 1.0)
    fem.SaddleSolver(dofmap4, op, cache=True)
    fem.SaddleSolver(dofmap4, fem.assemble_stokes(dofmap4, 1.0), cache=True)
    assert cache.get_stats()["cache_size"] == 1
    fem.SaddleSolver(dofmap4, fem.assemble_stokes(dofmap4, 2.0), cache=True)
    assert len(cache) == 2
