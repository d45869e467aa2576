import numpy as np
import pytest

from ingp.bm_sim import SimConfig, simulate_ensemble
from ingp.cache import (CorruptCacheError, EnsembleStore, cache_key, clear_cache, list_cache,
                        read_ensemble, write_ensemble)
from ingp.geometry import EuclideanDomain, ushape
from ingp.gp import build_covariance_grid
from ingp.heat_kernel import WindowPolicy

CFG = SimConfig(300, 12, 0.02, seed=4)


def test_round_trip(tmp_path):
    dom = ushape()
    ens = simulate_ensemble(dom, [2.0, -1.0], CFG)
    write_ensemble(tmp_path / "a.ens", ens, dom.fingerprint())
    back, fp = read_ensemble(tmp_path / "a.ens")
    assert fp == dom.fingerprint()
    assert back.config == CFG and back.rejections == ens.rejections
    np.testing.assert_array_equal(back.positions, ens.positions)
    np.testing.assert_array_equal(back.start, ens.start)


def test_corruption_detected_and_resimulated(tmp_path, caplog):
    dom = ushape()
    store = EnsembleStore(tmp_path)
    ens = store.get(dom, [2.0, -1.0], CFG)
    path = store.path_for(dom, [2.0, -1.0], CFG)
    raw = bytearray(path.read_bytes())
    raw[100] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(CorruptCacheError):
        read_ensemble(path)
    again = store.get(dom, [2.0, -1.0], CFG)
    assert store.simulated == 2 and "discarding" in caplog.text
    np.testing.assert_array_equal(again.positions, ens.positions)
    read_ensemble(path)  # rewritten


def test_truncated_file(tmp_path):
    p = tmp_path / "x.ens"
    p.write_bytes(b"INGPENS1")
    with pytest.raises(CorruptCacheError):
        read_ensemble(p)


def test_key_depends_on_everything():
    dom = ushape()
    k = cache_key(dom, [2.0, -1.0], CFG)
    assert k != cache_key(dom, [2.0, -1.0 + 1e-9], CFG)
    assert k != cache_key(dom, [2.0, -1.0], SimConfig(300, 12, 0.02, seed=5))
    assert k != cache_key(EuclideanDomain(2, name="other"), [2.0, -1.0], CFG)


def test_cached_matrices_identical(tmp_path):
    dom = ushape()
    pts = np.array([[2.0, -1.0], [2.0, 1.0], [-0.3, 0.0]])
    store = EnsembleStore(tmp_path)
    pol = WindowPolicy(fixed_w=0.2)
    a = build_covariance_grid(store.iter(dom, pts, CFG), pts, pol, dom)
    b = build_covariance_grid(store.iter(dom, pts, CFG), pts, pol, dom)
    assert store.simulated == 3 and store.loaded == 3
    assert a.sigma.tobytes() == b.sigma.tobytes()


def test_list_and_clear(tmp_path):
    dom = ushape()
    store = EnsembleStore(tmp_path)
    store.get(dom, [2.0, 1.0], CFG)
    (tmp_path / "junk.ens").write_bytes(b"nope")
    entries = list_cache(tmp_path)
    assert len(entries) == 2
    assert any("INVALID" in e[2] for e in entries)
    assert any("N=300" in e[2] for e in entries)
    assert clear_cache(tmp_path) == 2
    assert list_cache(tmp_path) == []


def test_no_cache_dir_simulates_every_time():
    store = EnsembleStore(None)
    store.get(ushape(), [2.0, 1.0], CFG)
    store.get(ushape(), [2.0, 1.0], CFG)
    assert store.simulated == 2 and store.path_for(ushape(), [2.0, 1.0], CFG) is None
