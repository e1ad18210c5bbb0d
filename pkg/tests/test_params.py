import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from simkgcl.params import (
    MAGIC,
    TABLES,
    AdamState,
    CheckpointError,
    Gradients,
    ModelParams,
    NonFiniteGradientError,
    adam_step,
    checkpoint_size,
    init_params,
    load_checkpoint,
    save_checkpoint,
    xavier_bound,
)


def small_params(dtype=np.float64, seed=0):
    return init_params(3, 4, 5, 2, dim=6, seed=seed, dtype=dtype)


class TestInit:
    def test_bound(self):
        assert xavier_bound(64) == pytest.approx(0.21650635, abs=1e-8)
        p = init_params(50, 60, 70, 8, dim=64, seed=1)
        for t in p.tables().values():
            assert np.abs(t).max() <= xavier_bound(64)
            assert t.dtype == np.float32

    def test_deterministic(self):
        a = init_params(5, 6, 7, 2, dim=8, seed=3)
        b = init_params(5, 6, 7, 2, dim=8, seed=3)
        c = init_params(5, 6, 7, 2, dim=8, seed=4)
        assert a.equals(b) and not a.equals(c)

    def test_shapes(self):
        p = init_params(5, 6, 7, 2, dim=8)
        assert [t.shape for t in p.tables().values()] == [(5, 8), (6, 8), (7, 8), (2, 8)]

    def test_bad_dim(self):
        with pytest.raises(ValueError):
            init_params(1, 1, 1, 1, dim=0)


def reference_adam(x, g, m, v, t, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
    m = b1 * m + (1 - b1) * g
    v = b2 * v + (1 - b2) * g * g
    mh = m / (1 - b1 ** t)
    vh = v / (1 - b2 ** t)
    return x - lr * mh / (np.sqrt(vh) + eps), m, v


class TestAdam:
    def test_two_parameter_toy(self):
        # minimize (a - 3)^2 + (b + 1)^2 with textbook Adam and compare every step
        p = ModelParams(np.array([[0.0]]), np.array([[0.0]]), np.zeros((1, 1)), np.zeros((1, 1)))
        state = AdamState.zeros_like(p, lr=0.1)
        x = np.array([0.0, 0.0])
        m = np.zeros(2)
        v = np.zeros(2)
        for t in range(1, 201):
            g = np.array([2 * (p.ig_user[0, 0] - 3), 2 * (p.ig_item[0, 0] + 1)])
            grads = Gradients({"ig_user": (np.array([0]), g[:1, None]), "ig_item": (np.array([0]), g[1:, None])})
            adam_step(p, grads, state)
            x, m, v = reference_adam(x, g, m, v, t, lr=0.1)
            assert p.ig_user[0, 0] == x[0] and p.ig_item[0, 0] == x[1]
        assert abs(x[0] - 3) < 1e-2 and abs(x[1] + 1) < 1e-2

    def test_untouched_rows_unchanged(self):
        p = small_params()
        before = p.copy()
        state = AdamState.zeros_like(p)
        adam_step(p, Gradients({"ig_item": (np.array([2]), np.ones((1, 6)))}), state)
        assert np.array_equal(p.ig_user, before.ig_user)
        assert np.array_equal(np.delete(p.ig_item, 2, 0), np.delete(before.ig_item, 2, 0))
        assert not np.array_equal(p.ig_item[2], before.ig_item[2])
        assert np.all(state.m["ig_item"][[0, 1, 3]] == 0)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_sparse_equals_dense_when_all_rows_touched(self, seed):
        rng = np.random.default_rng(seed)
        p1, p2 = small_params(seed=seed), small_params(seed=seed)
        s1, s2 = AdamState.zeros_like(p1), AdamState.zeros_like(p2)
        for _ in range(3):
            dense = {n: rng.standard_normal(t.shape) for n, t in p1.tables().items()}
            adam_step(p1, Gradients.from_dense(dense), s1)
            rows = {n: (np.arange(g.shape[0]), g) for n, g in dense.items()}
            adam_step(p2, Gradients(rows), s2)
        assert p1.equals(p2)

    def test_non_finite_rejected_before_writing(self):
        p = small_params()
        before = p.copy()
        state = AdamState.zeros_like(p)
        bad = np.ones((1, 6))
        bad[0, 3] = np.nan
        grads = Gradients({"ig_user": (np.array([0]), np.ones((1, 6))), "kg_entity": (np.array([1]), bad)})
        with pytest.raises(NonFiniteGradientError) as err:
            adam_step(p, grads, state)
        assert err.value.table == "kg_entity"
        assert p.equals(before) and state.step == 0

    def test_gradients_dense_roundtrip(self):
        p = small_params()
        dense = {n: np.zeros_like(t) for n, t in p.tables().items()}
        dense["kg_entity"][[1, 4]] = 2.5
        back = Gradients.from_dense(dense).to_dense(p)
        for n in TABLES:
            assert np.array_equal(back[n], dense[n])


class TestCheckpoint:
    @pytest.mark.parametrize("dtype", [np.float32, np.float64])
    def test_roundtrip_bit_exact(self, tmp_path, dtype):
        p = small_params(dtype)
        state = AdamState.zeros_like(p, lr=0.01)
        rng = np.random.default_rng(0)
        for _ in range(4):
            adam_step(p, Gradients.from_dense({n: rng.standard_normal(t.shape).astype(dtype)
                                               for n, t in p.tables().items()}), state)
        path = tmp_path / "ck.bin"
        save_checkpoint(path, p, state, {"seed": 3, "note": "x=y"})
        q, s, manifest = load_checkpoint(path)
        assert q.equals(p) and q.dtype == dtype
        for n in TABLES:
            assert np.array_equal(s.m[n], state.m[n]) and np.array_equal(s.v[n], state.v[n])
        assert (s.step, s.lr, s.beta1, s.beta2, s.eps) == (4, 0.01, 0.9, 0.999, 1e-8)
        assert manifest == {"seed": "3", "note": "x=y"}
        save_checkpoint(tmp_path / "again.bin", q, s, {"seed": 3, "note": "x=y"})
        assert (tmp_path / "again.bin").read_bytes() == path.read_bytes()

    def test_size_formula(self, tmp_path):
        p = small_params(np.float32)
        path = tmp_path / "ck.bin"
        save_checkpoint(path, p, AdamState.zeros_like(p), "a=1\n")
        assert path.stat().st_size == checkpoint_size(6, (3, 4, 5, 2), 4, 4)

    def test_bad_magic(self, tmp_path):
        p = small_params()
        path = tmp_path / "ck.bin"
        save_checkpoint(path, p, AdamState.zeros_like(p))
        data = bytearray(path.read_bytes())
        assert data[:6] == MAGIC
        data[0:6] = b"XXXXXX"
        path.write_bytes(bytes(data))
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(path)

    def test_truncated(self, tmp_path):
        p = small_params()
        path = tmp_path / "ck.bin"
        save_checkpoint(path, p, AdamState.zeros_like(p))
        data = path.read_bytes()
        path.write_bytes(data[:-8])
        with pytest.raises(CheckpointError, match="size"):
            load_checkpoint(path)
        path.write_bytes(data[:10])
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(path)
