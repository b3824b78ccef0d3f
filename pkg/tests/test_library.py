import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from helpers import gradcheck
from weather_experts.library import (
    Adapter,
    CapacityError,
    ExpertLibrary,
    ExpertRecord,
    ema_update,
    expert_score,
    fuse,
    fuse_outputs,
    fusion_weights,
)
from weather_experts.tensor import Tensor, mul, tsum


def _rec(p=0.0, c=0, eid=0):
    return ExpertRecord(eid, Adapter(4, 2, seed=eid), performance=p, usage_count=c)


def test_score_examples():
    assert expert_score(_rec(0.5, 0)) == pytest.approx(5.0e5, rel=1e-12)
    assert expert_score(_rec(1.0, 4)) == pytest.approx(0.2499999375, rel=1e-12)
    assert expert_score(_rec(0.0, 7)) == 0.0


def test_topk_example():
    lib = ExpertLibrary(4, 2)
    for p in (3.0, 1.0, 2.0):
        lib.allocate().performance = p
    assert lib.select_topk(2) == [0, 2]
    assert sorted(lib.select_topk(3)) == [0, 1, 2]
    with pytest.raises(ValueError):
        lib.select_topk(4)


def test_topk_ties_go_to_lower_id():
    lib = ExpertLibrary(4, 2)
    for _ in range(4):
        lib.allocate().performance = 1.0
    assert lib.select_topk(2) == [0, 1]


def test_ema_example():
    rec = ema_update(_rec(0.5, 0), 1.0)
    assert rec.performance == pytest.approx(0.45 + 0.1 / 1.000001, abs=1e-15)
    assert rec.usage_count == 1


def test_ema_large_loss_pulls_toward_zero():
    rec = _rec(5.0)
    for _ in range(50):
        ema_update(rec, 1e9)
    assert rec.performance < 0.03


@pytest.mark.parametrize("loss", [0.0, -1.0, float("nan")])
def test_ema_rejects_bad_losses(loss):
    with pytest.raises(ValueError):
        ema_update(_rec(), loss)


def test_ema_frozen_guard():
    rec = _rec()
    rec.frozen = True
    with pytest.raises(RuntimeError):
        ema_update(rec, 1.0, allow_frozen=False)
    ema_update(rec, 1.0)


def test_fusion_weight_example():
    w = fusion_weights([0.1, 0.2])
    assert w[0] == pytest.approx(1 / (1 + math.exp(-1)), abs=1e-15)


def test_fusion_extremes_against_exact_arithmetic():
    w = fusion_weights([0.0, 100.0])
    # exp(-1000) relative to 1, evaluated with Python's big floats via Fraction
    tail = math.exp(-1000)
    assert w[1] == tail / (1 + tail) and w[0] == 1.0
    w = fusion_weights([1e6, 1e6 + 0.1])
    assert w.sum() == pytest.approx(1.0, abs=1e-15)
    assert w[0] == pytest.approx(float(Fraction(1) / (1 + Fraction(math.exp(-1)))), abs=1e-15)


@given(st.integers(1, 12))
def test_equal_losses_uniform(k):
    np.testing.assert_allclose(fusion_weights([0.3] * k), 1.0 / k, rtol=1e-14)


def test_fusion_empty_is_an_error():
    with pytest.raises(ValueError):
        fusion_weights([])


def test_fresh_adapter_is_identity(rng):
    x = Tensor(rng.normal(size=(2, 8, 4, 4)))
    assert np.array_equal(Adapter(8, 4, seed=1)(x).data, x.data)


def test_fuse_single_and_identical(rng):
    x = Tensor(rng.normal(size=(1, 8, 3, 3)))
    rec = _rec(eid=0)
    rec.adapter = Adapter(8, 4, seed=0)
    rec.adapter.params["up_w"].data = rng.normal(size=(8, 2, 1, 1))
    single = rec.adapter(x).data
    assert np.array_equal(fuse([(rec, 1.0)], x).data, single)
    np.testing.assert_allclose(fuse([(rec, 0.3), (rec, 0.7)], x).data, single, rtol=1e-14, atol=1e-14)


def test_fuse_validates_weights_and_shapes(rng):
    a, b = Tensor(np.zeros((1, 4, 2, 2))), Tensor(np.zeros((1, 4, 3, 3)))
    with pytest.raises(ValueError):
        fuse_outputs([a, a], [0.5, 0.6])
    with pytest.raises(ValueError):
        fuse_outputs([a, b], [0.5, 0.5])


def test_adapter_gradient(rng):
    ad = Adapter(4, 2, seed=3)
    x = rng.normal(size=(1, 4, 3, 3))
    r = rng.normal(size=x.shape)
    names = ad.param_names
    arrays = [x] + [ad.params[n].data.copy() for n in names]
    arrays[3] = rng.normal(size=arrays[3].shape)  # nonzero up projection

    def build(inp, *ps):
        ad.params = dict(zip(names, ps))
        return tsum(mul(ad(inp), Tensor(r)))

    assert gradcheck(build, arrays) < 1e-6


def test_first_task_gets_one_fresh_expert():
    lib = ExpertLibrary(4, 2)
    active = lib.handle_task(True, 0)
    assert active.transfer_ids == [] and active.new_ids == [0]
    assert not lib.get(0).frozen


def test_new_task_with_five_experts():
    lib = ExpertLibrary(4, 2, k_transfer=3)
    for i in range(5):
        rec = lib.allocate()
        rec.performance = float(i)
        rec.frozen = True
    active = lib.handle_task(True, 7)
    assert active.transfer_ids == [4, 3, 2] and active.new_ids == [5]
    assert [lib.get(i).frozen for i in active.expert_ids] == [True, True, True, False]
    assert np.all(lib.get(5).adapter.params["up_w"].data == 0)


def test_old_task_reuses_owned_experts():
    lib = ExpertLibrary(4, 2)
    lib.handle_task(True, 0)
    lib.freeze_task_experts(0)
    lib.handle_task(True, 1)
    lib.freeze_task_experts(1)
    before = {r.id: r.usage_count for r in lib.experts}
    n = len(lib)
    active = lib.handle_task(False, 0)
    assert active.expert_ids == lib.owned_by(0) == [0]
    assert len(lib) == n
    assert all(lib.get(i).frozen for i in active.expert_ids)
    assert lib.get(0).usage_count == before[0] + 1 and lib.get(1).usage_count == before[1]


def test_capacity_exhaustion():
    lib = ExpertLibrary(4, 2, capacity=2)
    lib.handle_task(True, 0)
    lib.handle_task(True, 1)
    with pytest.raises(CapacityError, match="capacity exhausted"):
        lib.handle_task(True, 2)


def test_freeze_records_digest_and_detects_tampering():
    lib = ExpertLibrary(4, 2)
    lib.handle_task(True, 0)
    lib.freeze_task_experts(0)
    rec = lib.get(0)
    assert rec.frozen and rec.frozen_digest == rec.param_digest()
    assert not any(p.requires_grad for p in rec.adapter.parameters())
    assert lib.verify_frozen() == []
    rec.adapter.params["down_b"].data = rec.adapter.params["down_b"].data + 1e-12
    assert lib.verify_frozen() == [0]


@pytest.mark.parametrize("policy, transfer_frozen, new_frozen", [
    ("blending", True, False), ("all_trainable", False, False), ("all_frozen", True, True),
])
def test_freeze_policies(policy, transfer_frozen, new_frozen):
    lib = ExpertLibrary(4, 2, freeze_policy=policy)
    lib.handle_task(True, 0)
    lib.freeze_task_experts(0)
    active = lib.handle_task(True, 1)
    assert lib.get(active.transfer_ids[0]).frozen is transfer_frozen
    assert lib.get(active.new_ids[0]).frozen is new_frozen


def test_metadata_roundtrip(rng):
    lib = ExpertLibrary(4, 2)
    lib.handle_task(True, 0)
    ema_update(lib.get(0), 0.25)
    lib.freeze_task_experts(0)
    arrays = {r.id: r.adapter.state_arrays() for r in lib.experts}
    again = ExpertLibrary.from_metadata(lib.metadata(), arrays)
    assert again.metadata() == lib.metadata()
    assert again.verify_frozen() == []
