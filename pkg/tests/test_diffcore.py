# tests/test_diffcore.py
import numpy as np
import pytest

from src.diffcore import tensor as T
from src.diffcore.checkpoint import decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint
from src.diffcore.gradcheck import grad_check
from src.diffcore.optim import POSTTRAIN_LR, SFT_LR, AdamConfig, AdamState, adam_step
from src.diffcore.params import ParamSet
from src.utils.errors import FormatError, InvalidArgumentError, NonFiniteError, PreconditionError


def _params(**arrays) -> ParamSet:
    return ParamSet.from_arrays({k: np.asarray(v, dtype=np.float64) for k, v in arrays.items()}, dtype=np.float64)


def test_identity_graph():
    x = np.array([1.0, -2.0, 3.0])
    value, _ = T.forward(lambda tape, pv, v: tape.input(v), None, x)
    assert np.array_equal(value, x)


def test_affine_graph_with_zero_weights_returns_bias():
    ps = _params(w=np.zeros((3, 2)), b=[0.5, -1.0])
    value, _ = T.forward(lambda tape, pv, x: T.matmul(x, pv["w"]) + pv["b"], ps, np.ones((4, 3)))
    assert np.array_equal(value, np.tile([0.5, -1.0], (4, 1)))


def test_forward_is_repeatable():
    ps = _params(w=np.random.default_rng(0).standard_normal((3, 3)))
    graph = lambda tape, pv, x: T.tanh(T.matmul(x, pv["w"]))  # noqa: E731
    x = np.ones((2, 3))
    assert np.array_equal(T.forward(graph, ps, x)[0], T.forward(graph, ps, x)[0])


def test_forward_checks_signature():
    with pytest.raises(InvalidArgumentError):
        T.forward(lambda tape, pv, x: tape.input(x), None, np.ones(3), signature=[(4,)])


def test_sum_gradient_is_ones():
    tape = T.Tape()
    x = tape.input(np.arange(5.0), requires_grad=True)
    grads = tape.backward(T.sum_(x))
    assert np.array_equal(grads[x], np.ones(5))


def test_half_squared_norm_gradient():
    w = np.array([[1.0, 2.0], [-1.0, 0.5]])
    x = np.array([[0.3], [-0.7]])
    ps = _params(w=w)
    _, tape = T.forward(lambda tape, pv: 0.5 * T.sum_(T.square(T.matmul(pv["w"], x))), ps)
    tape.backward()
    assert np.allclose(ps.grads["w"], (w @ x) @ x.T, atol=1e-12)


def test_zero_output_grad_adds_nothing():
    ps = _params(w=[1.0, 2.0])
    _, tape = T.forward(lambda tape, pv: pv["w"] * 3.0, ps)
    tape.backward(None, np.zeros(2))
    assert not np.any(ps.grads["w"])


def test_backward_accumulates():
    ps = _params(w=[1.0])
    _, tape = T.forward(lambda tape, pv: T.sum_(pv["w"] * 2.0), ps)
    tape.backward()
    tape.backward()
    assert ps.grads["w"][0] == 4.0


def test_broadcast_gradients_are_unbroadcast():
    ps = _params(b=[1.0, 1.0, 1.0])
    _, tape = T.forward(lambda tape, pv: T.sum_(pv["b"] + np.ones((4, 3))), ps)
    tape.backward()
    assert np.array_equal(ps.grads["b"], np.full(3, 4.0))


def test_stale_tape_is_refused():
    ps = _params(w=[1.0])
    _, tape = T.forward(lambda tape, pv: T.sum_(pv["w"]), ps)
    ps.assign("w", np.array([2.0]))
    with pytest.raises(PreconditionError):
        tape.backward()


def test_inference_tape_refuses_backward():
    _, tape = T.forward(lambda tape, pv: tape.input(np.ones(2)), None, record=False)
    with pytest.raises(PreconditionError):
        tape.backward()


def test_minimum_and_clip_gradients():
    tape = T.Tape()
    a = tape.input(np.array([0.5, 2.0]), requires_grad=True)
    grads = tape.backward(T.sum_(T.minimum(a, 1.0) + T.clip(a, 0.0, 1.0)))
    assert np.array_equal(grads[a], [2.0, 0.0])


def test_grad_check_quadratic():
    ps = _params(w=np.random.default_rng(2).standard_normal(6))
    err = grad_check(lambda tape, pv: T.sum_(T.square(pv["w"] - 0.3)), ps)
    assert err < 1e-7


def test_grad_check_constant_loss_is_zero():
    ps = _params(w=np.ones(3))
    assert grad_check(lambda tape, pv: T.sum_(pv["w"] * 0.0) + 1.0, ps) == 0.0


def test_grad_check_catches_a_detached_parameter():
    ps = _params(a=[2.0], b=[3.0])
    # b enters the loss as a plain constant, so its tape gradient is 0 while the true one is 6
    err = grad_check(lambda tape, pv: T.sum_(T.square(pv["a"])) + float(np.sum(pv["b"].value ** 2)), ps)
    assert err > 0.5


def test_grad_check_tiny_but_correct_gradients_pass():
    ps = _params(a=[2.0], b=[3.0])
    err = grad_check(lambda tape, pv: T.sum_(T.square(pv["a"])) + 1e-6 * T.sum_(T.square(pv["b"])), ps)
    assert err < 1e-6


def test_grad_check_leaves_params_untouched():
    ps = _params(w=np.arange(4.0))
    before = ps.state()
    grad_check(lambda tape, pv: T.sum_(T.tanh(pv["w"])), ps)
    assert all(np.array_equal(before[k], v) for k, v in ps.values.items())
    assert not np.any(ps.grads["w"])


@pytest.mark.parametrize("eps", [1e-7, 1e-2])
def test_grad_check_epsilon_range(eps):
    with pytest.raises(InvalidArgumentError):
        grad_check(lambda tape, pv: T.sum_(pv["w"]), _params(w=[1.0]), eps)


def test_adam_zero_grads_leave_params():
    ps = _params(w=[1.0, 2.0])
    state = AdamState.for_params(ps, AdamConfig(lr=0.1))
    adam_step(ps, state)
    assert np.array_equal(ps.values["w"], [1.0, 2.0])
    assert state.step == 1


def test_adam_first_step_moves_by_lr():
    ps = _params(w=[0.0])
    state = AdamState.for_params(ps, AdamConfig(lr=0.1))
    ps.accumulate("w", np.array([1.0]))
    adam_step(ps, state)
    assert ps.values["w"][0] == pytest.approx(-0.1, rel=1e-6)
    assert not np.any(ps.grads["w"])


def test_adam_refuses_non_finite_grads():
    ps = _params(w=[0.0])
    ps.accumulate("w", np.array([np.nan]))
    with pytest.raises(NonFiniteError):
        adam_step(ps, AdamState.for_params(ps, AdamConfig()))
    assert ps.values["w"][0] == 0.0


def test_learning_rate_defaults():
    assert AdamConfig().lr == SFT_LR == 1e-4
    assert POSTTRAIN_LR == 1e-6


def test_checkpoint_file_keeps_params(tmp_path):
    ps = ParamSet.from_arrays({"a": np.arange(6.0).reshape(2, 3), "b": np.ones(2)})
    path = save_checkpoint(tmp_path / "x.dynp", ps, "vpm", {"note": "hi"})
    ckpt = load_checkpoint(path, "vpm")
    assert ckpt.meta == {"note": "hi"}
    assert np.array_equal(ckpt.params.values["a"], ps.values["a"])


def test_checkpoint_component_mismatch(tmp_path):
    path = save_checkpoint(tmp_path / "x.dynp", ParamSet.from_arrays({"a": np.ones(1)}), "agm")
    with pytest.raises(FormatError):
        load_checkpoint(path, "vpm")


def test_checkpoint_bad_magic():
    data = b"XXXX" + encode_checkpoint(ParamSet.from_arrays({"a": np.ones(1)}), "vpm")[4:]
    with pytest.raises(FormatError):
        decode_checkpoint(data)


def test_missing_checkpoint(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "nope.dynp")
