import numpy as np
import pytest

from centermask import ops
from centermask.gradcheck import backward_and_check
from centermask.gradsuite import MODEL_TOL, UNIT_TOL, block_cases, unit_cases
from centermask.tensor import Tape, Tensor, branch_log, frozen_constants, parameter, precision


@pytest.fixture
def suite(grad_suite):
    return grad_suite


def test_suite_covers_every_case(suite):
    out, _ = suite
    assert set(out) == set(unit_cases(0)) | set(block_cases(0)) | {"full_model"}


@pytest.mark.parametrize("name", sorted(set(unit_cases(0)) | set(block_cases(0))))
def test_unit_and_block_gradients(suite, name):
    report, tol, _, _ = suite[0][name]
    assert tol == UNIT_TOL
    assert report.straddle_count == 0
    assert report.passed(UNIT_TOL), "\n".join(report.lines())


def test_full_model_gradients(suite):
    report, tol, _, _ = suite[0]["full_model"]
    assert tol == MODEL_TOL
    assert len(report.errors) == 77
    assert all(n > 0 for n in report.checked.values())
    assert report.passed(MODEL_TOL), "\n".join(report.lines())


def test_suite_runtime(suite):
    assert suite[1] < 600


def test_straddle_is_detected_and_held_branch_is_exact():
    # relu(x) with x = 5e-4: the +-1e-3 step crosses the kink
    x = parameter(np.array([5e-4, 0.5]))
    loss = lambda: ops.total(ops.relu(x))  # noqa: E731
    free = backward_and_check(loss, [x], names=["x"])
    assert free.straddles["x"] == 1
    assert free.errors["x"] > 0.1
    held = backward_and_check(loss, [x], names=["x"], hold_branches=True)
    assert held.straddles["x"] == 1
    assert held.errors["x"] < 1e-9


def test_branch_replay_changes_the_forward_value():
    x = Tensor(np.array([-1.0, 2.0]))
    with branch_log() as log:
        ops.relu(x)
    y = Tensor(np.array([3.0, 4.0]))
    with branch_log(log):
        out = ops.relu(y)
    np.testing.assert_array_equal(out.data, [0.0, 4.0])


def test_stop_gradient_blocks_gradient_and_replays():
    with precision(np.float64):
        w = parameter(np.array([[0.3, -0.2]]))
        with Tape() as tape:
            y = ops.total(ops.fully_connected(Tensor(np.ones((1, 2))), w.detach()))
            loss = ops.add(y, ops.total(w))
        tape.backward(loss)
        np.testing.assert_array_equal(w.grad, [[1.0, 1.0]])
        with frozen_constants() as stopped:
            w.detach()
        w.data = np.array([[9.0, 9.0]])
        with frozen_constants(stopped):
            np.testing.assert_array_equal(w.detach().data, [[0.3, -0.2]])


def test_checker_sees_same_function_as_tape_through_stop_gradient():
    # loss = sum(w * stop(w)); tape gradient is stop(w) = w, not 2w
    with precision(np.float64):
        w = parameter(np.array([[0.7, -1.3, 0.4]]))
        loss = lambda: ops.total(ops.fully_connected(w, w.detach()))  # noqa: E731
        report = backward_and_check(loss, [w], names=["w"])
    assert report.errors["w"] < 1e-6
    np.testing.assert_allclose(w.grad, [[0.7, -1.3, 0.4]])
