import pytest

from oodtown import errors


def test_hierarchy_roots():
    assert issubclass(errors.ConfigError, errors.OodtownError)
    assert issubclass(errors.ConfigError, ValueError)
    assert issubclass(errors.ArgumentError, ValueError)
    assert issubclass(errors.UsageError, RuntimeError)
    assert issubclass(errors.NumericError, ArithmeticError)
    assert issubclass(errors.TrainingError, errors.OodtownError)
    assert issubclass(errors.OverloadError, errors.PipelineError)
    assert issubclass(errors.ProjectionError, ValueError)


def test_training_error_carries_epoch():
    err = errors.TrainingError("diverged", epoch=7)
    assert err.epoch == 7
    assert "diverged" in str(err)


def test_pipeline_error_carries_task():
    err = errors.PipelineError("boom", task="ood_detect")
    assert err.task == "ood_detect"


def test_catch_all_base():
    with pytest.raises(errors.OodtownError):
        raise errors.ArgumentError("bad")
