# tests/test_utils.py
import logging

import numpy as np
import pytest

from src.utils.errors import DegenerateDensityError, DynoError, InvalidArgumentError
from src.utils.helpers import atomic_write_text, content_hash, file_sha256, rng_stream, stream_int
from src.utils.logger import PACKAGE, get_logger, set_package_log_level, setup_logger


# ------------------------ seed streams ------------------------

def test_streams_are_repeatable_and_independent():
    a = rng_stream(7, "rollout", 0, 3).standard_normal(4)
    assert np.array_equal(a, rng_stream(7, "rollout", 0, 3).standard_normal(4))
    assert not np.array_equal(a, rng_stream(7, "rollout", 0, 4).standard_normal(4))
    assert not np.array_equal(a, rng_stream(7, "eval", 0, 3).standard_normal(4))
    assert not np.array_equal(a, rng_stream(8, "rollout", 0, 3).standard_normal(4))


def test_stream_does_not_depend_on_other_draws():
    first = rng_stream(0, "agm", 1).standard_normal(3)
    rng_stream(0, "sft", 1).standard_normal(1000)
    assert np.array_equal(first, rng_stream(0, "agm", 1).standard_normal(3))


def test_negative_stream_index_is_rejected():
    with pytest.raises(InvalidArgumentError):
        rng_stream(0, "data", -1)
    assert 0 <= stream_int(3, "data") < 2 ** 32


# ------------------------ hashing and files ------------------------

def test_content_hash_ignores_key_order():
    assert content_hash({"a": 1, "b": [1, 2]}) == content_hash({"b": [1, 2], "a": 1})
    assert content_hash({"a": 1}) != content_hash({"a": 2})


def test_atomic_write_leaves_no_temp_file(tmp_path):
    target = atomic_write_text(tmp_path / "nested" / "report.json", "{}")
    assert target.read_text() == "{}"
    assert [p.name for p in target.parent.iterdir()] == ["report.json"]
    assert len(file_sha256(target)) == 64


# ------------------------ errors ------------------------

def test_error_hierarchy_keeps_builtin_bases():
    assert issubclass(DegenerateDensityError, InvalidArgumentError)
    assert issubclass(InvalidArgumentError, ValueError)
    assert issubclass(InvalidArgumentError, DynoError)


# ------------------------ logging ------------------------

def test_module_loggers_share_package_handlers():
    log = get_logger("src.rl.some_module")
    assert log.handlers == []
    assert log.propagate
    assert logging.getLogger(PACKAGE).handlers


def test_debug_switch_reaches_module_loggers():
    log = get_logger("src.metrics.some_module")
    try:
        set_package_log_level(logging.DEBUG)
        assert log.isEnabledFor(logging.DEBUG)
    finally:
        set_package_log_level(logging.INFO)
    assert not log.isEnabledFor(logging.DEBUG)


def test_file_handlers_split_errors(tmp_path, monkeypatch):
    monkeypatch.setenv("DYNO_LOG_TO_FILE", "1")
    monkeypatch.setenv("DYNO_LOG_DIR", str(tmp_path))
    log = setup_logger("dyno-file-test", log_to_console=False)
    try:
        log.info("SFT step 10: train 0.10000 eval 0.20000")
        log.error("Adam step 3 aborted")
        for handler in log.handlers:
            handler.flush()
        main_log = next(tmp_path.glob("dyno_*.log")).read_text()
        errors = (tmp_path / "errors.log").read_text()
        assert "SFT step 10" in main_log and "Adam step 3" in main_log
        assert "SFT step 10" not in errors and "Adam step 3" in errors
    finally:
        for handler in list(log.handlers):
            handler.close()
            log.removeHandler(handler)
