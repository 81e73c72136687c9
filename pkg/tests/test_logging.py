"""Tests for operation logging."""

import logging
from pathlib import Path
from unittest.mock import Mock

import pytest

from cluster_sync.logging import (
    LOG_LEVEL_ENV,
    LOGGER_NAME,
    OperationLogger,
    get_logger,
    log_operation_summary,
    resolve_log_level,
)


class TestOperationLogger:
    """Test logger configuration."""

    def test_console_only_by_default(self):
        """Test that one console handler is installed."""
        op_logger = OperationLogger()
        handlers = op_logger.logger.handlers
        assert len(handlers) == 1
        assert op_logger.logger.name == LOGGER_NAME

    def test_handlers_are_not_duplicated(self):
        """Test that re-creating the logger replaces handlers."""
        OperationLogger()
        op_logger = OperationLogger()
        assert len(op_logger.logger.handlers) == 1

    def test_file_handler_writes(self, tmp_path: Path):
        """Test that records reach the log file."""
        log_file = tmp_path / "logs" / "run.log"
        op_logger = OperationLogger(log_file, "DEBUG")
        op_logger.log_operation_start("analyze", {"scenario": "benchmark.yaml"})
        op_logger.log_operation_end("analyze", True, {"verdict": "certified"})
        for handler in op_logger.logger.handlers:
            handler.flush()
        text = log_file.read_text(encoding="utf-8")
        assert "Starting analyze" in text
        assert "Completed analyze - SUCCESS" in text
        assert "benchmark.yaml" in text

    def test_level_is_applied(self):
        """Test the requested level."""
        assert OperationLogger(log_level="warning").log_level == logging.WARNING

    def test_log_error_with_context(self, caplog):
        """Test error logging with context."""
        op_logger = OperationLogger()
        op_logger.logger.propagate = True
        with caplog.at_level(logging.ERROR, logger=LOGGER_NAME):
            op_logger.log_error(ValueError("bad"), "simulating fig4")
        assert "Error: bad" in caplog.text
        assert "Context: simulating fig4" in caplog.text


class TestResolveLogLevel:
    """Test level resolution."""

    def test_explicit_level_wins(self, monkeypatch):
        """Test that an explicit level overrides the environment."""
        monkeypatch.setenv(LOG_LEVEL_ENV, "ERROR")
        assert resolve_log_level("debug") == "DEBUG"

    def test_environment_variable(self, monkeypatch):
        """Test the environment fallback."""
        monkeypatch.setenv(LOG_LEVEL_ENV, "warning")
        assert resolve_log_level() == "WARNING"

    def test_default_and_unknown(self, monkeypatch):
        """Test INFO as the default and for unknown names."""
        monkeypatch.delenv(LOG_LEVEL_ENV, raising=False)
        assert resolve_log_level() == "INFO"
        assert resolve_log_level("chatty") == "INFO"

    def test_get_logger_uses_environment(self, monkeypatch):
        """Test that get_logger consults the environment."""
        monkeypatch.setenv(LOG_LEVEL_ENV, "DEBUG")
        assert get_logger().log_level == logging.DEBUG


class TestLogOperationSummary:
    """Test sweep summaries."""

    def test_summary_lines(self):
        """Test the counters and the error cap."""
        logger = Mock(spec=OperationLogger)
        logger.logger = Mock()
        errors = [f"failed: run {k}" for k in range(7)]
        log_operation_summary(
            logger, "sweep", {"total": 9, "successful": 2, "failed": 7, "errors": errors}
        )
        infos = [c.args[0] for c in logger.log_info.call_args_list]
        assert "Total runs: 9" in infos
        assert "Failed: 7" in infos
        assert logger.logger.error.call_count == 5
        warnings = [c.args[0] for c in logger.log_warning.call_args_list]
        assert "... and 2 more errors" in warnings


@pytest.fixture(autouse=True)
def _reset_logger():
    yield
    logger = logging.getLogger(LOGGER_NAME)
    for handler in logger.handlers[:]:
        logger.removeHandler(handler)
        handler.close()
