import logging
import os

from rich.logging import RichHandler

from src.utils.logger import LOGGER_NAME, NO_STAGE, StageFilter, current_stage, log_stage, setup_logger


def _record(message="hello"):
    return logging.LogRecord("brain_attrib.test", logging.INFO, __file__, 1, message, None, None)


class TestLogger:
    """Tests for stage-tagged logging."""

    def teardown_method(self):
        logging.getLogger("brain_attrib.test_logger").handlers.clear()

    def test_stage_defaults_outside_a_block(self):
        record = _record()
        StageFilter().filter(record)
        assert record.stage == NO_STAGE

    def test_log_stage_nests_and_restores(self):
        with log_stage("fit"):
            with log_stage("mask"):
                assert current_stage() == "mask"
            record = _record()
            StageFilter().filter(record)
            assert record.stage == "fit"
        assert current_stage() == NO_STAGE

    def test_file_lines_carry_stage(self, tmp_path):
        path = os.path.join(tmp_path, "nested", "run.log")
        logger = setup_logger("brain_attrib.test_logger", log_file=path, console_output=False)
        with log_stage("attribute"):
            logger.info("scored 12 TRs")
        logger.handlers[0].flush()
        with open(path, encoding="utf-8") as f:
            line = f.read().strip()
        assert line.endswith("INFO - [attribute] scored 12 TRs")
        assert "brain_attrib.test_logger" in line

    def test_console_uses_rich_handler(self):
        logger = setup_logger("brain_attrib.test_logger")
        assert len(logger.handlers) == 1
        assert isinstance(logger.handlers[0], RichHandler)
        assert logger.handlers[0].console.stderr

    def test_setup_replaces_handlers(self, tmp_path):
        name = "brain_attrib.test_logger"
        setup_logger(name, log_file=os.path.join(tmp_path, "a.log"))
        logger = setup_logger(name, console_output=False)
        assert logger.handlers == []
        assert LOGGER_NAME == "brain_attrib"
