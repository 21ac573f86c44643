import logging
import os

from tandist.commands import main


def _log_level() -> int:
    if os.environ.get("TANDIST_DEBUG"):
        return logging.DEBUG
    level_name = os.environ.get("TANDIST_LOG_LEVEL", "WARNING").upper()
    return logging._nameToLevel.get(level_name, logging.WARNING)


def run() -> None:
    logging.basicConfig(format="%(asctime)s - %(levelname)s - %(name)s - %(message)s", level=_log_level())
    # numerical warnings (boundary projections, vacuous bounds) end up in the same log stream
    logging.captureWarnings(True)
    main(prog="tandist")


if __name__ == "__main__":
    run()
