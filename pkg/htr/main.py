import logging
import os
import sys
from typing import Optional, Sequence

from dotenv import load_dotenv

from htr.models.pydantic_models import LogLevel

# Load environment variables
load_dotenv()

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
LOG_LEVELS = {
    LogLevel.ERROR: logging.ERROR,
    LogLevel.INFO: logging.INFO,
    LogLevel.DEBUG: logging.DEBUG,
}


def configure_logging(level: Optional[str] = None) -> None:
    """Root logger on stderr at the level named by HTR_LOG (default info)"""
    name = (level or os.getenv("HTR_LOG", LogLevel.INFO.value)).strip().lower()
    try:
        selected = LogLevel(name)
    except ValueError:
        selected = LogLevel.INFO
    logging.basicConfig(stream=sys.stderr, level=LOG_LEVELS[selected], format=LOG_FORMAT, force=True)
    if selected.value != name:
        logging.getLogger(__name__).warning("unknown HTR_LOG value %r, using info", name)


def main(argv: Optional[Sequence[str]] = None) -> None:
    from htr.cli.commands import run

    configure_logging()
    sys.exit(run(sys.argv[1:] if argv is None else argv))


if __name__ == "__main__":
    main()
