import logging

import coloredlogs


def get_logger(child_name: str = None) -> logging.Logger:
    logger = logging.getLogger("amsbq")

    if child_name:
        logger = logger.getChild(child_name)

    return logger


def set_up_logging(level: str | int = logging.INFO):
    if isinstance(level, str):
        level_name = level.upper()
        level = logging.getLevelName(level_name)

        # getLevelName returns a string for unknown names
        if not isinstance(level, int):
            raise ValueError(f"unknown log level {level_name}")

    fmt = "%(name)s [%(levelname)s] %(message)s"

    # black levels on a dark terminal background are unreadable
    styles = dict(coloredlogs.DEFAULT_FIELD_STYLES)
    styles["levelname"] = {
        "color": "yellow",
    }

    coloredlogs.install(level, fmt=fmt, field_styles=styles)

    get_logger().setLevel(level)
