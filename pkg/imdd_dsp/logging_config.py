from __future__ import annotations

import logging
import os
from pathlib import Path


def setup_logging(level: str | None = None, *, log_file: Path | None = None) -> None:
    log_level = (level or os.environ.get("LOG_LEVEL") or "INFO").upper()
    root = logging.getLogger()
    if root.handlers:
        root.setLevel(log_level)
    else:
        logging.basicConfig(
            level=log_level,
            format="%(asctime)s %(levelname)s %(name)s %(message)s",
        )
    if log_file is not None:
        # One file handler per run directory; repeated calls reuse it.
        target = str(log_file.resolve())
        if not any(getattr(h, "baseFilename", None) == target for h in root.handlers):
            log_file.parent.mkdir(parents=True, exist_ok=True)
            handler = logging.FileHandler(target, encoding="utf-8")
            handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s %(message)s"))
            root.addHandler(handler)
