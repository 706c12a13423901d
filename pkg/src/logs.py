from __future__ import annotations

import logging
import os
import sys
from typing import Optional

_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def setup_logging(level: str = "INFO", run_dir: Optional[str] = None) -> None:
    """
    Configure the root logger once per process: stderr stream plus an
    optional `run.log` file inside the run directory.
    """
    root = logging.getLogger()
    root.setLevel(level.upper())

    if not any(isinstance(h, logging.StreamHandler) and not isinstance(h, logging.FileHandler)
               for h in root.handlers):
        stream = logging.StreamHandler(sys.stderr)
        stream.setFormatter(logging.Formatter(_FORMAT))
        root.addHandler(stream)

    if run_dir:
        os.makedirs(run_dir, exist_ok=True)
        path = os.path.abspath(os.path.join(run_dir, "run.log"))
        already = any(isinstance(h, logging.FileHandler) and h.baseFilename == path for h in root.handlers)
        if not already:
            fh = logging.FileHandler(path)
            fh.setFormatter(logging.Formatter(_FORMAT))
            root.addHandler(fh)
