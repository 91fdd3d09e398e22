import os
import re
from pathlib import Path


class Context:
    """
    Takes an output directory and creates the subdirectories a comparison writes to.
    There should be one context per comparison.
    """

    def __init__(self, directory: str | os.PathLike):
        directory = Path(directory)

        def makedir(path: Path):
            os.makedirs(str(path), exist_ok=True)
            return path

        self.base_dir = makedir(directory)

        # one convergence log per (configuration, seed) pair
        self.runs_dir = makedir(directory / "runs")

    @staticmethod
    def _slug(label: str) -> str:
        return re.sub(r"[^A-Za-z0-9_.-]+", "_", label).strip("_") or "run"

    def run_csv_path(self, index: int, label: str, seed: int) -> Path:
        # the index keeps file names unique when two configurations share a label
        return self.runs_dir / f"{index:02d}-{self._slug(label)}-seed{seed}.csv"

    @property
    def summary_csv_path(self) -> Path:
        return self.base_dir / "summary.csv"

    @property
    def summary_text_path(self) -> Path:
        return self.base_dir / "summary.txt"
