import os
from collections import UserDict
from pathlib import Path

from .acquisition import AcquisitionKind
from .logging import get_logger
from .util import parse_seed_list

logger = get_logger("config")

METHODS = ("amsbq", "vbq", "pe")

ENV_VAR_PREFIX = "AMSBQ_CONFIG_"

DEFAULTS = {
    "METHOD": "amsbq",
    "ACQUISITION": "mi",
    "BUDGET": "30",
    "SEED": "0",
    "RESTARTS": "10",
    "FIT_RESTARTS": "5",
    "REFIT": "true",
    "NODES": "2048",
    "REPS": "100",
    "LENGTHSCALE_MODE": "0.05",
    "LENGTHSCALE_SHAPE": "2",
    "B_PRIOR_SCALE": "0.5",
    "ALLOW_PATHOLOGICAL": "false",
    "THRESHOLD": "0.01",
}

TRUE_VALUES = ("1", "true", "yes", "on")
FALSE_VALUES = ("0", "false", "no", "off")


class ConfigError(ValueError):
    pass


class RunConfig(UserDict):
    """
    Flat key/value configuration of a single experiment.

    Values are read from a plain text file with one ``key = value`` pair per line (``#`` starts a comment) and may be
    overridden by environment variables. For instance, the budget could be passed as "AMSBQ_CONFIG_BUDGET". Values
    set programmatically afterwards, e.g., from command line flags, take precedence over both.

    Keys are case-insensitive. All values are stored as strings and converted by the typed accessors, which raise
    ConfigError for invalid values.
    """

    def __init__(self, values: dict[str, str] = None, source: str = None):
        super().__init__()

        # file (or caller) provided values first, environment variables take precedence
        for key, value in (values or {}).items():
            self[key] = value

        for name, value in os.environ.items():
            if name.startswith(ENV_VAR_PREFIX):
                self[name.removeprefix(ENV_VAR_PREFIX)] = value

        self.source = source

    @classmethod
    def parse(cls, text: str, source: str = None) -> "RunConfig":
        values = {}

        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()

            if not line:
                continue

            key, sep, value = line.partition("=")

            if not sep or not key.strip():
                raise ConfigError(f"{source or '<config>'}:{lineno}: expected key = value, got {line!r}")

            values[key.strip()] = value.strip()

        return cls(values, source)

    @classmethod
    def from_file(cls, path: str | os.PathLike) -> "RunConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"could not read configuration {path}: {e}") from e

        return cls.parse(text, str(path))

    def __setitem__(self, key, value):
        # we treat all keys as case-insensitive and normalize them to uppercase
        self.data[key.upper()] = str(value)

    def __getitem__(self, key: str):
        key = key.upper()

        try:
            return self.data[key]

        except KeyError:
            pass

        try:
            return DEFAULTS[key]

        except KeyError:
            raise KeyError(f"Could not find {key}")

    def __contains__(self, key) -> bool:
        return key.upper() in self.data or key.upper() in DEFAULTS

    # need to overwrite to force use of our __getitem__
    def get(self, key, default=None):
        try:
            return self[key]
        except KeyError:
            return default

    def override(self, **values):
        """
        Set all values which are not None, e.g., options the user passed on the command line.
        """
        for key, value in values.items():
            if value is not None:
                self[key] = value

    def copy(self) -> "RunConfig":
        rv = RunConfig.__new__(RunConfig)
        UserDict.__init__(rv)
        rv.data.update(self.data)
        rv.source = self.source
        return rv

    def _convert(self, key: str, converter, description: str):
        value = self.get(key)

        if value is None:
            raise ConfigError(f"missing required configuration value {key.lower()}")

        try:
            return converter(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{key.lower()} must be {description}, got {value!r}") from None

    def _bool(self, key: str) -> bool:
        value = self.get(key, "").strip().lower()

        if value in TRUE_VALUES:
            return True
        if value in FALSE_VALUES:
            return False

        raise ConfigError(f"{key.lower()} must be a boolean, got {value!r}")

    def _positive_int(self, key: str, allow_zero: bool = False) -> int:
        value = self._convert(key, int, "an integer")

        if value < 0 or (value == 0 and not allow_zero):
            raise ConfigError(f"{key.lower()} must be positive, got {value}")

        return value

    def _positive_float(self, key: str) -> float:
        value = self._convert(key, float, "a number")

        if not value > 0:
            raise ConfigError(f"{key.lower()} must be positive, got {value}")

        return value

    @property
    def benchmark(self) -> str:
        value = self.get("benchmark")

        if not value:
            raise ConfigError("no benchmark configured")

        return value

    @property
    def method(self) -> str:
        value = self["method"].strip().lower()

        if value not in METHODS:
            raise ConfigError(f"unknown method {value}, expected one of {', '.join(METHODS)}")

        return value

    @property
    def acquisition(self) -> AcquisitionKind:
        try:
            return AcquisitionKind.parse(self["acquisition"])
        except ValueError as e:
            raise ConfigError(str(e)) from None

    @property
    def budget(self) -> float:
        value = self._positive_float("budget")

        if value == float("inf"):
            raise ConfigError("budget must be finite")

        return value

    @property
    def seeds(self) -> list[int]:
        seeds = self._convert("seed", parse_seed_list, "an integer or a comma-separated list of integers")

        if not seeds:
            raise ConfigError("at least one seed is required")

        if any(seed < 0 for seed in seeds):
            raise ConfigError("seeds must be non-negative")

        return seeds

    @property
    def seed(self) -> int:
        seeds = self.seeds

        if len(seeds) > 1:
            raise ConfigError("a single run needs exactly one seed")

        return seeds[0]

    @property
    def restarts(self) -> int:
        return self._positive_int("restarts")

    @property
    def fit_restarts(self) -> int:
        return self._positive_int("fit_restarts")

    @property
    def refit(self) -> bool:
        return self._bool("refit")

    @property
    def max_iterations(self) -> int | None:
        if self.get("max_iterations") in (None, ""):
            return None

        return self._positive_int("max_iterations", allow_zero=True)

    @property
    def out(self) -> Path | None:
        value = self.get("out")
        return Path(value) if value else None

    @property
    def nodes(self) -> int:
        return self._positive_int("nodes")

    @property
    def reps(self) -> int:
        return self._positive_int("reps")

    @property
    def lengthscale_mode(self) -> float:
        return self._positive_float("lengthscale_mode")

    @property
    def lengthscale_shape(self) -> float:
        value = self._positive_float("lengthscale_shape")

        if value <= 1:
            raise ConfigError("lengthscale_shape must exceed 1")

        return value

    @property
    def b_prior_scale(self) -> float:
        return self._positive_float("b_prior_scale")

    @property
    def allow_pathological(self) -> bool:
        return self._bool("allow_pathological")

    @property
    def threshold(self) -> float:
        return self._positive_float("threshold")

    @property
    def label(self) -> str:
        value = self.get("label")

        if value:
            return value

        if self.method == "amsbq":
            return f"amsbq-{self.acquisition.value}"

        return self.method

    def validate(self):
        """
        Touch every value needed for a run so that configuration errors surface before any work is done.
        """
        for name in (
            "benchmark",
            "method",
            "acquisition",
            "budget",
            "seeds",
            "restarts",
            "fit_restarts",
            "refit",
            "max_iterations",
            "nodes",
            "reps",
            "lengthscale_mode",
            "lengthscale_shape",
            "b_prior_scale",
            "allow_pathological",
            "threshold",
        ):
            getattr(self, name)

        if self.method == "amsbq" and self.acquisition.pathological and not self.allow_pathological:
            raise ConfigError(f"acquisition {self.acquisition.value} is pathological, pass --allow-pathological")

        logger.debug(f"Configuration {self.source or '<memory>'}: {dict(self.data)}")
