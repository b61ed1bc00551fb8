import json
import os
from dataclasses import dataclass, field, fields, replace
from json import JSONDecodeError
from typing import ClassVar, Optional

from marshmallow import Schema, ValidationError, validate
from marshmallow import fields as mfields

from seqexp.exceptions import InvalidRunConfigError
from seqexp.schema import Finite

DEFAULT_SEED = 20180514
FORMATS = ('csv', 'json')
LOG_LEVELS = ('DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL')


@dataclass
class EnvironSettings:
    _prefix: ClassVar[str] = ''

    @classmethod
    def getenv(cls, name):
        return os.environ.get(f'{cls._prefix}{name}')

    @classmethod
    def from_env(cls):
        c = cls()
        for f in fields(c):
            if (v := cls.getenv(f.name)) is not None:
                v = v.strip()
                try:
                    setattr(c, f.name, json.loads(v))
                except Exception:
                    setattr(c, f.name, v)
        return c


@dataclass
class EnvRunSettings(EnvironSettings):
    _prefix: ClassVar[str] = 'SEQEXP_'

    SEED: int = field(default=DEFAULT_SEED)
    WORKERS: int = field(default=1)
    TRIALS: int = field(default=100000)
    TOL: float = field(default=1e-8)
    BATCH_TRIALS: int = field(default=4096)
    MAX_STEPS_FACTOR: int = field(default=50)
    FORMAT: str = field(default='csv')
    LOG_LEVEL: str = field(default='WARNING')
    MIN_DIVERGENCE: float = field(default=1e-3)


class Floats(mfields.Field):
    """A number or a list of numbers, loaded as a tuple of floats."""

    default_error_messages = {  # noqa: RUF012
        'invalid': 'Not a number or a list of numbers.'
    }

    def _deserialize(self, value, attr, data, **kwargs):
        values = value if isinstance(value, list) else [value]
        if not all(
            isinstance(v, (int, float)) and not isinstance(v, bool)
            for v in values
        ):
            raise self.make_error('invalid')
        return tuple(float(v) for v in values)


POSITIVE_INT = validate.Range(min=1)


class RunConfigSchema(Schema):
    pair = mfields.Raw()
    plan = mfields.Dict()
    tol = Finite(validate=validate.Range(min=0, min_inclusive=False))
    lambdas = Floats(data_key='lambda')
    eps = Finite()
    eta = Finite()
    constraint = mfields.String()
    seed = mfields.Integer(validate=validate.Range(min=0, max=2 ** 64 - 1))
    trials = mfields.Integer(validate=POSITIVE_INT)
    workers = mfields.Integer(validate=POSITIVE_INT)
    batch_trials = mfields.Integer(validate=POSITIVE_INT)
    max_steps_factor = mfields.Integer(validate=POSITIVE_INT)
    format = mfields.String(validate=validate.OneOf(FORMATS))
    out = mfields.String()
    oracle = mfields.Boolean()
    boundary = Finite(validate=validate.Range(min=0, min_inclusive=False))
    boundaries = Floats()
    n = Floats()
    gamma = Floats()
    grid = Floats()
    min_divergence = Finite(validate=validate.Range(min=0))
    log_level = mfields.String(validate=validate.OneOf(LOG_LEVELS))


@dataclass(frozen=True)
class RunConfig:
    """Settings of one CLI invocation.

    Built from the environment, then a JSON config document, then
    command-line flags; each layer overrides only what it sets.
    """

    seed: int = DEFAULT_SEED
    workers: int = 1
    trials: int = 100000
    tol: float = 1e-8
    batch_trials: int = 4096
    max_steps_factor: int = 50
    format: str = 'csv'
    log_level: str = 'WARNING'
    min_divergence: float = 1e-3
    pair: object = None
    plan: Optional[dict] = None
    lambdas: Optional[tuple] = None
    eps: Optional[float] = None
    eta: Optional[float] = None
    constraint: Optional[str] = None
    out: Optional[str] = None
    oracle: bool = False
    boundary: Optional[float] = None
    boundaries: Optional[tuple] = None
    n: Optional[tuple] = None
    gamma: Optional[tuple] = None
    grid: Optional[tuple] = None

    @classmethod
    def from_settings(cls, settings=None):
        settings = settings or EnvRunSettings.from_env()
        return cls(
            seed=int(settings.SEED),
            workers=int(settings.WORKERS),
            trials=int(settings.TRIALS),
            tol=float(settings.TOL),
            batch_trials=int(settings.BATCH_TRIALS),
            max_steps_factor=int(settings.MAX_STEPS_FACTOR),
            format=str(settings.FORMAT).lower(),
            log_level=str(settings.LOG_LEVEL).upper(),
            min_divergence=float(settings.MIN_DIVERGENCE)
        )

    def merged(self, **overrides):
        return replace(
            self, **{k: v for k, v in overrides.items() if v is not None}
        )

    def merged_json(self, j):
        try:
            overrides = RunConfigSchema().loads(j)
        except JSONDecodeError as je:
            raise InvalidRunConfigError(je.msg)
        except ValidationError as ve:
            raise InvalidRunConfigError(ve.messages)
        return self.merged(**overrides)

    def merged_file(self, path):
        try:
            with open(path, encoding='utf-8') as f:
                return self.merged_json(f.read())
        except OSError as e:
            msg = f'Cannot read config {path}: {e.strerror}'
            raise InvalidRunConfigError(msg)
