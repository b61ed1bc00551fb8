import click
from dotenv import find_dotenv, load_dotenv

__version__ = "0.1.0"


@click.version_option(version=__version__, package_name='seqexp')
@click.group()
@click.option(
    '--config', 'config_file', type=click.Path(exists=True, dir_okay=False),
    default=None, help='JSON run configuration; flags override it.'
)
@click.option(
    '--log-level',
    type=click.Choice(
        ['DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL'],
        case_sensitive=False
    ),
    default=None,
    help='Logging level. (default WARNING)'
)
@click.pass_context
def cli(ctx, config_file, log_level):
    """Sequential probability ratio tests and their error exponents."""
    from .command import fail, init_logging
    from .config import FORMATS, RunConfig
    from .exceptions import InvalidRunConfigError, SeqExpError

    load_dotenv(find_dotenv(usecwd=True))
    try:
        cfg = RunConfig.from_settings()
        if config_file:
            cfg = cfg.merged_file(config_file)
        cfg = cfg.merged(log_level=log_level.upper() if log_level else None)
        if cfg.format not in FORMATS:
            msg = f'Unknown output format {cfg.format!r}'
            raise InvalidRunConfigError(msg)
    except SeqExpError as e:
        fail(ctx, 'Configuration failed', e)
    init_logging(cfg.log_level)
    ctx.obj = cfg


def _register_commands():
    from .command import (
        constants_command,
        exponents_command,
        figure_command,
        moments_command,
        simulate_command,
    )

    for command in (
        moments_command,
        constants_command,
        exponents_command,
        simulate_command,
        figure_command,
    ):
        cli.add_command(command)


_register_commands()
