import logging
from contextlib import nullcontext
from dataclasses import replace

import click
from humanfriendly import format_timespan
from millify import millify
from rich.live import Live
from rich.logging import RichHandler
from rich.panel import Panel
from rich.progress import (
    BarColumn,
    Progress,
    SpinnerColumn,
    TaskProgressColumn,
    TextColumn,
    TimeElapsedColumn,
    TimeRemainingColumn,
)

from seqexp.config import FORMATS
from seqexp.console import console
from seqexp.exceptions import (
    InvalidPairError,
    InvalidPointError,
    InvalidRunConfigError,
    NumericalError,
    SeqExpError,
)
from seqexp.exponents import (
    Constraint,
    second_order_expectation,
    second_order_probabilistic,
)
from seqexp.harness import (
    ADAPTIVE,
    PLAN_COLUMNS,
    ExperimentPlan,
    adaptive_trials,
    check_change_of_measure,
    check_error_convergence,
    check_expectation_achievability,
    check_probabilistic_achievability,
    check_rogozin,
    resolve_points,
    run_plan,
)
from seqexp.models import DistributionPair, ExponentialPair, GaussianPair
from seqexp.renewal import (
    CONSTANT_NAMES,
    compare_constants,
    constants_overshoot_mc,
    constants_series,
)
from seqexp.signals import point_flagged
from seqexp.sprt import SprtConfig
from seqexp.util import float_grid, render, write_text
from seqexp.workers import RandomStreams

REFRESH_PER_SECOND = 8
MOMENT_COLUMNS = ('D0', 'D1', 'V0', 'V1', 'M3_0', 'M3_1', 'E2_0', 'E2_1')
CONSTANT_COLUMNS = ('constant', 'value', 'terms_used', 'tail_bound')
ORACLE_COLUMNS = (
    *CONSTANT_COLUMNS, 'mc', 'mc_stderr', 'difference', 'allowed', 'agrees'
)
EXPONENT_COLUMNS = (
    'constraint', 'lambda', 'eps', 'first_order', 'second_order',
    'normalization'
)
CONVERGENCE_COLUMNS = (
    'boundary', 'hypothesis', 'trials', 'normalized', 'normalized_stderr',
    'target', 'relative_error'
)
ROGOZIN_COLUMNS = ('n', 'trials', 'sup_distance', 'scaled', 'noise_floor')
CHANGE_OF_MEASURE_COLUMNS = (
    'boundary', 'gamma', 'lhs', 'lhs_stderr', 'rhs', 'rhs_stderr', 'slack',
    'holds'
)
ACHIEVABILITY_COLUMNS = (
    'constraint', 'n', 'alpha', 'beta', 'p10_hat', 'p10_stderr', 'p01_hat',
    'p01_stderr', 'constrained_h0', 'constrained_h1', 'limit', 'predicted',
    'empirical', 'constraint_holds', 'exponent_holds'
)
FIGURE_COLUMNS = (
    'family_param', 'lambda', 'F_value', 'A', 'A_tilde', 'B', 'B_tilde'
)
LAMBDA_GRID = float_grid(0.0, 1.0, 0.1)
GAUSSIAN_GRID = (0.25, 0.5, 1.0, 1.5, 2.0, 3.0)
EXPONENTIAL_GRID = (*float_grid(0.1, 0.9, 0.1), 0.99)
DEFAULT_BOUNDARIES = (4.0, 6.0, 8.0)
DEFAULT_ROGOZIN_NS = (25.0, 100.0, 400.0)
DEFAULT_GAMMAS = (1.0,)
DEFAULT_ACHIEVABILITY_NS = (100.0, 400.0)
DEFAULT_LAMBDA = 0.5
CHECKS = ('convergence', 'rogozin', 'change-of-measure', 'achievability')
FAMILIES = ('gaussian', 'exponential')


def human_bignum(num):
    return millify(num, precision=2, drop_nulls=False)


def human_timespan(secs):
    return format_timespan(secs)


def error_message(e):
    msg = e.messages
    if isinstance(msg, dict):
        return ','.join([f"{k} => {v}" for k, v in msg.items()])
    if isinstance(msg, list):
        return ','.join(str(m) for m in msg)
    return str(msg)


def fail(ctx, title, e):
    console.print(f'{title}: {error_message(e)}', style='error')
    ctx.exit(e.exit_code)


def init_logging(level):
    root = logging.getLogger()
    if not any(isinstance(h, RichHandler) for h in root.handlers):
        root.addHandler(
            RichHandler(console=console, show_path=False, show_time=False)
        )
    logging.getLogger('seqexp').setLevel(level)


def resolve_pair(value):
    if value is None:
        msg = 'No hypothesis pair given (use --pair)'
        raise InvalidPairError(msg)
    if isinstance(value, DistributionPair):
        return value
    if isinstance(value, dict):
        return DistributionPair.from_dict(value)
    return DistributionPair.parse(str(value))


def emit(cfg, rows, columns, document=None):
    text = render(rows, columns, fmt=cfg.format, document=document)
    if cfg.out:
        write_text(text, cfg.out)
    else:
        click.echo(text, nl=False)


def flag_point(sender, param, msg):
    logging.getLogger(__name__).warning(msg)
    point_flagged.send(sender, point=param, message=msg)


class ProgressBar:
    def __init__(self, title, console=None, total=None, completed=0):
        self.progress = Progress(
            SpinnerColumn(spinner_name='aesthetic', style='simulating'),
            BarColumn(),
            TextColumn('{task.fields[count]} trials'),
            TaskProgressColumn(),
            TimeRemainingColumn(),
            TextColumn('['),
            TimeElapsedColumn(),
            TextColumn(']'),
            console=console
        )
        self.task_id = self.progress.add_task(
            title, total=total, completed=completed,
            count=human_bignum(completed)
        )
        self.task = self.progress.tasks[0]
        self.panel = Panel.fit(
            self.progress,
            title=title,
            border_style='simulating'
        )
        self.live = Live(
            self.panel,
            console=console,
            refresh_per_second=REFRESH_PER_SECOND
        )

    @property
    def console(self):
        return self.live.console

    def next(self, n=1):
        self.progress.update(
            self.task_id, advance=n,
            count=human_bignum(self.task.completed + n)
        )

    def print_summary(self):
        elapsed = self.task.elapsed or 0.0
        self.console.print(
            f'Simulated {human_bignum(self.task.completed)} trials in '
            f'{human_timespan(elapsed)}',
            style='success'
        )

    def __enter__(self):
        self.live.__enter__()
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.live.__exit__(exc_type, exc_val, exc_tb)
        if exc_type is None:
            self.print_summary()


def progress_bar(title, total):
    if not console.is_terminal:
        return nullcontext()
    return ProgressBar(title, console=console, total=total)


pair_option = click.option(
    '-p', '--pair',
    default=None,
    help=(
        'Hypothesis pair as JSON or shorthand, '
        'e.g. gaussian:0,1 or exponential:1,2.'
    )
)
tol_option = click.option(
    '--tol', type=click.FLOAT, default=None,
    help='Series truncation tolerance. (default 1e-8)'
)
format_option = click.option(
    '-f', '--format', 'fmt', type=click.Choice(FORMATS), default=None,
    help='Output format. (default csv)'
)
out_option = click.option(
    '-o', '--out', type=click.Path(dir_okay=False), default=None,
    help='Write the report to this file instead of stdout.'
)
seed_option = click.option(
    '--seed', type=click.INT, default=None,
    help='Random seed. (default 20180514)'
)
trials_option = click.option(
    '-t', '--trials', type=click.IntRange(min=1), default=None,
    help='Monte Carlo trials per point and hypothesis.'
)
workers_option = click.option(
    '-w', '--workers', type=click.IntRange(min=1), default=None,
    help='Worker processes; results do not depend on it. (default 1)'
)
lambda_option = click.option(
    '-l', '--lambda', 'lambdas', type=click.FLOAT, multiple=True,
    help='Type-I weight lambda in [0, 1]; may be repeated.'
)
constraint_option = click.option(
    '-c', '--constraint', default=None,
    help='prob (probabilistic) or expect (expectation).'
)
eps_option = click.option(
    '--eps', type=click.FLOAT, default=None,
    help='Stopping-time tail bound epsilon in (0, 1).'
)


@click.command('moments')
@pair_option
@format_option
@out_option
@click.pass_context
def moments_command(ctx, pair, fmt, out):
    """Print the per-sample LLR moments of a hypothesis pair."""
    try:
        cfg = ctx.obj.merged(pair=pair, format=fmt, out=out)
        ms = resolve_pair(cfg.pair).moments()
        emit(cfg, [ms.to_dict()], MOMENT_COLUMNS, ms.to_dict())
    except SeqExpError as e:
        fail(ctx, 'Moments failed', e)


def simulate_constants(cfg, pair):
    with progress_bar('Simulating Overshoots', 2 * cfg.trials) as progress:
        return constants_overshoot_mc(
            pair,
            boundary=cfg.boundary,
            trials=cfg.trials,
            streams=RandomStreams(seed=cfg.seed),
            workers=cfg.workers,
            batch_trials=cfg.batch_trials,
            max_steps_factor=cfg.max_steps_factor,
            progress=progress
        )


@click.command('constants')
@pair_option
@tol_option
@click.option(
    '--oracle', is_flag=True, default=None,
    help='Also estimate the constants from simulated overshoots.'
)
@click.option(
    '-b', '--boundary', type=click.FLOAT, default=None,
    help='Overshoot boundary. (default 100/min(D0, D1))'
)
@trials_option
@seed_option
@workers_option
@format_option
@out_option
@click.pass_context
def constants_command(
    ctx, pair, tol, oracle, boundary, trials, seed, workers, fmt, out
):
    """Compute the renewal constants A, A_tilde, B and B_tilde.

    \b
    Pairs without closed-form k-step functionals are simulated instead.
    """
    try:
        cfg = ctx.obj.merged(
            pair=pair, tol=tol, oracle=oracle, boundary=boundary,
            trials=trials, seed=seed, workers=workers, format=fmt, out=out
        )
        p = resolve_pair(cfg.pair)
        if not p.has_functionals and p.is_nonarithmetic and p.can_sample:
            mc = simulate_constants(cfg, p)
            rows = [
                {
                    'constant': name,
                    'value': mc.estimate(name).mean,
                    'mc': mc.estimate(name).mean,
                    'mc_stderr': mc.estimate(name).stderr,
                }
                for name in CONSTANT_NAMES
            ]
            emit(cfg, rows, ORACLE_COLUMNS, {'oracle': mc.to_dict()})
            return
        rc = constants_series(p, tol=cfg.tol)
        rows = [
            {'constant': name, **s.to_dict()}
            for name, s in rc.series.items()
        ]
        document = {'constants': rc.to_dict()}
        columns = CONSTANT_COLUMNS
        if cfg.oracle:
            mc = simulate_constants(cfg, p)
            agreement = compare_constants(rc, mc)
            for row, a in zip(rows, agreement):
                row.update(
                    mc=a.mc, mc_stderr=a.stderr, difference=a.difference,
                    allowed=a.allowed, agrees=a.agrees
                )
                if not a.agrees:
                    console.print(
                        f'{a.name}: series and simulation disagree',
                        style='warning'
                    )
            document['oracle'] = mc.to_dict()
            document['agreement'] = [a.to_dict() for a in agreement]
            columns = ORACLE_COLUMNS
        emit(cfg, rows, columns, document)
    except SeqExpError as e:
        fail(ctx, 'Constants failed', e)


@click.command('exponents')
@pair_option
@constraint_option
@lambda_option
@click.option(
    '--sweep', is_flag=True, default=False,
    help='Evaluate lambda over 0, 0.1, ..., 1.'
)
@eps_option
@tol_option
@format_option
@out_option
@click.pass_context
def exponents_command(
    ctx, pair, constraint, lambdas, sweep, eps, tol, fmt, out
):
    """Compute second-order exponents under either sample-size constraint."""
    try:
        cfg = ctx.obj.merged(
            pair=pair, constraint=constraint, lambdas=lambdas or None,
            eps=eps, tol=tol, format=fmt, out=out
        )
        if cfg.constraint is None:
            msg = 'No constraint given (use --constraint prob|expect)'
            raise InvalidRunConfigError(msg)
        kind = Constraint.parse(cfg.constraint)
        lams = LAMBDA_GRID if sweep else cfg.lambdas
        if not lams:
            msg = 'No lambda given (use --lambda or --sweep)'
            raise InvalidRunConfigError(msg)
        p = resolve_pair(cfg.pair)
        ms = p.moments()
        if kind == Constraint.PROBABILISTIC:
            if cfg.eps is None:
                msg = 'The probabilistic constraint needs --eps'
                raise InvalidRunConfigError(msg)
            reports = [
                second_order_probabilistic(ms, lam, cfg.eps) for lam in lams
            ]
        else:
            rc = constants_series(p, tol=cfg.tol)
            reports = [
                second_order_expectation(rc, lam, ms) for lam in lams
            ]
        rows = [r.to_dict() for r in reports]
        emit(cfg, rows, EXPONENT_COLUMNS, rows)
    except SeqExpError as e:
        fail(ctx, 'Exponents failed', e)


def load_plan(cfg, plan_file):
    if plan_file:
        try:
            with open(plan_file, encoding='utf-8') as f:
                return ExperimentPlan.from_json(f.read())
        except OSError as e:
            msg = f'Cannot read plan {plan_file}: {e.strerror}'
            raise InvalidRunConfigError(msg)
    if cfg.plan is not None:
        return ExperimentPlan.from_dict(cfg.plan)
    msg = 'No plan given (use --plan or --check)'
    raise InvalidRunConfigError(msg)


def simulate_plan(cfg, plan_file, seed, trials, workers):
    plan = load_plan(cfg, plan_file)
    plan = replace(
        plan,
        seed=seed if seed is not None else (
            cfg.seed if plan.seed is None else plan.seed
        ),
        trials=trials or plan.trials or cfg.trials,
        workers=workers or plan.workers or cfg.workers
    )
    total = sum(
        sum(rp.trials.values())
        for rp in resolve_points(plan, tol=cfg.tol)
    )
    with progress_bar('Simulating Plan', total) as progress:
        report = run_plan(
            plan,
            tol=cfg.tol,
            batch_trials=cfg.batch_trials,
            max_steps_factor=cfg.max_steps_factor,
            progress=progress
        )
    emit(
        cfg, [r.to_dict() for r in report.rows], PLAN_COLUMNS,
        report.to_dict()
    )
    if not report.valid:
        points = ','.join(str(i) for i in report.invalid_points)
        msg = f'Invalid points: {points}'
        raise InvalidPointError(msg)


def simulate_convergence(cfg, pair, trials):
    boundaries = cfg.boundaries or DEFAULT_BOUNDARIES
    counts = [trials or adaptive_trials(b) for b in boundaries]
    rc = constants_series(pair, tol=cfg.tol)
    with progress_bar('Simulating Errors', 2 * sum(counts)) as progress:
        table = check_error_convergence(
            pair, boundaries, trials=trials or ADAPTIVE,
            streams=RandomStreams(seed=cfg.seed), rc=rc,
            workers=cfg.workers, batch_trials=cfg.batch_trials,
            progress=progress
        )
    rows = [r.to_dict() for r in table.rows]
    emit(cfg, rows, CONVERGENCE_COLUMNS, rows)


def simulate_rogozin(cfg, pair):
    ns = [int(n) for n in (cfg.n or DEFAULT_ROGOZIN_NS)]
    results = []
    with progress_bar('Simulating Maxima', cfg.trials * len(ns)) as progress:
        for i, n in enumerate(ns):
            results.append(check_rogozin(
                pair, n, cfg.trials,
                streams=RandomStreams(seed=cfg.seed, point=i),
                workers=cfg.workers, batch_trials=cfg.batch_trials,
                progress=progress
            ))
    rows = [r.to_dict() for r in results]
    emit(cfg, rows, ROGOZIN_COLUMNS, rows)


def simulate_change_of_measure(cfg, pair):
    ms = pair.moments()
    settings = [
        (b, g)
        for b in (cfg.boundaries or DEFAULT_BOUNDARIES)
        for g in (cfg.gamma or DEFAULT_GAMMAS)
    ]
    rows = []
    total = 2 * cfg.trials * len(settings)
    with progress_bar('Simulating Tests', total) as progress:
        for i, (b, g) in enumerate(settings):
            sprt_cfg = SprtConfig.for_boundaries(
                b, b, ms, cfg.max_steps_factor
            )
            result = check_change_of_measure(
                pair, sprt_cfg, g, cfg.trials,
                streams=RandomStreams(seed=cfg.seed, point=i),
                workers=cfg.workers, batch_trials=cfg.batch_trials,
                progress=progress
            )
            rows.append({'boundary': b, **result.to_dict()})
    emit(cfg, rows, CHANGE_OF_MEASURE_COLUMNS, rows)


def simulate_achievability(cfg, pair):
    if cfg.constraint is None:
        msg = 'No constraint given (use --constraint prob|expect)'
        raise InvalidRunConfigError(msg)
    kind = Constraint.parse(cfg.constraint)
    ns = [int(n) for n in (cfg.n or DEFAULT_ACHIEVABILITY_NS)]
    lam = (cfg.lambdas or (DEFAULT_LAMBDA,))[0]
    eta = cfg.eta or 0.0
    rc = None
    if kind == Constraint.PROBABILISTIC:
        if cfg.eps is None:
            msg = 'The probabilistic constraint needs --eps'
            raise InvalidRunConfigError(msg)
    else:
        rc = constants_series(pair, tol=cfg.tol)
    rows = []
    total = 2 * cfg.trials * len(ns)
    with progress_bar('Simulating Tests', total) as progress:
        for i, n in enumerate(ns):
            kwargs = {
                'streams': RandomStreams(seed=cfg.seed, point=i),
                'lam': lam, 'workers': cfg.workers,
                'batch_trials': cfg.batch_trials, 'progress': progress
            }
            if rc is None:
                check = check_probabilistic_achievability(
                    pair, n, cfg.eps, eta, cfg.trials, **kwargs
                )
            else:
                check = check_expectation_achievability(
                    pair, rc, n, eta, cfg.trials, **kwargs
                )
            rows.append(check.to_dict())
    emit(cfg, rows, ACHIEVABILITY_COLUMNS, rows)


@click.command('simulate')
@click.option(
    '--plan', 'plan_file', type=click.Path(exists=True, dir_okay=False),
    default=None, help='Experiment plan JSON file.'
)
@click.option(
    '--check', type=click.Choice(CHECKS), default=None,
    help='Run a verification table for --pair instead of a plan.'
)
@pair_option
@click.option(
    '-b', '--boundary', 'boundaries', type=click.FLOAT, multiple=True,
    help='SPRT boundary for --check; may be repeated.'
)
@click.option(
    '-n', 'ns', type=click.IntRange(min=1), multiple=True,
    help='Sample size for rogozin or achievability checks; may repeat.'
)
@click.option(
    '--gamma', 'gammas', type=click.FLOAT, multiple=True,
    help='Likelihood-ratio level for --check change-of-measure.'
)
@constraint_option
@eps_option
@click.option(
    '--eta', type=click.FLOAT, default=None,
    help='Threshold back-off eta for --check achievability. (default 0)'
)
@lambda_option
@seed_option
@trials_option
@workers_option
@tol_option
@format_option
@out_option
@click.pass_context
def simulate_command(
    ctx, plan_file, check, pair, boundaries, ns, gammas, constraint, eps, eta,
    lambdas, seed, trials, workers, tol, fmt, out
):
    """Run an experiment plan or a verification table."""
    try:
        cfg = ctx.obj.merged(
            pair=pair, boundaries=boundaries or None,
            n=tuple(float(n) for n in ns) or None, gamma=gammas or None,
            constraint=constraint, eps=eps, eta=eta,
            lambdas=lambdas or None, seed=seed, workers=workers, tol=tol,
            format=fmt, out=out
        )
        if check is None:
            simulate_plan(cfg, plan_file, seed, trials, workers)
            return
        p = resolve_pair(cfg.pair)
        if check == 'convergence':
            simulate_convergence(cfg, p, trials)
            return
        cfg = cfg.merged(trials=trials)
        if check == 'rogozin':
            simulate_rogozin(cfg, p)
        elif check == 'achievability':
            simulate_achievability(cfg, p)
        else:
            simulate_change_of_measure(cfg, p)
    except SeqExpError as e:
        fail(ctx, 'Simulation failed', e)


def figure_pair(family, param):
    if family == 'gaussian':
        return GaussianPair(0.0, param)
    return ExponentialPair(param, 1.0)


@click.command('figure')
@click.argument('family', type=click.Choice(FAMILIES))
@click.option(
    '-g', '--grid', type=click.FLOAT, multiple=True,
    help='Family parameter (mean gap or rate); may be repeated.'
)
@lambda_option
@tol_option
@format_option
@out_option
@click.pass_context
def figure_command(ctx, family, grid, lambdas, tol, fmt, out):
    """Tabulate F(lambda) over a family of pairs.

    \b
    FAMILY is gaussian (N(0,1) against N(d,1) over mean gaps d) or
    exponential (rates gamma against 1 over gamma in (0, 1)).
    Points whose divergences are too small to evaluate are flagged
    and left out.
    """
    try:
        cfg = ctx.obj.merged(
            grid=grid or None, lambdas=lambdas or None, tol=tol,
            format=fmt, out=out
        )
        default = GAUSSIAN_GRID if family == 'gaussian' else EXPONENTIAL_GRID
        rows = []
        flagged = []
        for param in cfg.grid or default:
            try:
                pair = figure_pair(family, param)
                ms = pair.moments()
                if min(ms.D0, ms.D1) < cfg.min_divergence:
                    msg = (
                        f'{family} {param:g}: divergence '
                        f'{min(ms.D0, ms.D1):.3g} below '
                        f'{cfg.min_divergence:g}'
                    )
                    raise NumericalError(msg)
                rc = constants_series(pair, tol=cfg.tol)
            except (InvalidPairError, NumericalError) as e:
                msg = f'Flagged {family} {param:g}: {error_message(e)}'
                flag_point(family, param, msg)
                console.print(msg, style='flagged')
                flagged.append(param)
                continue
            for lam in cfg.lambdas or LAMBDA_GRID:
                rows.append({
                    'family_param': param,
                    'lambda': lam,
                    'F_value': second_order_expectation(rc, lam).second_order,
                    'A': rc.A,
                    'A_tilde': rc.A_tilde,
                    'B': rc.B,
                    'B_tilde': rc.B_tilde,
                })
        if flagged and not rows:
            msg = 'Every figure point was flagged'
            raise NumericalError(msg)
        emit(
            cfg, rows, FIGURE_COLUMNS,
            {'family': family, 'rows': rows, 'flagged': flagged}
        )
    except SeqExpError as e:
        fail(ctx, 'Figure failed', e)
