import csv
import json
import math

import pytest
from seqexp import __version__
from seqexp.command import (
    ACHIEVABILITY_COLUMNS,
    CONVERGENCE_COLUMNS,
    EXPONENT_COLUMNS,
    ORACLE_COLUMNS,
    ROGOZIN_COLUMNS,
)
from seqexp.harness import PLAN_COLUMNS
from seqexp.renewal import CONSTANT_NAMES
from seqexp.util import SCHEMA_LINE

GAUSSIAN = 'gaussian:0,1'
EXPONENTIAL = 'exponential:1,2'


def read_lines(path):
    with open(path, encoding='utf-8') as f:
        return f.read().splitlines()


def read_rows(path):
    lines = read_lines(path)
    assert lines[0] == SCHEMA_LINE
    return list(csv.DictReader(lines[1:]))


def read_json(path):
    with open(path, encoding='utf-8') as f:
        return json.load(f)


def write_json(path, data):
    path.write_text(json.dumps(data))
    return str(path)


def test_version(runner):
    result = runner.invoke(args=['--version'])
    assert result.exit_code == 0
    assert __version__ in result.output


def test_moments(runner, tmp_path):
    out = tmp_path / 'moments.csv'
    result = runner.invoke(args=['moments', '-p', GAUSSIAN, '-o', str(out)])
    assert result.exit_code == 0
    rows = read_rows(out)
    assert len(rows) == 1
    assert float(rows[0]['D0']) == pytest.approx(0.5)
    assert float(rows[0]['V1']) == pytest.approx(1.0)
    assert float(rows[0]['E2_0']) == pytest.approx(1.25)


def test_moments_json(runner, tmp_path):
    out = tmp_path / 'moments.json'
    result = runner.invoke(args=[
        'moments', '-p', EXPONENTIAL, '-f', 'json', '-o', str(out)
    ])
    assert result.exit_code == 0
    d = read_json(out)
    assert d['D0'] == pytest.approx(1.0 - math.log(2.0))
    assert d['D1'] == pytest.approx(math.log(2.0) - 0.5)


@pytest.mark.parametrize('text', [None, 'gaussian:0', 'gaussian:1,1', '{'])
def test_moments_bad_pair(runner, text):
    args = ['moments'] if text is None else ['moments', '-p', text]
    result = runner.invoke(args=args)
    assert result.exit_code == 2
    assert 'Moments failed' in result.output


def test_constants(runner, tmp_path):
    out = tmp_path / 'constants.csv'
    result = runner.invoke(args=['constants', '-p', GAUSSIAN, '-o', str(out)])
    assert result.exit_code == 0
    rows = read_rows(out)
    assert [r['constant'] for r in rows] == list(CONSTANT_NAMES)
    values = {r['constant']: float(r['value']) for r in rows}
    assert values['A'] == pytest.approx(0.71, abs=0.03)
    assert values['A'] == values['A_tilde']
    assert all(int(r['terms_used']) > 0 for r in rows)


def test_constants_arithmetic(runner, arithmetic_pair_json):
    result = runner.invoke(args=['constants', '-p', arithmetic_pair_json])
    assert result.exit_code == 3
    assert 'Constants failed' in result.output


def test_constants_oracle(runner, tmp_path):
    out = tmp_path / 'oracle.csv'
    result = runner.invoke(args=[
        'constants', '-p', GAUSSIAN, '--oracle', '-b', '50', '-t', '5000',
        '-o', str(out)
    ])
    assert result.exit_code == 0
    lines = read_lines(out)
    assert lines[1] == ','.join(ORACLE_COLUMNS)
    rows = read_rows(out)
    assert len(rows) == 4
    assert all(r['agrees'] in ('true', 'false') for r in rows)
    assert all(float(r['mc_stderr']) > 0.0 for r in rows)


def test_constants_sampled_pair(runner, sampled_pair_dict, tmp_path):
    out = tmp_path / 'sampled.json'
    result = runner.invoke(args=[
        'constants', '-p', json.dumps(sampled_pair_dict), '-b', '30',
        '-t', '2000', '-f', 'json', '-o', str(out)
    ])
    assert result.exit_code == 0
    oracle = read_json(out)['oracle']
    assert oracle['boundary'] == 30.0


def test_exponents_probabilistic(runner, tmp_path):
    out = tmp_path / 'exponents.csv'
    result = runner.invoke(args=[
        'exponents', '-p', EXPONENTIAL, '-c', 'prob', '--lambda', '0.5',
        '--eps', '0.5', '-o', str(out)
    ])
    assert result.exit_code == 0
    assert read_lines(out)[1] == ','.join(EXPONENT_COLUMNS)
    rows = read_rows(out)
    assert len(rows) == 1
    assert float(rows[0]['second_order']) == 0.0
    assert rows[0]['normalization'] == 'per_sqrt_n'


def test_exponents_expectation(runner, exponential_constants, tmp_path):
    out = tmp_path / 'exponents.csv'
    result = runner.invoke(args=[
        'exponents', '-p', EXPONENTIAL, '-c', 'expect', '-l', '0', '-l', '1',
        '-o', str(out)
    ])
    assert result.exit_code == 0
    rc = exponential_constants
    first, last = read_rows(out)
    assert float(first['second_order']) == pytest.approx(rc.A + rc.B)
    assert float(last['second_order']) == pytest.approx(
        rc.A_tilde + rc.B_tilde
    )
    assert first['eps'] == ''


def test_exponents_sweep(runner, tmp_path):
    out = tmp_path / 'sweep.csv'
    result = runner.invoke(args=[
        'exponents', '-p', GAUSSIAN, '-c', 'expect', '--sweep', '-o', str(out)
    ])
    assert result.exit_code == 0
    rows = read_rows(out)
    assert len(rows) == 11
    assert float(rows[-1]['lambda']) == 1.0
    values = [float(r['second_order']) for r in rows]
    assert max(values) - min(values) <= 1e-6


@pytest.mark.parametrize('args', [
    ['-c', 'prob', '--lambda', '1.5', '--eps', '0.1'],
    ['-c', 'prob', '--lambda', '0.5'],
    ['-c', 'prob', '--eps', '0.1'],
    ['-c', 'median', '--lambda', '0.5'],
    ['--lambda', '0.5', '--eps', '0.1'],
])
def test_exponents_bad_args(runner, args):
    result = runner.invoke(args=['exponents', '-p', GAUSSIAN, *args])
    assert result.exit_code == 2
    assert 'Exponents failed' in result.output


def test_simulate_plan(runner, plan_file, tmp_path):
    out = tmp_path / 'plan.csv'
    again = tmp_path / 'again.csv'
    result = runner.invoke(args=[
        'simulate', '--plan', plan_file, '-o', str(out)
    ])
    assert result.exit_code == 0
    result = runner.invoke(args=[
        'simulate', '--plan', plan_file, '-o', str(again)
    ])
    assert result.exit_code == 0
    assert read_lines(out) == read_lines(again)
    assert read_lines(out)[1] == ','.join(PLAN_COLUMNS)
    rows = read_rows(out)
    assert len(rows) == 6
    assert [r['hypothesis'] for r in rows] == ['H0', 'H1'] * 3
    assert rows[0]['p10_hat'] != ''
    assert rows[0]['p01_hat'] == ''
    assert rows[2]['tail_hat'] != ''


def test_simulate_plan_seed(runner, plan_file, tmp_path):
    first = tmp_path / 'first.csv'
    second = tmp_path / 'second.csv'
    runner.invoke(args=['simulate', '--plan', plan_file, '-o', str(first)])
    result = runner.invoke(args=[
        'simulate', '--plan', plan_file, '--seed', '1', '-o', str(second)
    ])
    assert result.exit_code == 0
    assert read_lines(first) != read_lines(second)


def test_simulate_empty_plan(runner, plan_dict, tmp_path):
    plan = write_json(tmp_path / 'empty.json', {**plan_dict, 'points': []})
    out = tmp_path / 'empty.csv'
    result = runner.invoke(args=['simulate', '--plan', plan, '-o', str(out)])
    assert result.exit_code == 0
    assert read_lines(out) == [SCHEMA_LINE, ','.join(PLAN_COLUMNS)]


def test_simulate_invalid_point(runner, plan_dict, tmp_path):
    plan = write_json(tmp_path / 'invalid.json', {
        **plan_dict,
        'trials': 100,
        'points': [{'alpha': 50.0, 'beta': 50.0, 'max_steps': 1}],
    })
    out = tmp_path / 'invalid.csv'
    result = runner.invoke(args=['simulate', '--plan', plan, '-o', str(out)])
    assert result.exit_code == 4
    assert 'Invalid points: 0' in result.output
    rows = read_rows(out)
    assert all(float(r['truncated_frac']) == 1.0 for r in rows)


def test_simulate_bad_plan(runner, plan_dict, tmp_path):
    result = runner.invoke(args=['simulate'])
    assert result.exit_code == 2
    assert 'No plan given' in result.output
    plan = write_json(
        tmp_path / 'bad.json', {**plan_dict, 'points': [{'n': 10}]}
    )
    result = runner.invoke(args=['simulate', '--plan', plan])
    assert result.exit_code == 2


def test_simulate_config_plan(runner, plan_dict, tmp_path):
    config = write_json(tmp_path / 'config.json', {'plan': plan_dict})
    out = tmp_path / 'plan.csv'
    result = runner.invoke(args=[
        '--config', config, 'simulate', '-o', str(out)
    ])
    assert result.exit_code == 0
    assert len(read_rows(out)) == 6


def test_check_convergence(runner, tmp_path):
    out = tmp_path / 'convergence.csv'
    result = runner.invoke(args=[
        'simulate', '--check', 'convergence', '-p', GAUSSIAN, '-b', '1',
        '-b', '2', '-t', '2000', '-o', str(out)
    ])
    assert result.exit_code == 0
    assert read_lines(out)[1] == ','.join(CONVERGENCE_COLUMNS)
    rows = read_rows(out)
    assert [float(r['boundary']) for r in rows] == [1.0, 1.0, 2.0, 2.0]
    assert all(int(r['trials']) == 2000 for r in rows)


def test_check_rogozin(runner, tmp_path):
    out = tmp_path / 'rogozin.csv'
    result = runner.invoke(args=[
        'simulate', '--check', 'rogozin', '-p', EXPONENTIAL, '-n', '1',
        '-n', '4', '-t', '2000', '-o', str(out)
    ])
    assert result.exit_code == 0
    assert read_lines(out)[1] == ','.join(ROGOZIN_COLUMNS)
    rows = read_rows(out)
    assert [r['n'] for r in rows] == ['1', '4']


def test_check_change_of_measure(runner, tmp_path):
    out = tmp_path / 'change.csv'
    result = runner.invoke(args=[
        'simulate', '--check', 'change-of-measure', '-p', GAUSSIAN, '-b', '2',
        '--gamma', '1', '--gamma', '5', '-t', '2000', '-o', str(out)
    ])
    assert result.exit_code == 0
    rows = read_rows(out)
    assert [float(r['gamma']) for r in rows] == [1.0, 5.0]
    assert all(r['holds'] == 'true' for r in rows)


@pytest.mark.parametrize('args', [
    ['-c', 'prob', '--eps', '0.2', '--eta', '0.05', '-n', '100'],
    ['-c', 'expect', '--eta', '1', '-n', '50'],
])
def test_check_achievability(runner, tmp_path, args):
    out = tmp_path / 'achievability.csv'
    result = runner.invoke(args=[
        'simulate', '--check', 'achievability', '-p', GAUSSIAN, *args,
        '-t', '2000', '-o', str(out)
    ])
    assert result.exit_code == 0
    assert read_lines(out)[1] == ','.join(ACHIEVABILITY_COLUMNS)
    (row,) = read_rows(out)
    assert row['constraint_holds'] == 'true'
    assert row['exponent_holds'] == 'true'


@pytest.mark.parametrize('args', [
    ['-c', 'prob', '-n', '100'],
    ['--eps', '0.2', '-n', '100'],
    ['-c', 'prob', '--eps', '0.2', '--eta', '0.3', '-n', '100'],
])
def test_check_achievability_bad_args(runner, args):
    result = runner.invoke(args=[
        'simulate', '--check', 'achievability', '-p', GAUSSIAN, *args
    ])
    assert result.exit_code == 2
    assert 'Simulation failed' in result.output


def test_check_without_pair(runner):
    result = runner.invoke(args=['simulate', '--check', 'rogozin'])
    assert result.exit_code == 2
    assert 'Simulation failed' in result.output


def test_figure_gaussian(runner, tmp_path):
    out = tmp_path / 'figure.csv'
    result = runner.invoke(args=[
        'figure', 'gaussian', '-g', '0.5', '-g', '1', '-o', str(out)
    ])
    assert result.exit_code == 0
    rows = read_rows(out)
    assert len(rows) == 22
    for param in ('0.5', '1.0'):
        values = [
            float(r['F_value']) for r in rows if r['family_param'] == param
        ]
        assert len(values) == 11
        assert max(values) - min(values) <= 1e-6


def test_figure_exponential_flagged(runner, tmp_path):
    out = tmp_path / 'figure.json'
    result = runner.invoke(args=[
        'figure', 'exponential', '-g', '0.5', '-g', '0.99', '-l', '0',
        '-l', '1', '-f', 'json', '-o', str(out)
    ])
    assert result.exit_code == 0
    assert 'Flagged exponential 0.99' in result.output
    d = read_json(out)
    assert d['flagged'] == [0.99]
    assert [r['family_param'] for r in d['rows']] == [0.5, 0.5]
    result = runner.invoke(args=['figure', 'exponential', '-g', '0.99'])
    assert result.exit_code == 3
    assert 'Figure failed' in result.output


def test_config_file(runner, tmp_path):
    config = write_json(
        tmp_path / 'config.json',
        {'pair': {'kind': 'gaussian', 'theta0': 0.0, 'theta1': 2.0}}
    )
    out = tmp_path / 'moments.csv'
    result = runner.invoke(args=[
        '--config', config, 'moments', '-o', str(out)
    ])
    assert result.exit_code == 0
    assert float(read_rows(out)[0]['D0']) == pytest.approx(2.0)
    result = runner.invoke(args=[
        '--config', config, 'moments', '-p', GAUSSIAN, '-o', str(out)
    ])
    assert float(read_rows(out)[0]['D0']) == pytest.approx(0.5)


@pytest.mark.parametrize('document', [{'color': 'blue'}, {'trials': 0}])
def test_config_file_invalid(runner, tmp_path, document):
    config = write_json(tmp_path / 'config.json', document)
    result = runner.invoke(args=['--config', config, 'moments'])
    assert result.exit_code == 2
    assert 'Configuration failed' in result.output


def test_log_level(runner, tmp_path):
    out = tmp_path / 'moments.csv'
    result = runner.invoke(args=[
        '--log-level', 'debug', 'moments', '-p', GAUSSIAN, '-o', str(out)
    ])
    assert result.exit_code == 0


@pytest.mark.multi
def test_simulate_workers(runner, plan_file, tmp_path):
    single = tmp_path / 'single.csv'
    multi = tmp_path / 'multi.csv'
    runner.invoke(args=['simulate', '--plan', plan_file, '-o', str(single)])
    result = runner.invoke(args=[
        'simulate', '--plan', plan_file, '-w', '8', '-o', str(multi)
    ])
    assert result.exit_code == 0
    assert read_lines(single) == read_lines(multi)
