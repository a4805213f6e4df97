import numpy as np
import pytest
from scipy.sparse.csgraph import connected_components

from amplab.config import ExperimentSpec, NumericSettings
from amplab.errors import DomainError
from amplab.experiments import (random_metzler, random_nonnegative, engineered_violation, run_equivalence_suite,
                                run_expansion_check, rank_one_left_width, run_concentration_study,
                                boundary_bumps, centred_bumps, ThresholdCell, run_threshold_study,
                                power_resolvent_positivity, covering_search, covered_by_samples,
                                planted_family, run_covering_trials, run_window_scan, run_smoothing_study,
                                run_experiment, smooth_nonnegative, bubble_weight, bump_widths, bump_exponent,
                                EXPANSION_LIMIT)
from amplab.operators import build_laplacian, GridSpace, BoundaryCondition


def test_random_metzler_is_irreducible(rng):
    for side in (1, 5, 17):
        op = random_metzler(rng, side)
        assert op.is_metzler()
        count, _ = connected_components(op.matrix, directed=True, connection='strong')
        assert count == 1


def test_random_nonnegative_kinds(rng):
    space = GridSpace.discrete(20)
    assert np.all(random_nonnegative(rng, space) >= 0)
    single = random_nonnegative(rng, space, 'bump')
    assert single.sum() == 1.0
    wide = random_nonnegative(rng, space, 'bump', radius=0.2)
    assert wide.sum() > 1.0
    assert np.array_equal(random_nonnegative(rng, space, 'ones'), np.ones(20))
    with pytest.raises(DomainError):
        random_nonnegative(rng, space, 'sawtooth')


def test_engineered_violation_is_not_simple(rng):
    op, block = engineered_violation(rng, 6)
    assert op.side == 12
    assert block.side == 6
    dense = op.to_dense()
    assert np.array_equal(dense[:6, :6], dense[6:, 6:])
    assert not np.any(dense[:6, 6:]) and not np.any(dense[6:, :6])
    top = np.sort(np.linalg.eigvals(dense).real)[-2:]
    assert top[0] == pytest.approx(top[1], rel=1e-8, abs=1e-10)


def test_small_equivalence_suite():
    suite = run_equivalence_suite(seed=3, count=5, sizes=(5, 12), f_count=2, violations=2)
    assert len(suite.cases) == 7
    assert suite.pass_rate == 1.0
    assert suite.detection_rate == 1.0
    assert [case.kind for case in suite.cases].count('violation') == 2
    assert all(case.kind == 'metzler' for case in suite.counterexamples)


def test_equivalence_suite_on_twenty_matrices():
    suite = run_equivalence_suite(seed=11, count=20, sizes=(5, 50), f_count=2, violations=2)
    assert len(suite.cases) == 22
    assert max(case.side for case in suite.cases if case.kind == 'metzler') <= 50
    assert suite.pass_rate == 1.0
    assert suite.detection_rate == 1.0


def test_expansion_check_on_twenty_matrices():
    results = run_expansion_check(seed=2, count=20, max_side=50)
    assert len(results) == 20 * 5 + 5
    assert all(check.residual <= EXPANSION_LIMIT for _, check in results)


def test_equivalence_suite_needs_cases():
    with pytest.raises(DomainError):
        run_equivalence_suite(count=0)


def test_expansion_check_residuals():
    results = run_expansion_check(seed=1, count=3, max_side=10)
    assert len(results) == 3 * 5 + 5
    assert all(check.residual <= EXPANSION_LIMIT for _, check in results)
    rank_one = [check for label, check in results if label == 'rank_one-32']
    assert [check.m for check in rank_one] == [0, 1, 2, 3, 4]
    assert rank_one[-1].points == (1.0, 2.0, 3.0, 4.0)


def _indicators(side, counts):
    bumps = []
    for count in counts:
        f = np.zeros(side)
        f[:count] = 1.0
        bumps.append(f)
    return bumps


def test_rank_one_widths_follow_closed_form(rank_one):
    bumps = _indicators(64, [24, 12, 6, 3])
    result = run_concentration_study(rank_one, bumps)
    closed = [rank_one_left_width(f, rank_one.space.weights) for f in bumps]
    assert closed == pytest.approx([0.375, 0.1875, 0.09375, 0.046875])
    for delta, width in zip(result.widths, closed):
        # within one ladder step at four offsets per octave
        assert delta <= width < delta * 2 ** 0.25
    assert result.rho == pytest.approx(-1.0)
    assert result.decreasing


def test_constant_widths_have_no_trend(rank_one):
    result = run_concentration_study(rank_one, [np.ones(64), 2 * np.ones(64)], count=20)
    assert np.isnan(result.rho)
    assert not result.decreasing


def test_bump_families_are_normalized():
    op = build_laplacian(2, 15, 'dirichlet')
    weights = op.space.weights
    for bumps in (boundary_bumps(op.space, 1.0, [1, 2, 3]), centred_bumps(op.space, 1.0, [1, 2, 3])):
        assert len(bumps) == 3
        for bump in bumps:
            assert np.sum(weights * bump) == pytest.approx(1.0)
    # the level-2 boundary ball sits at x_1 = 1/4 with radius 1/8
    support = op.space.nodes[boundary_bumps(op.space, 1.0, [2])[0] > 0]
    assert np.all(np.abs(support[:, 0] - 0.25) <= 0.125 + 1e-12)


def test_threshold_study_with_small_cells():
    robin = {'d': 1, 'bc': 'robin', 'beta': 1.0}
    cells = [
        ThresholdCell('robin-small', 1, 2.0, 1, 'laplacian', robin, [20, 40], windows=True),
        ThresholdCell('skip', 3, 2.0, 1, 'dtn', {'d': 3}, [], skip_reason='not resolvable'),
        ThresholdCell('broken', 5, 2.0, 1, 'laplacian', {'d': 5, 'bc': 'dirichlet'}, [5, 9]),
    ]
    rows = run_threshold_study(cells, seed=1)
    robust, skipped, broken = rows
    assert robust.verdict == 'robust' and robust.windows and robust.matches
    assert skipped.skipped and skipped.matches and skipped.note == 'not resolvable'
    assert broken.skipped and broken.note.startswith('error')


def test_threshold_study_records_power_and_bump_columns():
    robin = {'d': 1, 'bc': 'robin', 'beta': 1.0}
    cells = [
        ThresholdCell('power-small', 1, 2.0, 2, 'power', {'base_family': 'laplacian', 'base_params': robin, 'k': 2},
                      [20, 40]),
        ThresholdCell('dirichlet-3d-small', 3, 3.0, 1, 'laplacian', {'d': 3, 'bc': 'dirichlet'}, [7, 15],
                      mode='probe', sigma=0.0),
    ]
    power, dirichlet = run_threshold_study(cells, seed=2)
    assert power.power_profile and all(holds for _, holds in power.power_profile)
    assert power.bump_exponent is None
    assert np.isfinite(dirichlet.bump_exponent)
    assert dirichlet.power_profile is None


def test_bump_widths_stop_at_two_cells():
    assert bump_widths(1 / 32) == pytest.approx([0.125, 0.125 / np.sqrt(2), 0.0625])
    assert len(bump_widths(1.0)) == 2


def test_bump_exponent_in_one_dimension_decays():
    # ||Res f_w||_inf ~ G(x, x) 2w against ||f_w||_2 = sqrt(2w)
    op = build_laplacian(1, 401, BoundaryCondition.robin(1.0))
    slope, rows = bump_exponent(op, 2.0, 1.0)
    assert len(rows) == len(bump_widths(op.space.h))
    assert -0.75 < slope < -0.25


def test_smooth_nonnegative_is_mesh_independent():
    rule = smooth_nonnegative(4, 3)
    coarse = build_laplacian(1, 25, BoundaryCondition.robin(1.0)).space
    fine = build_laplacian(1, 49, BoundaryCondition.robin(1.0)).space
    for f_coarse, f_fine in zip(rule(coarse), rule(fine)):
        assert np.all(f_coarse >= 0)
        assert np.allclose(f_coarse, f_fine[::2])
    assert len(rule(coarse)) == 3


def test_bubble_weight_is_h_on_the_boundary():
    space = build_laplacian(2, 11, BoundaryCondition.neumann()).space
    u = bubble_weight(space)
    assert np.allclose(u[space.boundary_nodes], space.h)
    assert u.max() == pytest.approx(1.0 + space.h)


def test_power_resolvent_is_positive_between_bound_and_zero(robin_1d):
    profile = power_resolvent_positivity(robin_1d, 2, [np.ones(robin_1d.side)], count=4)
    assert len(profile) == 4
    assert profile[-1][0] == 0.0
    assert all(holds for _, holds in profile)


def test_covering_search_finds_planted_member(rng):
    family, spanning, planted = planted_family(rng)
    result = covering_search(family, spanning, rng)
    assert result.index == planted
    assert result.hypothesis_holds
    assert result.counterexample is None
    assert result.ranks[-1] == 4
    assert covered_by_samples(family, spanning, rng)


def test_covering_search_returns_counterexample(rng):
    spanning = np.eye(5)[:, :3]
    result = covering_search([np.eye(5), 2 * np.eye(5)], spanning, rng)
    assert result.index is None
    assert not result.hypothesis_holds
    assert result.counterexample.shape == (5,)
    assert result.ranks == [5, 5]
    assert not covered_by_samples([np.eye(5)], spanning, rng)


def test_covering_search_needs_family():
    with pytest.raises(DomainError):
        covering_search([], np.eye(3))


def test_covering_trials_agree():
    rows = run_covering_trials(seed=2, trials=10)
    assert len(rows) == 10
    assert all(row['found'] == row['planted'] for row in rows)
    assert all(row['agrees'] for row in rows)


def test_run_window_scan_with_ladder_length(rank_one):
    report, window = run_window_scan(rank_one, np.ones(64), 'left', count=6)
    assert report.lambda0 == pytest.approx(0.0, abs=1e-10)
    assert len(window.profile) == 6
    assert window.delta == pytest.approx(0.5)


def test_run_smoothing_study_uses_geometric_ladder(rank_one):
    fit = run_smoothing_study(rank_one, 2.0, count=6)
    assert [row['t'] for row in fit.table] == pytest.approx(np.geomspace(1e-3, 1e-1, 6))


def test_window_scan_record_carries_pole_order():
    spec = ExperimentSpec.from_dict({'kind': 'window_scan', 'family': 'rank_one', 'params': {'n': 16},
                                     'f_gen': {'kind': 'ones'}})
    record = run_experiment(spec, NumericSettings())
    pole = [step for step in record.steps if 'pole_order' in step]
    assert pole[0]['pole_order'] == 1
    assert pole[0]['remainder'] <= 1e-10


def test_smoothing_record_carries_laplace_certificate():
    spec = ExperimentSpec.from_dict({'kind': 'smoothing_study', 'family': 'rank_one', 'params': {'n': 16},
                                     'ladder': {'count': 6}})
    record = run_experiment(spec, NumericSettings())
    step = [step for step in record.steps if 'laplace_n' in step][0]
    assert step['laplace_n'] == 1
    assert np.isfinite(step['laplace_value'])
    assert record.verdicts['laplace_finite']


@pytest.mark.parametrize("entry, verdicts", [
    ({'kind': 'window_scan', 'family': 'rank_one', 'params': {'n': 16},
      'ladder': {'side': 'left', 'count': 10}, 'f_gen': {'kind': 'ones'}}, ['window_nonempty']),
    ({'kind': 'expansion_check', 'params': {'count': 2, 'max_side': 8}}, ['residuals_ok']),
    ({'kind': 'covering_search', 'params': {'trials': 3}}, ['planted_found', 'brute_force_agrees']),
    ({'kind': 'smoothing_study', 'family': 'rank_one', 'params': {'n': 16}, 'p': [2.0],
      'ladder': {'count': 6, 'q_range': [-0.05, 0.05]}}, ['power_law', 'q_in_range', 'laplace_finite']),
    ({'kind': 'transfer_check', 'family': 'laplacian', 'params': {'d': 1, 'bc': 'robin', 'beta': 1.0},
      'mesh': [20, 40], 'ladder': {'n_points': 3}, 'f_gen': {'count': 2}}, ['asserted', 'transfer_holds']),
    ({'kind': 'domination_index', 'family': 'laplacian', 'params': {'d': 1, 'bc': 'robin', 'beta': 1.0},
      'mesh': [20, 40], 'p': [2.0], 'ladder': {'expect': 'robust'}}, ['matches_expectation']),
    ({'kind': 'concentration_study', 'family': 'laplacian', 'params': {'d': 1, 'n': 41, 'bc': 'neumann'},
      'ladder': {'levels': [1, 2]}, 'f_gen': {'kind': 'centred'}}, ['bounded_below']),
    ({'kind': 'equivalence_suite', 'params': {'count': 3, 'sizes': [5, 8], 'f_count': 1, 'violations': 1}},
     ['metzler_pass', 'violations_detected']),
])
def test_run_experiment_dispatch(entry, verdicts):
    record = run_experiment(ExperimentSpec.from_dict(entry), NumericSettings())
    assert sorted(record.verdicts) == sorted(verdicts)
    assert record.passed
    assert record.kind == entry['kind']
    assert record.wall_clock >= 0
    assert record.tables
