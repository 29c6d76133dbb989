import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bwpipe.dataset import ColumnMeta, DataMatrix
from bwpipe.errors import DataError, ImputationError
from bwpipe.imputation import (
    ImputationConfig,
    hybrid_impute,
    impute_chains,
    knn_impute_discrete,
    mask_known_entries,
    mice_impute_continuous,
)

from oracles import (
    correlated_cohort,
    imputed_accuracy,
    imputed_rmse,
    mean_fill_rmse,
    mode_fill_accuracy,
)

CFG = ImputationConfig(seed=1)


def masked_fixture(seed, rate=0.1, mechanism="mar", n=300):
    full = correlated_cohort(n, 8, 3, 0.7, seed)
    masked, cells = mask_known_entries(full, rate, mechanism, seed=seed + 100)
    return full, masked, cells


def test_config_validation():
    for bad in (dict(mice_cycles=0), dict(pmm_donors=0), dict(knn_k=0)):
        with pytest.raises(DataError):
            ImputationConfig(**bad)


# -- KNN -------------------------------------------------------------------------------

def test_knn_unique_nearest_neighbour_copied():
    vals = np.array([
        [0.0, 0.0, 1.0],
        [0.0, 0.0, np.nan],
        [5.0, 5.0, 2.0],
        [9.0, -4.0, 3.0],
    ])
    meta = [ColumnMeta.for_kind("continuous")] * 2 + [ColumnMeta.for_kind("discrete")]
    out = knn_impute_discrete(DataMatrix(vals, None, None, meta), ImputationConfig(knn_k=1))
    assert out.to_array()[1, 2] == 1.0


def test_knn_mode_ties_go_to_smallest():
    vals = np.array([[0.0, 3.0], [0.0, 1.0], [0.0, np.nan], [10.0, 1.0]])
    meta = [ColumnMeta.for_kind("continuous"), ColumnMeta.for_kind("discrete")]
    out = knn_impute_discrete(DataMatrix(vals, None, None, meta), ImputationConfig(knn_k=2))
    assert out.to_array()[2, 1] == 1.0


def test_knn_identity_without_discrete_gaps():
    full = correlated_cohort(50, 3, 2, 0.5, 0)
    assert knn_impute_discrete(full, CFG) is full


def test_knn_fully_missing_column_is_uninferrable():
    vals = np.array([[1.0, np.nan], [2.0, np.nan], [3.0, np.nan]])
    meta = [ColumnMeta.for_kind("continuous"), ColumnMeta.for_kind("discrete")]
    with pytest.raises(ImputationError, match="uninferrable"):
        knn_impute_discrete(DataMatrix(vals, None, None, meta), CFG)


def test_knn_no_shared_coordinates_falls_back_to_mode():
    vals = np.array([[np.nan, 2.0], [np.nan, 2.0], [np.nan, 5.0], [1.0, np.nan]])
    meta = [ColumnMeta.for_kind("continuous"), ColumnMeta.for_kind("discrete")]
    diag = {}
    out = knn_impute_discrete(DataMatrix(vals, None, None, meta), CFG, diagnostics=diag)
    assert out.filled(np.nan)[3, 1] == 2.0
    assert diag["knn_fallbacks"]["x1"] == 1


def test_knn_beats_mode_fill():
    wins = 0
    for seed in range(5):
        _, masked, cells = masked_fixture(seed, mechanism="mcar")
        done = hybrid_impute(masked, CFG).completed
        wins += imputed_accuracy(done, masked, cells) > mode_fill_accuracy(masked, cells)
    assert wins == 5


# -- MICE ------------------------------------------------------------------------------

def test_mice_identity_without_gaps():
    full = correlated_cohort(40, 3, 0, 0.5, 1)
    res = mice_impute_continuous(full, CFG)
    assert res.trace == [] and res.completed.equals(full)


def test_mice_requires_complete_discrete():
    _, masked, _ = masked_fixture(0, mechanism="mcar")
    with pytest.raises(ImputationError, match="KNN"):
        mice_impute_continuous(masked, CFG)


def test_mice_needs_ten_observed():
    vals = np.full((20, 2), 1.0)
    vals[:, 0] = np.arange(20)
    vals[:11, 1] = np.nan
    vals[11:, 1] = np.arange(9)
    with pytest.raises(ImputationError, match="fewer than 10"):
        mice_impute_continuous(DataMatrix(vals), CFG)


def test_mice_singular_design_names_column():
    r = np.random.default_rng(0)
    a = r.normal(size=40)
    vals = np.column_stack([a, a, r.normal(size=40)])
    vals[:5, 2] = np.nan
    with pytest.raises(ImputationError, match="x2"):
        mice_impute_continuous(DataMatrix(vals), ImputationConfig(ridge_lambda=0.0))


def test_mice_beats_mean_fill_under_mar():
    wins = 0
    for seed in range(5):
        _, masked, cells = masked_fixture(seed)
        done = hybrid_impute(masked, CFG).completed
        wins += imputed_rmse(done, masked, cells) < mean_fill_rmse(masked, cells)
    assert wins == 5


def test_mice_trace_stabilises():
    _, masked, _ = masked_fixture(3, mechanism="mcar")
    trace = hybrid_impute(masked, ImputationConfig(mice_cycles=8, seed=2)).trace
    assert len(trace) == 8
    assert np.mean(trace[-3:]) < np.mean(trace[:3])


# -- hybrid ----------------------------------------------------------------------------

def test_hybrid_routing_and_complete_identity():
    full, masked, _ = masked_fixture(2, mechanism="mcar")
    res = hybrid_impute(full, CFG)
    assert set(res.per_column_method.values()) == {"none"} and res.completed.equals(full)
    res = hybrid_impute(masked, CFG)
    for j, name in enumerate(masked.column_names):
        gap = not masked.mask[:, j].all()
        want = ("knn" if masked.kind(name) == "discrete" else "mice") if gap else "none"
        assert res.per_column_method[name] == want
    assert res.completed.is_complete


@settings(max_examples=15)
@given(st.integers(0, 2**31 - 1), st.sampled_from(["mcar", "mar", "mnar"]))
def test_hybrid_preserves_observed_and_donates_observed_values(seed, mechanism):
    _, masked, _ = masked_fixture(seed % 1000, rate=0.15, mechanism=mechanism, n=80)
    done = hybrid_impute(masked, ImputationConfig(mice_cycles=3, seed=seed)).completed.to_array()
    src = masked.filled(np.nan)
    m = np.asarray(masked.mask)
    assert np.array_equal(done[m], src[m])
    for j in range(masked.n_cols):
        allowed = set(masked.observed(j).tolist())
        assert set(done[~m[:, j], j].tolist()) <= allowed


def test_hybrid_deterministic():
    _, masked, _ = masked_fixture(4)
    a = hybrid_impute(masked, ImputationConfig(seed=9)).completed.to_array()
    b = hybrid_impute(masked, ImputationConfig(seed=9)).completed.to_array()
    assert np.array_equal(a, b)


def test_fit_rows_isolate_other_rows():
    _, masked, _ = masked_fixture(5)
    fit_rows = np.arange(200)
    a = hybrid_impute(masked, CFG, fit_rows=fit_rows).completed.to_array()
    vals = masked.filled(np.nan).copy()
    vals[200:] = np.where(masked.mask[200:], vals[200:] * 3.0 + 1.0, np.nan)
    shifted = DataMatrix(vals, masked.mask, masked.column_names, masked.column_meta)
    b = hybrid_impute(shifted, CFG, fit_rows=fit_rows).completed.to_array()
    assert np.array_equal(a[:200], b[:200])


def test_chains_differ_by_seed():
    _, masked, _ = masked_fixture(6, mechanism="mcar", n=100)
    a, b = impute_chains(masked, ImputationConfig(mice_cycles=2), 2)
    assert not np.array_equal(a.completed.to_array(), b.completed.to_array())


def test_full_cohort_imputes_quickly():
    import time

    from bwpipe.synthgen import CohortSpec, generate_cohort

    data, _ = generate_cohort(CohortSpec(seed=0))
    t0 = time.perf_counter()
    res = hybrid_impute(data, CFG)
    assert res.completed.is_complete
    assert time.perf_counter() - t0 < 60


# -- masking harness -------------------------------------------------------------------

@pytest.mark.parametrize("rate", [0.0, 0.5, -0.1])
def test_mask_rate_out_of_range(rate):
    with pytest.raises(DataError):
        mask_known_entries(correlated_cohort(20, 3, 0, 0.5, 0), rate)


def test_mask_mcar_realised_rate():
    full = DataMatrix(np.random.default_rng(0).normal(size=(1000, 10)))
    for seed in range(20):
        masked, cells = mask_known_entries(full, 0.1, "mcar", seed=seed)
        assert 0.09 <= len(cells) / 10000 <= 0.11


@pytest.mark.parametrize("mechanism", ["mar", "mnar"])
def test_mask_realised_rate_within_ten_percent(mechanism):
    full = correlated_cohort(1000, 10, 0, 0.5, 1)
    _, cells = mask_known_entries(full, 0.1, mechanism, seed=2)
    assert abs(len(cells) / 10000 - 0.1) <= 0.01


def test_mask_cells_hold_true_values():
    full = correlated_cohort(60, 4, 1, 0.5, 2)
    masked, cells = mask_known_entries(full, 0.2, "mcar", seed=0)
    vals = full.to_array()
    assert all(vals[i, j] == v and not masked.mask[i, j] for i, j, v in cells)
