"""Panel container, initiation scans, and the long-format CSV round trip."""

import io

import numpy as np
import pytest
from hypothesis import example, given, settings
from hypothesis import strategies as st

from didsnmm.errors import DataError
from didsnmm.panel import (NEVER, PanelDataset, initiation_time,
                           initiation_times, is_staggered_adoption,
                           load_panel_csv, panel_to_csv_bytes,
                           write_panel_csv)

from conftest import make_panel


def test_geometry_properties():
    p = make_panel(np.zeros((3, 4)), np.zeros((3, 4)), np.zeros((3, 4, 2)))
    assert p.n_subjects == 3
    assert p.n_periods == 4
    assert p.horizon == 3
    assert p.n_treatment_components == 1
    assert p.n_covariates == 2
    assert p.time_labels == (0, 1, 2, 3)


def test_time_index_labels():
    p = make_panel(np.zeros((2, 3)), np.zeros((2, 3)), time0=1995)
    assert p.time_index(1995) == 0
    assert p.time_index(1997) == 2
    with pytest.raises(DataError, match="time label 1999 not in panel range"):
        p.time_index(1999)


def _raw(y, a, z, ids=("a", "b"), labels=(0, 1)):
    return dict(outcomes=y, treatments=a, covariates=z, subject_ids=ids,
                time_labels=labels, treatment_names=("t",),
                covariate_names=())


def test_constructor_validation():
    y = np.zeros((2, 2))
    a = np.zeros((2, 2, 1))
    z = np.zeros((2, 2, 0))
    with pytest.raises(DataError, match="outcomes must be 2-d"):
        PanelDataset(**{**_raw(y, a, z), "outcomes": np.zeros(3)})
    with pytest.raises(DataError, match="treatments must have shape"):
        PanelDataset(**{**_raw(y, a, z), "treatments": np.zeros((2, 3, 1))})
    with pytest.raises(DataError, match="unique"):
        PanelDataset(**{**_raw(y, a, z), "subject_ids": ("a", "a")})
    with pytest.raises(DataError, match="consecutive"):
        PanelDataset(**{**_raw(y, a, z), "time_labels": (0, 2)})
    with pytest.raises(DataError, match="must be integers"):
        PanelDataset(**{**_raw(y, a, z), "time_labels": (0.0, 0.5)})
    bad = y.copy()
    bad[1, 0] = np.nan
    with pytest.raises(DataError, match="subject index 1, period index 0"):
        PanelDataset(**{**_raw(bad, a, z)})


def test_take_resampling():
    p = make_panel(np.arange(6.0).reshape(3, 2), np.zeros((3, 2)))
    sub = p.take([2, 0, 2])
    assert sub.n_subjects == 3
    assert np.array_equal(sub.outcomes, p.outcomes[[2, 0, 2]])
    # duplicated source rows still get unique ids
    assert len(set(sub.subject_ids)) == 3
    named = p.take([1], ids=("only",))
    assert named.subject_ids == ("only",)


def test_history_view_stops_before_m():
    y = np.arange(8.0).reshape(2, 4)
    a = np.arange(8.0).reshape(2, 4)
    z = np.arange(16.0).reshape(2, 4, 2)
    p = make_panel(y, a, z)
    h = p.history(1, 2)
    # covariates run through m; outcomes/treatments stop at m-1
    assert np.array_equal(h.covariate_history, z[1, :3])
    assert np.array_equal(h.outcome_history, y[1, :2])
    assert np.array_equal(h.treatment_history, a[1, :2, None])
    assert np.array_equal(h.current_treatment, a[1, 2, None])
    h0 = p.history(0, 0)
    assert h0.outcome_history.shape == (0,)
    assert h0.treatment_history.shape == (0, 1)
    assert h0.covariate_history.shape == (1, 2)
    with pytest.raises(DataError, match="period index 4"):
        p.history(0, 4)
    with pytest.raises(DataError, match="subject index 2"):
        p.history(2, 0)


def test_never_is_a_singleton():
    assert repr(NEVER) == "NEVER"
    assert type(NEVER)() is NEVER
    import pickle

    assert pickle.loads(pickle.dumps(NEVER)) is NEVER


@given(st.lists(st.lists(st.integers(0, 1), min_size=4, max_size=4),
                min_size=1, max_size=6))
def test_initiation_scan_matches_loop_oracle(paths):
    a = np.array(paths, dtype=float)
    p = make_panel(np.zeros_like(a), a, time0=2000)
    got = initiation_times(p)
    for i, row in enumerate(paths):
        first = next((j for j, v in enumerate(row) if v != 0), None)
        if first is None:
            assert got[i].time is NEVER and got[i].index is NEVER
            assert got[i].value is None
        else:
            assert got[i].index == first
            assert got[i].time == 2000 + first
            assert got[i].value.tolist() == [1.0]
        assert initiation_time(p, i) == got[i]


def test_initiation_uses_any_component():
    a = np.zeros((1, 3, 2))
    a[0, 1, 1] = 1.0  # second component fires first
    p = PanelDataset(np.zeros((1, 3)), a, np.zeros((1, 3, 0)), ("s",),
                     (0, 1, 2), ("u", "v"), ())
    t = initiation_time(p, 0)
    assert t.index == 1
    assert t.value.tolist() == [0.0, 1.0]


@given(st.lists(st.lists(st.sampled_from([0.0, 1.0]), min_size=3, max_size=3),
                min_size=1, max_size=5))
@example([[0.0, 1.0, 0.0]])
@example([[1.0, 1.0, 1.0], [0.0, 0.0, 1.0]])
def test_is_staggered_matches_brute_force(paths):
    a = np.array(paths)
    p = make_panel(np.zeros_like(a), a)
    expected = all(
        row[j] <= row[j + 1] for row in paths for j in range(len(row) - 1)
    )
    assert is_staggered_adoption(p) == expected


def test_is_staggered_rejects_nonbinary():
    p = make_panel(np.zeros((1, 2)), np.array([[0.0, 2.0]]))
    assert not is_staggered_adoption(p)


finite = st.floats(allow_nan=False, allow_infinity=False, width=32)


@settings(max_examples=40, deadline=None)
@given(
    st.integers(1, 4), st.integers(2, 4), st.integers(0, 2),
    st.integers(-3, 2020), st.data(),
)
def test_csv_round_trip_is_byte_stable(n, periods, p_cov, time0, data):
    y = np.array(data.draw(st.lists(
        st.lists(finite, min_size=periods, max_size=periods),
        min_size=n, max_size=n)))
    a = np.array(data.draw(st.lists(
        st.lists(st.sampled_from([0.0, 1.0, 2.5]), min_size=periods,
                 max_size=periods), min_size=n, max_size=n)))
    z = np.array(data.draw(st.lists(
        st.lists(st.lists(finite, min_size=p_cov, max_size=p_cov),
                 min_size=periods, max_size=periods),
        min_size=n, max_size=n))).reshape(n, periods, p_cov)
    panel = make_panel(y, a, z, time0=time0)

    first = panel_to_csv_bytes(panel)
    reloaded = load_panel_csv(io.StringIO(first.decode()))
    second = panel_to_csv_bytes(reloaded)
    assert first == second
    assert np.array_equal(reloaded.outcomes, panel.outcomes)
    assert np.array_equal(reloaded.treatments, panel.treatments)
    assert np.array_equal(reloaded.covariates, panel.covariates)
    assert reloaded.subject_ids == panel.subject_ids
    assert reloaded.time_labels == panel.time_labels


def test_write_canonicalizes_subject_order(tmp_path):
    p = PanelDataset(np.array([[1.0], [2.0]]), np.zeros((2, 1, 1)),
                     np.zeros((2, 1, 0)), ("zz", "aa"), (0,), ("t",), ())
    path = tmp_path / "panel.csv"
    write_panel_csv(p, str(path))
    back = load_panel_csv(str(path))
    assert back.subject_ids == ("aa", "zz")
    assert back.outcomes[:, 0].tolist() == [2.0, 1.0]
    # a second pass through the canonical order is a fixed point
    assert panel_to_csv_bytes(back) == path.read_bytes()


def _csv(text):
    return io.StringIO(text.strip() + "\n")


def test_load_errors_name_the_defect():
    with pytest.raises(DataError, match="empty CSV"):
        load_panel_csv(io.StringIO(""))
    with pytest.raises(DataError, match="duplicate column names"):
        load_panel_csv(_csv("subject_id,time,y,y"))
    with pytest.raises(DataError, match="cannot infer a role for column 'w'"):
        load_panel_csv(_csv("subject_id,time,y,w\ns,0,1.0,2.0"))
    with pytest.raises(DataError, match="no column mapped to role 'outcome'"):
        load_panel_csv(_csv("subject_id,time,a_x\ns,0,1.0"))
    with pytest.raises(DataError, match="header but no data rows"):
        load_panel_csv(_csv("subject_id,time,y"))
    with pytest.raises(DataError, match="duplicate row for subject 's', time 0"):
        load_panel_csv(_csv("subject_id,time,y\ns,0,1.0\ns,0,2.0"))
    with pytest.raises(DataError, match=r"period grid has gaps: \[0, 2\]"):
        load_panel_csv(_csv("subject_id,time,y\ns,0,1.0\ns,2,2.0"))
    with pytest.raises(DataError, match="subject 'b' has no row at time 1"):
        load_panel_csv(_csv(
            "subject_id,time,y\na,0,1.0\na,1,1.0\nb,0,1.0"))
    with pytest.raises(DataError, match="line 3 .* not numeric"):
        load_panel_csv(_csv("subject_id,time,y\ns,0,1.0\ns,1,oops"))
    with pytest.raises(DataError, match="line 2: time 'x' is not an integer"):
        load_panel_csv(_csv("subject_id,time,y\ns,x,1.0"))
    with pytest.raises(DataError, match="line 2: expected 3 fields, got 2"):
        load_panel_csv(_csv("subject_id,time,y\ns,0"))
    with pytest.raises(DataError, match="value is not finite"):
        load_panel_csv(_csv("subject_id,time,y\ns,0,inf"))


def test_role_inference_aliases_and_schema():
    text = "unit,year,outcome,a_d,z_x\nu1,1990,3.5,0.0,1.25"
    p = load_panel_csv(_csv(text))
    assert p.treatment_names == ("d",)
    assert p.covariate_names == ("x",)
    assert p.time_labels == (1990,)
    assert p.outcomes[0, 0] == 3.5

    schema = {"col1": "subject", "col2": "time", "col3": "outcome",
              "col4": "treatment:d", "col5": "ignore"}
    q = load_panel_csv(_csv("col1,col2,col3,col4,col5\nu,0,1.0,1.0,junk"),
                       schema=schema)
    assert q.treatment_names == ("d",)
    assert q.n_covariates == 0
    with pytest.raises(DataError, match="schema refers to absent columns"):
        load_panel_csv(_csv("col1\nv"), schema={"nope": "subject"})


def test_zero_covariate_panels_load():
    p = load_panel_csv(_csv("subject_id,time,y,a_d\ns,0,1.0,0.0\ns,1,2.0,1.0"))
    assert p.n_covariates == 0
    assert p.covariates.shape == (1, 2, 0)


# -- the adoption histogram from the bank-deregulation panel layout ----------
#
# 1043 subjects on a 1995..2001 grid with initiation counts
# {1995: 2, 1996: 246, 1997: 119, 1998: 416, 2000: 77, 2001: 55} and 128
# never-adopters; nobody initiates in 1999.

ADOPTION_COUNTS = {1995: 2, 1996: 246, 1997: 119, 1998: 416,
                   2000: 77, 2001: 55, "never": 128}


def _adoption_csv():
    rows = ["subject_id,time,y,a_open"]
    sid = 0
    for start, count in sorted(ADOPTION_COUNTS.items(), key=lambda kv: str(kv[0])):
        for _ in range(count):
            for t in range(1995, 2002):
                on = 0.0 if start == "never" else float(t >= start)
                rows.append(f"b{sid:04d},{t},{sid % 7 + 0.5 * (t - 1995)},{on}")
            sid += 1
    return "\n".join(rows)


def test_adoption_histogram_on_staggered_csv():
    panel = load_panel_csv(_csv(_adoption_csv()))
    assert panel.n_subjects == 1043
    assert panel.time_labels == tuple(range(1995, 2002))
    assert is_staggered_adoption(panel)

    hist = {}
    for t in initiation_times(panel):
        key = "never" if t.time is NEVER else t.time
        hist[key] = hist.get(key, 0) + 1
    assert hist == ADOPTION_COUNTS
    assert 1999 not in hist
    assert sum(hist.values()) == 1043
