import math

import numpy as np
import pytest

from adaptstress.data import (CATALOG, Cohort, Flag, LoadError, SchemaError, TARGET, load_cohort,
                              read_participant_csv, validate_against_catalog, write_cohort)
from helpers import csv_text, make_series


def test_catalog_shape():
    assert len(CATALOG) == 23
    assert len(CATALOG.predictors) == 22
    assert CATALOG.abbreviations[-1] == TARGET == "SS"
    assert len(set(CATALOG.abbreviations)) == 23
    assert all(e.low < e.high for e in CATALOG.entries)
    assert (CATALOG["RH"].low, CATALOG["RH"].high) == (45, 76)
    assert (CATALOG["SS"].low, CATALOG["SS"].high) == (0, 95)


def test_gap_filled_and_missing_tokens(tmp_path):
    f = tmp_path / "P01.csv"
    f.write_text(csv_text({"2024-01-01": {"SS": "-2"}, "2024-01-02": {"SS": "47.5", "RH": "NaN"},
                           "2024-01-04": {"RH": "", "TK": "-1"}}))
    s = read_participant_csv(f)
    assert len(s) == 4
    ss, rh = CATALOG.index("SS"), CATALOG.index("RH")
    assert math.isnan(s.values[0, ss]) and s.flags[0, ss] == Flag.MISSING_RAW
    assert s.values[1, ss] == 47.5 and s.flags[1, ss] == Flag.OK
    assert math.isnan(s.values[1, rh])
    assert np.isnan(s.values[2]).all() and (s.flags[2] == Flag.MISSING_RAW).all()
    assert math.isnan(s.values[3, CATALOG.index("TK")])
    assert s.participant_id == "P01"


def test_schema_and_load_errors(tmp_path):
    bad_col = tmp_path / "a.csv"
    bad_col.write_text(csv_text({"2024-01-01": {}}).replace("SS", "XX", 1))
    with pytest.raises(SchemaError):
        read_participant_csv(bad_col)
    dup = tmp_path / "b.csv"
    body = csv_text({"2024-01-01": {}})
    dup.write_text(body + body.splitlines()[1] + "\n")
    with pytest.raises(SchemaError):
        read_participant_csv(dup)
    broken = tmp_path / "c.csv"
    broken.write_text(csv_text({"2024-01-01": {}, "2024-01-02": {"RH": "abc"}}))
    with pytest.raises(LoadError, match=r"c\.csv:3"):
        read_participant_csv(broken)


def test_cohort_round_trip(tmp_path):
    a = make_series("P01", 5, columns={"RH": [60, np.nan, 61, 62, 63]})
    b, c = make_series("P02", 6, 2.0), make_series("P03", 4, 3.0)
    cohort = Cohort([a, b, c])
    write_cohort(cohort, tmp_path)
    back = load_cohort(tmp_path)
    assert back.equals(cohort)
    assert back.ids == ["P01", "P02", "P03"]


def test_cohort_needs_three_unique():
    with pytest.raises(ValueError):
        Cohort([make_series("P01"), make_series("P02")])
    with pytest.raises(ValueError):
        Cohort([make_series("P01"), make_series("P01"), make_series("P02")])


def test_range_validation():
    ok = make_series("P01", 3, 50.0, columns={"RH": [60, 200, np.nan]})
    cohort = Cohort([ok, make_series("P02", 3, 50.0), make_series("P03", 3, 50.0)])
    found = [(v.participant_id, v.abbreviation, v.value) for v in validate_against_catalog(cohort)
             if v.abbreviation == "RH"]
    assert found == [("P01", "RH", 200.0)]
