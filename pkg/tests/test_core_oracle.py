import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from softprbm.core import (
    ActuationKind,
    Condition,
    Curve3,
    ModuleDesign,
    SampleGrid,
    SampleRecord,
    ValidationError,
    enumerate_grid,
    validate_design,
)
from softprbm.oracle import (
    GroundTruthLaw,
    IngestConfig,
    InvariantError,
    NoRootInBracket,
    ParseError,
    SchemaError,
    generate_samples,
    ingest_csv,
    samples_to_csv,
    solve_deflection,
    write_samples_csv,
)
from support import BELLOW_GRID, DESIGN, bisect


# --- designs and grids --------------------------------------------------------------


@pytest.mark.parametrize(
    "R, expected",
    [(5.0, True), (3.0, False), (4.0, True)],
)
def test_validate_design_wall_rule(R, expected):
    assert validate_design(ModuleDesign(3.0, R, 4.0, 1.5)) is expected


def test_design_rejects_nonpositive():
    with pytest.raises(ValidationError):
        ModuleDesign(3.0, -1.0, 4.0, 1.5)


def test_grid_counts():
    g = SampleGrid(0.0, 15.0, 0.5)
    assert len(enumerate_grid(g)) == 31
    assert BELLOW_GRID.ext_levels().size == math.floor(0.02 / 0.0006) + 1 == 34
    assert enumerate_grid(SampleGrid(5.0, 5.0, 1.0)) == [(5.0, 0.0)]


def test_grid_is_order_stable():
    a = enumerate_grid(BELLOW_GRID)
    b = enumerate_grid(SampleGrid(0.0, 15.0, 0.5, 0.0, 0.02, 0.0006, "y"))
    assert a == b
    assert a[0] == (0.0, 0.0) and a[1][0] == 0.0 and a[1][1] > 0.0  # p outer


def test_grid_rejects_bad_step():
    with pytest.raises(ValidationError):
        SampleGrid(0.0, 1.0, 0.0)
    with pytest.raises(ValidationError):
        SampleGrid(1.0, 0.0, 0.5)


def test_free_record_must_be_unloaded():
    with pytest.raises(ValidationError):
        SampleRecord(1.0, 0.1, 0.01, -0.01, Condition.FREE)


def test_curve_arclength_and_degenerate():
    c = Curve3(np.array([[0, 0, 0], [3, 4, 0], [3, 4, 12.0]]))
    assert c.length == pytest.approx(17.0)
    np.testing.assert_allclose(c.normalized_arclength(), [0, 5 / 17, 1])
    with pytest.raises(ValidationError):
        Curve3(np.array([[0, 0, 0], [0, 0, 0.0]]))


def test_kind_parsing():
    assert ActuationKind.parse("Tendon") is ActuationKind.TENDON
    with pytest.raises(ValidationError):
        ActuationKind.parse("hydraulic")


# --- ground-truth laws -------------------------------------------------------------


def test_natural_deflection_matches_closed_form():
    # (2*10 + 1) u + 3 u^2 / 2 = 50, positive root of the quadratic
    law = GroundTruthLaw("separable_linear", (2, 1, 3, 0, 5))
    u = solve_deflection(law, 10.0, 0.0)
    closed = (-21 + math.sqrt(21**2 + 4 * 1.5 * 50)) / 3.0
    assert u == pytest.approx(closed, abs=1e-10)
    assert u == pytest.approx(2.07377, abs=1e-5)
    ref = bisect(lambda v: float(law.effort(10.0, v)), 0.0, 10.0)
    assert u == pytest.approx(ref, abs=1e-10)


def test_unactuated_unloaded_rest():
    law = GroundTruthLaw("separable_linear", (2, 1, 3, 0, 5))
    assert solve_deflection(law, 0.0, 0.0) == pytest.approx(0.0, abs=1e-12)


def test_constrained_record_balances_effort():
    law = GroundTruthLaw("separable_cubic", (0.1, 0.5, 0.2, 0.3, 0.0, 0.4))
    u = solve_deflection(law, 3.0, 0.05)
    assert float(law.effort(3.0, u)) + 0.05 == pytest.approx(0.0, abs=1e-10)


def test_no_root_in_bracket():
    law = GroundTruthLaw("separable_linear", (0, 1, 0, 0, 0), bracket=(-1.0, 1.0))
    with pytest.raises(NoRootInBracket):
        solve_deflection(law, 0.0, 5.0)


def test_law_param_count_checked():
    with pytest.raises(ValidationError):
        GroundTruthLaw("separable_linear", (1, 2, 3))


@settings(max_examples=30, deadline=None)
@given(
    a1=st.floats(0.0, 2.0),
    a0=st.floats(0.1, 2.0),
    e1=st.floats(0.0, 2.0),
    c=st.floats(0.01, 1.0),
)
def test_free_deflection_increases_with_actuation(a1, a0, e1, c):
    law = GroundTruthLaw("separable_linear", (a1, a0, e1, 0.0, c), bracket=(-50.0, 50.0))
    u = [solve_deflection(law, p, 0.0) for p in np.linspace(0.0, 5.0, 6)]
    assert np.all(np.diff(u) > 0)


# --- sample sets -------------------------------------------------------------------


def test_generate_counts_and_records():
    law = GroundTruthLaw("separable_linear", (2, 1, 3, 0, 5), bracket=(-10, 10))
    s = generate_samples(law, BELLOW_GRID, DESIGN)
    assert len(s.free()) == 31
    assert len(s.constrained()) == 31 * 34
    for r in s.constrained()[:50]:
        assert r.tau == -r.ext
        assert float(law.effort(r.p, r.u)) + r.ext == pytest.approx(0.0, abs=1e-9)
    assert s.provenance["source"] == "synthetic"


def test_generate_is_deterministic_with_noise():
    law = GroundTruthLaw("separable_linear", (2, 1, 3, 0, 5), noise_std=0.01, seed=7)
    g = SampleGrid(0.0, 3.0, 1.0, 0.0, 0.01, 0.005)
    a = generate_samples(law, g, DESIGN)
    b = generate_samples(law, g, DESIGN)
    assert samples_to_csv(a) == samples_to_csv(b)
    clean = generate_samples(GroundTruthLaw("separable_linear", (2, 1, 3, 0, 5)), g, DESIGN)
    assert samples_to_csv(a) != samples_to_csv(clean)


def test_csv_round_trip_is_byte_exact(tmp_path):
    law = GroundTruthLaw("nonseparable", (0.1, 0.5, 0.2, 0.05, 0.3))
    s = generate_samples(law, SampleGrid(0.0, 4.0, 1.0, 0.0, 0.02, 0.005), DESIGN, "tendon")
    path = write_samples_csv(s, tmp_path / "s.csv")
    back = ingest_csv(path)
    assert back.kind is ActuationKind.TENDON
    assert back.design == DESIGN
    assert samples_to_csv(back) == path.read_text()
    assert back.provenance["source"] == "ingested"


def _write(tmp_path, text, name="f.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


HEAD = "# kind=pressure\n# r=3\n# R=6\n# l=5\n# t=1.5\n"


def test_ingest_free_only_file(tmp_path):
    rows = "".join(f"y,free,{0.5 * i},{0.01 * i},0,0\n" for i in range(31))
    s = ingest_csv(_write(tmp_path, HEAD + "axis,condition,p,u,ext,tau\n" + rows))
    assert len(s) == 31


def test_ingest_orphan_constrained_row(tmp_path):
    text = HEAD + "axis,condition,p,u,ext,tau\ny,free,0,0,0,0\ny,constrained,1.0,0.1,0.01,-0.01\n"
    with pytest.raises(InvariantError, match="row"):
        ingest_csv(_write(tmp_path, text))


def test_ingest_empty_file(tmp_path):
    with pytest.raises(SchemaError):
        ingest_csv(_write(tmp_path, ""))


def test_ingest_bad_number_reports_line(tmp_path):
    text = HEAD + "axis,condition,p,u,ext,tau\ny,free,0,abc,0,0\n"
    with pytest.raises(ParseError, match="7"):
        ingest_csv(_write(tmp_path, text))


def test_ingest_missing_column(tmp_path):
    with pytest.raises(SchemaError, match="tau"):
        ingest_csv(_write(tmp_path, HEAD + "axis,condition,p,u,ext\ny,free,0,0,0\n"))


def test_ingest_column_mapping_and_scale(tmp_path):
    text = "pressure_kpa,angle_deg,moment,effort,state\n0,0,0,0,free\n10,57.29577951308232,0,0,free\n"
    cfg = IngestConfig(
        columns={"p": "pressure_kpa", "u": "angle_deg", "ext": "moment", "tau": "effort", "condition": "state"},
        scale={"u": math.pi / 180.0},
        kind="pressure",
        design={"r": 3, "R": 6, "l": 5, "t": 1.5},
        axis="y",
    )
    s = ingest_csv(_write(tmp_path, text), cfg)
    assert s.records[1].u == pytest.approx(1.0)
    assert s.axis_label == "y"
