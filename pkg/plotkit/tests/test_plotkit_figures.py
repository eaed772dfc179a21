import pytest

from plotkit import PlotError, PlotSpec, render


def write(tmp_path, name, lines):
    path = tmp_path / name
    path.write_text("\n".join(lines) + "\n")
    return path


def corrector_csv(tmp_path, name="corr.csv"):
    lines = ["n,j1,j2,j3,sample,error"]
    for i, n in enumerate((2, 4, 8, 16)):
        for j in ((1, 0, 0), (0, 1, 0), (1, 1, 0)):
            lines.append(f"{n},{j[0]},{j[1]},{j[2]},0,{0.04 / (4 ** i)}")
    return write(tmp_path, name, lines)


def audit_csv(tmp_path):
    lines = ["dt,sample,defect"]
    for dt, base in ((1e-3, 0.1), (5e-4, 0.05), (2.5e-4, 0.024)):
        for s in range(4):
            sign = 1 if s % 2 else -1
            lines.append(f"{dt},{s},{sign * base * (1 + 0.1 * s)}")
    return write(tmp_path, "audit.csv", lines)


def decay_csv(tmp_path):
    lines = ["t,sample,ratio"]
    for s in range(2):
        for t, r in ((0.0, 1.0), (0.5, 0.6), (1.0, 0.37)):
            lines.append(f"{t},{s},{r * (1 + 0.01 * s)}")
    return write(tmp_path, "decay.csv", lines)


def scaling_csv(tmp_path):
    lines = ["n,sample,sup_distance"]
    for n, base in ((2, 0.27), (4, 0.21)):
        for s in range(4):
            lines.append(f"{n},{s},{base + 0.005 * s}")
    return write(tmp_path, "scaling.csv", lines)


def trajectory_csv(tmp_path):
    lines = ["t,L2,Hr,Hgamma,Besov,energy_defect,cutoff_factor"]
    for t, l2 in ((0.0, 0.3), (0.01, 0.29), (0.02, 0.28)):
        lines.append(f"{t},{l2},{l2 * 1.2},{l2 * 1.5},{l2 * 0.9},0.0,1.0")
    return write(tmp_path, "traj.csv", lines)


def spec_for(kind, csv_path, out, **kw):
    return PlotSpec(kind=kind, inputs=(str(csv_path),), out=str(out), **kw)


# --- rendering each kind ----------------------------------------------------

def test_loglog_renders_corrector_layout(tmp_path):
    out = tmp_path / "fig.png"
    got = render(spec_for("loglog", corrector_csv(tmp_path), out))
    assert got == str(out)
    assert out.stat().st_size > 1000


def test_loglog_renders_signed_defects(tmp_path):
    out = tmp_path / "fig.png"
    render(spec_for("loglog", audit_csv(tmp_path), out))
    assert out.exists()


def test_timeseries_renders_decay_and_trajectory(tmp_path):
    render(spec_for("timeseries", decay_csv(tmp_path), tmp_path / "d.png"))
    render(spec_for("timeseries", trajectory_csv(tmp_path), tmp_path / "t.png"))
    assert (tmp_path / "d.png").exists()
    assert (tmp_path / "t.png").exists()


def test_band_renders_scaling_layout(tmp_path):
    out = tmp_path / "band.png"
    render(spec_for("band", scaling_csv(tmp_path), out))
    assert out.exists()


def test_multiple_inputs_overlay(tmp_path):
    a = corrector_csv(tmp_path, "one.csv")
    b = corrector_csv(tmp_path, "two.csv")
    out = tmp_path / "overlay.png"
    render(PlotSpec(kind="loglog", inputs=(str(a), str(b)), out=str(out)))
    assert out.exists()


# --- determinism ------------------------------------------------------------

def test_rerender_is_byte_stable_png(tmp_path):
    csv_path = corrector_csv(tmp_path)
    a = tmp_path / "a.png"
    b = tmp_path / "b.png"
    render(spec_for("loglog", csv_path, a))
    render(spec_for("loglog", csv_path, b))
    assert a.read_bytes() == b.read_bytes()


def test_rerender_is_byte_stable_svg_without_dates(tmp_path):
    csv_path = scaling_csv(tmp_path)
    a = tmp_path / "a.svg"
    b = tmp_path / "b.svg"
    render(spec_for("band", csv_path, a))
    render(spec_for("band", csv_path, b))
    blob = a.read_bytes()
    assert blob == b.read_bytes()
    assert b"dc:date" not in blob


def test_render_does_not_mutate_input(tmp_path):
    csv_path = decay_csv(tmp_path)
    before = csv_path.read_bytes()
    render(spec_for("timeseries", csv_path, tmp_path / "o.png"))
    assert csv_path.read_bytes() == before


# --- request validation -----------------------------------------------------

def test_unknown_kind_rejected(tmp_path):
    with pytest.raises(PlotError) as err:
        render(spec_for("pie", corrector_csv(tmp_path), tmp_path / "o.png"))
    assert "unknown plot kind" in str(err.value)


def test_no_inputs_rejected(tmp_path):
    with pytest.raises(PlotError) as err:
        render(PlotSpec(kind="loglog", inputs=(), out=str(tmp_path / "o.png")))
    assert "no input CSV" in str(err.value)


def test_bad_suffix_rejected(tmp_path):
    with pytest.raises(PlotError) as err:
        render(spec_for("loglog", corrector_csv(tmp_path), tmp_path / "o.pdf"))
    assert ".png or .svg" in str(err.value)


def test_missing_x_column_named(tmp_path):
    with pytest.raises(PlotError) as err:
        render(spec_for("loglog", corrector_csv(tmp_path), tmp_path / "o.png",
                        x="zap"))
    assert "'zap'" in str(err.value)


def test_loglog_rejects_nonpositive_x(tmp_path):
    path = write(tmp_path, "z.csv", ["n,error", "0,0.1", "2,0.05"])
    with pytest.raises(PlotError) as err:
        render(spec_for("loglog", path, tmp_path / "o.png"))
    assert "positive 'n'" in str(err.value)


def test_loglog_rejects_all_zero_column(tmp_path):
    path = write(tmp_path, "z.csv", ["n,error", "2,0.0", "4,0.0"])
    with pytest.raises(PlotError) as err:
        render(spec_for("loglog", path, tmp_path / "o.png"))
    assert "'error'" in str(err.value)


def test_band_rejects_grouping(tmp_path):
    with pytest.raises(PlotError) as err:
        render(spec_for("band", scaling_csv(tmp_path), tmp_path / "o.png",
                        group=("sample",)))
    assert "group" in str(err.value)


def test_explicit_columns_on_unknown_layout(tmp_path):
    path = write(tmp_path, "u.csv", ["alpha,beta,gamma",
                                     "1,0.5,10", "2,0.25,20", "3,0.1,30"])
    out = tmp_path / "u.png"
    render(spec_for("loglog", path, out, x="alpha", y=("beta",)))
    assert out.exists()


def test_output_directory_created(tmp_path):
    out = tmp_path / "deep" / "nest" / "fig.png"
    render(spec_for("timeseries", decay_csv(tmp_path), out))
    assert out.exists()
