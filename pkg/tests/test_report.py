import numpy as np

from filterlab.harness.report import svg_plot, write_filter_trace, write_rows
from filterlab.filters import KalmanState


def test_write_rows_quotes_and_formats(tmp_path):
    write_rows(tmp_path / "a.csv", ["name", "value"], [["x,y", 0.1], [None, True], ["z", 3]])
    text = (tmp_path / "a.csv").read_bytes().decode()
    assert text == 'name,value\r\n"x,y",0.1\r\n,true\r\nz,3\r\n'


def test_filter_trace_columns(tmp_path):
    states = [KalmanState(0.0, np.array([1.0, 2.0]), np.eye(2))]
    write_filter_trace(tmp_path / "f.csv", states)
    header, row = (tmp_path / "f.csv").read_text().splitlines()
    assert header == "t,mean_0,mean_1,cov_00,cov_01,cov_10,cov_11,ess"
    assert row == "0.0,1.0,2.0,1.0,0.0,0.0,1.0,"


def test_svg_plot_is_deterministic_and_breaks_on_nonpositive(tmp_path):
    series = [("a", [0, 1, 2, 3], [1.0, 0.0, 0.5, 0.25]), ("b<c", [0, 3], [2.0, 2.0])]
    svg_plot(tmp_path / "p1.svg", series, title="t & u", log=True)
    svg_plot(tmp_path / "p2.svg", series, title="t & u", log=True)
    a = (tmp_path / "p1.svg").read_bytes()
    assert a == (tmp_path / "p2.svg").read_bytes()
    text = a.decode()
    assert text.count("<polyline") == 3
    assert "b&lt;c" in text and "t &amp; u" in text
