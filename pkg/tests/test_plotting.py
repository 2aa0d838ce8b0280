import numpy as np
import pytest

from rcmlab import plotting
from rcmlab.corrector import solve_corrector, sublinearity_report
from rcmlab.diagnostics import caloric_from_delta, holder_report
from rcmlab.kernel import heat_kernel, ondiag_check
from rcmlab.llt import LLTErrorCurve, LLTGrid

PNG = b"\x89PNG\r\n\x1a\n"


def _figures(env, root):
    rng = np.random.default_rng(0)
    curve = LLTErrorCurve([4, 8, 16], [4e-3, 2e-3, 7e-4], 1.0, 1.0, 2.0, LLTGrid(), [0.0] * 3)
    sub = sublinearity_report(env, solve_corrector(env), [2, 4, 8, 16])
    hold = holder_report(env, caloric_from_delta(env, 8, dt=1.0), 8, 2.0)
    draws = {
        "llt.png": lambda p: plotting.llt_curve(curve, p),
        "slice.png": lambda p: plotting.kernel_slice(env, heat_kernel(env, 1.0), p),
        "sub.png": lambda p: plotting.sublinearity(sub, p),
        "ondiag.png": lambda p: plotting.ondiag(ondiag_check(env, [1.0, 4.0]), p),
        "osc.png": lambda p: plotting.oscillation(hold, p),
        "consts.png": lambda p: plotting.implied_constants(rng.exponential(size=20).tolist(), p, "demo"),
        "scatter.png": lambda p: plotting.endpoint_scatter(rng.normal(size=(500, 2)), p, 4, 1.0),
    }
    out = {}
    for name, draw in draws.items():
        draw(root / name)
        out[name] = (root / name).read_bytes()
    return out


def test_figures_are_written_and_deterministic(perc_torus, tmp_path):
    (tmp_path / "a").mkdir()
    (tmp_path / "b").mkdir()
    a = _figures(perc_torus, tmp_path / "a")
    b = _figures(perc_torus, tmp_path / "b")
    for name, data in a.items():
        assert data.startswith(PNG) and len(data) > 1000
        assert data == b[name], name
    assert not list(tmp_path.rglob("*.tmp*"))


def test_infinite_values_do_not_break_plots(tmp_path):
    plotting.implied_constants([1.0, float("inf"), 2.0], tmp_path / "x.png", "with inf")
    assert (tmp_path / "x.png").read_bytes().startswith(PNG)
