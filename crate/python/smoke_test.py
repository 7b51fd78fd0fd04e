"""Smoke test for the `tbp` extension module.

Build and install first, e.g. `maturin develop -m crates/py/Cargo.toml`.
"""

import math
import tempfile

import tbp


def main() -> None:
    with tempfile.TemporaryDirectory() as tmp:
        paths = tbp.generate_fixture(tmp, assets=4, months=72, seed=3)
        assert len(paths) == 4

        panel = tbp.Panel.from_daily_dir(tmp)
        assert panel.assets == ["SYN00", "SYN01", "SYN02", "SYN03"]
        assert len(panel) == 71
        assert len(panel.features(0)[0]) == 5

        split = panel.split(0.7, 0.3, window=6)
        model = tbp.Model(cell="gru", hidden=4, seq_len=6, max_epochs=3, batch_size=32, seed=1)
        history = model.fit(panel, split["train"], split["validation"])
        assert 1 <= len(history) <= 3
        assert all(math.isfinite(loss) for _, loss, _ in history)

        ckpt = f"{tmp}/model.ckpt"
        model.save(ckpt)
        loaded = tbp.Model.load(ckpt)
        window = panel.features(0)[:6]
        assert loaded.predict(window) == model.predict(window)
        assert loaded.param_count == model.param_count

        rows = model.forecast(panel, *split["test"])
        assert rows, "expected test-period forecasts"
        predicted = [r[2] for r in rows]
        realized = [r[3] for r in rows]
        hr = tbp.hit_ratio(predicted, realized)
        assert 0.0 <= hr <= 1.0
        acc = tbp.threshold_accuracy(predicted, realized, [0.0, 0.01])
        assert acc[0][2] >= acc[1][2]

    assert tbp.select_tbp([0.02, -0.03, 0.001], 0.01, 0.01, "long-short") == [(0, "long"), (1, "short")]
    assert math.isclose(tbp.cumulative_return([0.1, -0.1]), 0.99)

    pred = [[0.02, -0.01], [0.03, 0.04]]
    real = [[0.05, 0.01], [-0.02, 0.02]]
    ewp = tbp.backtest(pred, real)
    assert math.isclose(ewp["returns"][0], 0.03)
    tbp_run = tbp.backtest(pred, real, theta_plus=0.025)
    assert tbp_run["members"] == [0, 2]
    assert tbp_run["returns"] == [0.0, 0.0]

    xs = [i / 10 for i in range(11)]
    fit = tbp.fit_cubic(xs, [1 + 2 * x - x**2 + 0.5 * x**3 for x in xs])
    assert all(math.isclose(a, b, abs_tol=1e-9) for a, b in zip(fit.coeffs, [1, 2, -1, 0.5]))
    assert math.isclose(fit(2.0), 1 + 4 - 4 + 4, abs_tol=1e-9)

    print("tbp smoke test passed")


if __name__ == "__main__":
    main()
