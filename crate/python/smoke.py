"""Smoke test for the ebse extension module.

Build and install first, for example:
    maturin build --release -m crates/python/Cargo.toml -o dist && pip install dist/ebse-*.whl
"""

import ebse


def main() -> None:
    model = ebse.Model.platoon(3)
    assert (model.n, model.agents) == (5, 3)
    assert ebse.Model.from_json(model.to_json()).A == model.A

    floor = ebse.floor(model)
    design = ebse.synthesize(model, 0.38, variant="cor2")
    assert design.c_star == floor
    assert len(design.thresholds) == 3
    assert design.bound <= 0.38 * (1 + 1e-6)
    passed, worst, blocks = design.verify(model)
    assert passed and blocks == 10, (worst, blocks)
    assert ebse.Design.from_json(design.to_json()).bound == design.bound

    try:
        ebse.synthesize(model, 0.5 * floor)
    except ValueError as e:
        assert "c*" in str(e)
    else:
        raise AssertionError("target below the floor was accepted")

    m = ebse.simulate(model, design, horizon=20_000, seed=1)
    assert len(m["rates"]) == 3 and m["band"] < 0.1, m

    rows = ebse.sweep(model, [0.38], seeds=2, horizon=4_000, max_divisor=5)
    assert [r["kind"] for r in rows].count("event") == 1 and len(rows) == 6

    rate, power = ebse.baseline(model, 1)
    assert rate == 1.0 and power > 0.0

    states, tx = ebse.demo_appf(True, 10)
    assert states[10] == [0.0, 1024.0] and not any(tx)
    states, tx = ebse.demo_appf(False, 10)
    assert tx[0] == [2] and states[2] == [0.0, 0.0]

    print(f"ok: c* = {floor:.5f}, Delta = {[t[0][0] for t in design.thresholds]}, band = {m['band']:.4f}")


if __name__ == "__main__":
    main()
