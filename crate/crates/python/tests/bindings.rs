use std::ffi::CString;

use pyo3::prelude::*;
use pyo3::types::PyDict;

/// Runs `code` with the module bound to `ebse`.
fn run(code: &str) {
    Python::initialize();
    Python::attach(|py| {
        let m = PyModule::new(py, "ebse").unwrap();
        ebse::register(&m).unwrap();
        let globals = PyDict::new(py);
        globals.set_item("ebse", m).unwrap();
        let code = CString::new(code).unwrap();
        if let Err(e) = py.run(&code, Some(&globals), None) {
            e.display(py);
            panic!("python raised");
        }
    });
}

#[test]
fn platoon_design_round_trips_and_verifies() {
    run(r#"
model = ebse.Model.platoon(3)
d = ebse.synthesize(model, 0.38)
assert len(d.thresholds) == 3 and d.variant == "cor2"
assert abs(d.bound - 0.38) < 1e-6
assert d.verify(model)[0]
assert ebse.Design.from_json(d.to_json()).thresholds == d.thresholds
assert ebse.Model.from_json(model.to_json()).C == model.C
"#);
}

#[test]
fn errors_map_to_python_exceptions() {
    run(r#"
model = ebse.Model.platoon(3)
for call, exc in [
    (lambda: ebse.synthesize(model, 0.001), ValueError),
    (lambda: ebse.synthesize(ebse.Model.platoon(20), 1.0, variant="cor2"), ValueError),
    (lambda: ebse.synthesize(model, 1.0, variant="nope"), ValueError),
    (lambda: ebse.Model.platoon(1), ValueError),
]:
    try:
        call()
    except exc:
        pass
    else:
        raise AssertionError("no exception")

bad = '{"n":2,"dims":{"n":2,"n_u":2,"p":2},"A":[[1.5,0],[0,1.5]],"B":[[1,0],[0,1]],"C":[[1,0],[1,0]],' \
      '"blocks":{"q":[1,1],"p":[1,1]},"F":[[-1.5,0],[0,-1.5]],' \
      '"noise":{"V":[[0.01,0],[0,0.01]],"W":[[[0.01]],[[0.01]]]},"dt":1.0}'
try:
    ebse.synthesize(ebse.Model.from_json(bad), 100.0)
except ebse.InfeasibleError:
    pass
else:
    raise AssertionError("undetectable plant accepted")
"#);
}

#[test]
fn simulation_sweep_and_replay() {
    run(r#"
model = ebse.Model.platoon(3)
d = ebse.synthesize(model, 0.38)
a = ebse.simulate(model, d, horizon=5000, seed=4)
assert a == ebse.simulate(model, d, horizon=5000, seed=4)
assert len(a["rates"]) == 3 and a["band"] is not None
rows = ebse.sweep(model, [0.1, 0.38], seeds=2, horizon=2000, max_divisor=3)
assert [r["kind"] for r in rows] == ["event", "event", "baseline", "baseline", "baseline"]
assert rows[0]["mean_rate"] > rows[1]["mean_rate"]
assert ebse.baseline(model, 4)[0] == 0.25
states, tx = ebse.demo_appf(True)
assert states[3] == [0.0, 8.0]
states, tx = ebse.demo_appf(False)
assert tx[0] == [2] and all(s == [0.0, 0.0] for s in states[2:])
"#);
}
