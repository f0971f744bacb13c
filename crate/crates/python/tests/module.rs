use pyo3::prelude::*;
use pyo3::types::PyDict;

fn run(code: &std::ffi::CStr) {
    Python::attach(|py| {
        let globals = PyDict::new(py);
        globals
            .set_item("empc", pyo3::wrap_pymodule!(empc::empc)(py))
            .unwrap();
        if let Err(e) = py.run(code, Some(&globals), None) {
            e.print(py);
            panic!("python snippet failed");
        }
    });
}

#[test]
fn horizon_and_bucket_are_exposed() {
    run(c"
h = empc.CyclicHorizon(5, 3)
assert [h.length(k) for k in range(6)] == [5, 4, 3, 5, 4, 3]
assert empc.horizon_length(h, 3) == 5
b = empc.TokenBucket(1, 3, 10)
assert (b.cycle_length, b.threshold, b.size) == (3, 2, 10)
assert b.step(1, True) is None and b.step(2, True) == 0
try:
    empc.CyclicHorizon(2, 3)
    raise AssertionError('short horizon accepted')
except ValueError:
    pass
");
}

#[test]
fn scalar_system_solves_and_rejects_bad_shapes() {
    run(c"
b = empc.TokenBucket(1, 3, 10)
s = empc.NcsSystem([[1.1]], [[1.0]], [[1.0]], [[1.0]], ([-2.0], [2.0]), ([-1.0], [1.0]), b)
sol = s.solve([0.5, 0.0, 10.0], 3)
assert sol.feasible and len(sol.states) == 4
assert abs(s.stage_cost([1.0, 0.0, 2.0], [0.5, 1.0]) - 1.25) < 1e-12
assert s.set_distance([1.0, 0.0, 2.0]) == 1.0
trace = s.run_closed_loop([0.5, 0.0, 10.0], 3, 6)
assert len(trace) == 6 and len(trace.states) == 7
assert abs(s.multi_step_equivalence([0.5, 0.0, 10.0], 3, 2)) <= 1e-8
for bad in ([0.0, 0.0], [0.0, 0.0, 0.0, 0.0]):
    try:
        s.storage(bad)
        raise AssertionError('wrong state length accepted')
    except ValueError:
        pass
try:
    empc.NcsSystem([[1.1, 0.0]], [[1.0]], [[1.0]], [[1.0]], ([-2.0], [2.0]), ([-1.0], [1.0]), b)
    raise AssertionError('non-square A accepted')
except ValueError:
    pass
");
}
