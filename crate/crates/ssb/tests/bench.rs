use ssb::bench::{run_case, BenchCase};

#[test]
fn identity_size_has_no_sparse_overhead() {
    let row = run_case(BenchCase::square(16, 16, 64), 21, 0).unwrap();
    assert!(row.sparse_ns <= 2 * row.dense_ns, "{row:?}");
}

#[test]
fn gate_passes_on_a_grid_of_shapes() {
    for c in [BenchCase::square(9, 2, 3), BenchCase::square(33, 7, 5), BenchCase::square(64, 16, 4)] {
        let row = run_case(c, 20, 3).unwrap();
        assert_eq!((row.h_in, row.h_r, row.d), (c.h_in, c.h_r, c.d));
        assert!(row.speedup > 0.0);
    }
}
