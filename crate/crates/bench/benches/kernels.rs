use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use lsfd_bench::random;
use lsfd_core::Tape;

fn conv2d(c: &mut Criterion) {
    let mut g = c.benchmark_group("conv2d");
    for (ch, side) in [(8, 24), (16, 24), (64, 48)] {
        let x = random([16, ch, side, side], 1);
        let w = random([ch, ch, 3, 3], 2);
        let b = random([1, ch, 1, 1], 3);
        g.bench_with_input(BenchmarkId::new("forward", format!("{ch}x{side}")), &ch, |bench, _| {
            bench.iter(|| {
                let mut t = Tape::new();
                let (xv, wv, bv) = (t.constant(x.clone()), t.constant(w.clone()), t.constant(b.clone()));
                t.conv2d(xv, wv, bv, 1).unwrap()
            })
        });
        g.bench_with_input(BenchmarkId::new("backward", format!("{ch}x{side}")), &ch, |bench, _| {
            bench.iter(|| {
                let mut t = Tape::new();
                let (xv, wv, bv) = (t.variable(x.clone()), t.variable(w.clone()), t.variable(b.clone()));
                let y = t.conv2d(xv, wv, bv, 1).unwrap();
                let s = t.sum(y);
                t.backward(s).unwrap()
            })
        });
    }
    g.finish();
}

fn dft2(c: &mut Criterion) {
    let mut g = c.benchmark_group("dft2");
    for side in [24, 48, 96] {
        let x = random([4, 3, side, side], 4);
        g.bench_with_input(BenchmarkId::from_parameter(side), &side, |bench, _| {
            bench.iter(|| {
                let mut t = Tape::new();
                let xv = t.constant(x.clone());
                t.dft2(xv)
            })
        });
    }
    g.finish();
}

criterion_group!(benches, conv2d, dft2);
criterion_main!(benches);
