use criterion::{black_box, criterion_group, criterion_main, Criterion};
use neuromatch::sigproc::{design_butterworth, filtfilt_slice, hilbert_envelope, resample_slice, FilterKind};
use neuromatch_bench::signal;

fn filters(c: &mut Criterion) {
    let x = signal(60 * 512, 512.0);
    let lp = design_butterworth(FilterKind::Lowpass, 32.0, 4, 512.0).unwrap();
    let hp = design_butterworth(FilterKind::Highpass, 0.5, 4, 512.0).unwrap();
    c.bench_function("filtfilt lowpass 60 s @ 512 Hz", |b| b.iter(|| filtfilt_slice(&lp, black_box(&x)).unwrap()));
    c.bench_function("filtfilt highpass 60 s @ 512 Hz", |b| b.iter(|| filtfilt_slice(&hp, black_box(&x)).unwrap()));
    c.bench_function("resample 512 -> 64 Hz, 60 s", |b| b.iter(|| resample_slice(black_box(&x), 512.0, 64.0).unwrap()));
}

fn envelope(c: &mut Criterion) {
    let audio = signal(10 * 16_000, 16_000.0);
    c.bench_function("hilbert envelope 10 s @ 16 kHz", |b| {
        b.iter(|| hilbert_envelope(black_box(&audio), 16_000.0).unwrap())
    });
}

criterion_group!(benches, filters, envelope);
criterion_main!(benches);
