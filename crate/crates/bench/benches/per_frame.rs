use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use mixbf::{BeamformerKind, NoiseScmMode};
use mixbf_bench::Fixture;

const KINDS: [BeamformerKind; 3] = [BeamformerKind::ModPmwf, BeamformerKind::GevMvdr, BeamformerKind::UrMwf];

fn per_frame(c: &mut Criterion) {
    for kind in KINDS {
        let mut g = c.benchmark_group(format!("frame/{kind}"));
        for m in [2usize, 4, 5, 8, 16] {
            let mut fx = Fixture::new(kind, NoiseScmMode::PrecomputedFromFile, m, 100);
            g.throughput(Throughput::Elements(1));
            g.bench_with_input(BenchmarkId::from_parameter(m), &m, |b, _| b.iter(|| fx.step()));
        }
        g.finish();
    }
}

fn online_spp(c: &mut Criterion) {
    let mut g = c.benchmark_group("frame-online");
    for kind in KINDS {
        let mut fx = Fixture::new(kind, NoiseScmMode::OnlineSpp, 5, 100);
        g.bench_function(kind.name(), |b| b.iter(|| fx.step()));
    }
    g.finish();
}

criterion_group!(benches, per_frame, online_spp);
criterion_main!(benches);
