use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion, Throughput};
use rand::Rng;
use rand_distr::StandardNormal;

use muontag_core::daq::{synthesize_stream, trigger_and_record, DaqParams};
use muontag_core::emulate::{emulate, EmulatorParams};
use muontag_core::geometry::stack_traversal;
use muontag_core::pulse::{NoisePsd, OptimalFilter};
use muontag_core::seeding::{derive_rng, Stream};
use muontag_core::transport::SimulationSetup;
use muontag_core::{DetectorId, RunConfig, Species};

fn geometry(c: &mut Criterion) {
    let setup = SimulationSetup::from_config(&RunConfig::default()).unwrap();
    let mut rng = derive_rng(1, Stream::MuonTransport, 0);
    let rays: Vec<_> = (0..1024).map(|_| setup.sample(Species::Muon, &mut rng).ray()).collect();
    let mut g = c.benchmark_group("geometry");
    g.throughput(Throughput::Elements(rays.len() as u64));
    g.bench_function("stack_traversal", |b| {
        b.iter(|| rays.iter().map(|r| stack_traversal(r, &setup.transporter.geometry).len()).sum::<usize>())
    });
    g.finish();
}

fn transport(c: &mut Criterion) {
    let setup = SimulationSetup::from_config(&RunConfig::default()).unwrap();
    let mut g = c.benchmark_group("transport");
    g.throughput(Throughput::Elements(1000));
    for (species, stream) in [(Species::Muon, Stream::MuonTransport), (Species::Gamma, Stream::GammaTransport)] {
        g.bench_function(species.name(), |b| {
            let mut rng = derive_rng(2, stream, 0);
            b.iter(|| {
                (0..1000)
                    .map(|_| {
                        let p = setup.sample(species, &mut rng);
                        setup.transporter.simulate_primary(&p, &mut rng).unwrap().len()
                    })
                    .sum::<usize>()
            })
        });
    }
    g.finish();
}

fn readout(c: &mut Criterion) {
    let params = DaqParams::default();
    let n = params.sampling_rate_hz as u64;
    let mut g = c.benchmark_group("readout");
    g.throughput(Throughput::Elements(n));
    g.sample_size(20);
    g.bench_function("synthesize_1s", |b| b.iter(|| synthesize_stream(&[], &params, 3, n).unwrap()));
    let streams = synthesize_stream(&[], &params, 3, n).unwrap();
    g.bench_function("trigger_1s", |b| {
        b.iter_batched(|| streams.clone(), |s| trigger_and_record(&s, params.trigger_settings(), None).unwrap(), BatchSize::LargeInput)
    });
    g.finish();
}

fn optimal_filter(c: &mut Criterion) {
    let params = DaqParams::default();
    let n = params.record_length;
    let fs = params.sampling_rate_hz;
    let mut psd = vec![2.0 / fs; n / 2 + 1];
    psd[0] /= 2.0;
    psd[n / 2] /= 2.0;
    let psd = NoisePsd {
        channel: DetectorId::Top,
        sampling_rate_hz: fs,
        n_samples: n,
        psd,
        records_used: 0,
    };
    let template = params.template(DetectorId::Top);
    let filter = OptimalFilter::new(&template, &psd).unwrap();
    let mut rng = derive_rng(4, Stream::Emulation, 0);
    let x: Vec<f64> = (0..n)
        .map(|i| 40.0 * template.shape((i as f64 - 600.0) * 1e6 / fs) + rng.sample::<f64, _>(StandardNormal))
        .collect();
    let mut g = c.benchmark_group("pulse");
    g.bench_function("analyze", |b| b.iter(|| filter.analyze(black_box(&x)).unwrap()));
    g.bench_function("find_pulses", |b| b.iter(|| filter.find_pulses(black_box(&x), 5.0).unwrap()));
    g.finish();
}

fn emulator(c: &mut Criterion) {
    let params = EmulatorParams::default();
    let mut g = c.benchmark_group("emulate");
    g.sample_size(20);
    g.bench_function("default_run", |b| b.iter(|| emulate(&params, 1).unwrap().records));
    g.finish();
}

criterion_group!(benches, geometry, transport, readout, optimal_filter, emulator);
criterion_main!(benches);
