//! End-to-end acceptance checks, one test per criterion. Each test prints a
//! single `criterion N: PASS|FAIL ...` line before asserting.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use flate2::write::GzEncoder;
use flate2::Compression;

use urfb_core::circuits::{grid, output_grid_report, shutdown_grid_report, CircuitParams};
use urfb_core::data::{
    load_cifar10, load_cifar100, load_cifar100_test, load_cifar10_test, load_mnist, load_mnist_test,
    pairwise_margin, toy_blobs, Dataset,
};
use urfb_core::feedback::{
    evaluate, hinge_delta, softmax_delta, softmax_xent_loss, train_epoch, Layer, Network, NetworkOptions, Trace,
    TrainParams,
};
use urfb_core::layers::{
    conv_forward, conv_update, draw_drop_mask, localconv_forward, localconv_update, ConvGeometry, DualWeights,
    LocalConvWeights,
};
use urfb_core::lindyn::{
    aligned_init, replicate_sim, ConservationMonitor, ScalarDynState, SimConfig,
};
use urfb_core::netspec::{parse_arch, resolve_arch, FeedbackRule, LossKind, Mode, Shape3};
use urfb_core::tensor::{gate_open, Rng, Tensor};

fn report(n: u32, ok: bool, detail: impl AsRef<str>) {
    println!("criterion {n}: {} {}", if ok { "PASS" } else { "FAIL" }, detail.as_ref());
}

fn uniform(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.uniform_range(-1.0, 1.0)).collect()
}

fn sweep(net: &mut Network, xs: &[Vec<f64>], ys: &[usize], loss: LossKind, eta: f64) {
    let classes = net.spec().classes;
    let traces: Vec<Trace> = xs.iter().map(|x| net.forward(x, true).unwrap()).collect();
    let deltas: Vec<Vec<f64>> = traces
        .iter()
        .zip(ys)
        .map(|(t, &y)| {
            let mut d = vec![0.0; classes];
            loss.delta(t.output().data(), y, 1.0, &mut d);
            d
        })
        .collect();
    net.backward_sweep(&traces, &deltas, eta).unwrap();
}

#[test]
fn criterion_1_tied_urfb_is_bp() {
    let start = Instant::now();
    let spec = parse_arch("Full 64; Full 48; Full 32; Output", Shape3::flat(20), 10).unwrap();
    let mut bp = Network::build(&spec, NetworkOptions::new(FeedbackRule::Bp), &Rng::new(11)).unwrap();
    let opts = NetworkOptions {
        tie_feedback: true,
        ..NetworkOptions::new(FeedbackRule::Urfb)
    };
    let mut ur = Network::build(&spec, opts, &Rng::new(11)).unwrap();
    let mut rng = Rng::new(12);
    for _ in 0..200 {
        let xs: Vec<Vec<f64>> = (0..10).map(|_| uniform(&mut rng, 20)).collect();
        let ys: Vec<usize> = (0..10).map(|_| rng.below(10) as usize).collect();
        sweep(&mut bp, &xs, &ys, LossKind::Hinge, 0.05);
        sweep(&mut ur, &xs, &ys, LossKind::Hinge, 0.05);
    }
    let mut dev: f64 = 0.0;
    for j in bp.param_layers() {
        dev = dev.max(bp.weights(j).unwrap().w().max_abs_diff(ur.weights(j).unwrap().w()).unwrap());
        let w = ur.weights(j).unwrap();
        dev = dev.max(w.r().max_abs_diff(&w.w().transpose().unwrap()).unwrap());
    }
    let secs = start.elapsed().as_secs_f64();
    let ok = dev <= 1e-10 && secs < 10.0;
    report(1, ok, format!("max |W_bp - W_urfb| = {dev:e} after 200 batches in {secs:.2}s"));
    assert!(ok);
}

/// Smallest distance of any pre-activation from the saturation kinks and of
/// any pooling winner from the runner-up in its window.
fn kink_margin(net: &Network, trace: &Trace) -> f64 {
    let mut m = f64::INFINITY;
    for (layer, st) in net.layers().iter().zip(&trace.states) {
        if let Some(h) = &st.h {
            for &v in h.data() {
                m = m.min((v.abs() - 1.0).abs());
            }
        }
        if let Layer::Pool(g) = layer {
            let x = st.x_in.data();
            for c in 0..g.channels {
                for oy in 0..g.out_height() {
                    for ox in 0..g.out_width() {
                        let mut vals = Vec::new();
                        for dy in 0..g.size {
                            for dx in 0..g.size {
                                let (y, xx) = (oy * g.stride + dy, ox * g.stride + dx);
                                if y < g.height && xx < g.width {
                                    vals.push(x[(c * g.height + y) * g.width + xx]);
                                }
                            }
                        }
                        vals.sort_by(|a, b| b.partial_cmp(a).unwrap());
                        if vals.len() > 1 {
                            m = m.min(vals[0] - vals[1]);
                        }
                    }
                }
            }
        }
    }
    m
}

#[test]
fn criterion_2_gradient_check_all_layer_kinds() {
    let start = Instant::now();
    let input = Shape3::new(2, 6, 6);
    let spec = parse_arch("Conv 3 3x3; LocalConv 3 3x3; Sum; Maxpool 2; Drop .5; Full 8; Output", input, 4).unwrap();
    let kinds: Vec<&str> = spec.layers.iter().map(|l| l.kind_name()).collect();
    let drop_j = kinds.iter().position(|&k| k == "drop").unwrap();
    let ys = [0usize, 3, 1];

    // find a seed whose samples keep clear of every kink and pooling tie
    let (mut net, xs) = (0..200u64)
        .find_map(|seed| {
            let mut net = Network::build(&spec, NetworkOptions::new(FeedbackRule::Bp), &Rng::new(seed)).unwrap();
            let mut rng = Rng::new(1000 + seed);
            let mask = draw_drop_mask(&mut rng, &[3, 3, 3], 0.5).unwrap();
            net.set_drop_mask(drop_j, mask).unwrap();
            let xs: Vec<Vec<f64>> = (0..ys.len()).map(|_| uniform(&mut rng, input.len())).collect();
            let clear = xs.iter().all(|x| kink_margin(&net, &net.forward(x, true).unwrap()) > 1e-3);
            clear.then_some((net, xs))
        })
        .expect("no kink-free draw");

    let total = |n: &Network| -> f64 {
        xs.iter()
            .zip(&ys)
            .map(|(x, &y)| softmax_xent_loss(n.forward(x, true).unwrap().output().data(), y))
            .sum()
    };
    let h = 1e-5;
    let mut fd: Vec<(usize, Vec<f64>)> = Vec::new();
    for j in net.param_layers() {
        let w0 = net.weights(j).unwrap().w().clone();
        let mut g = Vec::with_capacity(w0.len());
        for i in 0..w0.len() {
            let mut p = net.clone();
            let mut m = net.clone();
            for (n, s) in [(&mut p, h), (&mut m, -h)] {
                let mut t = w0.clone();
                t.data_mut()[i] += s;
                n.weights_mut(j).unwrap().set_w(t).unwrap();
            }
            g.push(-(total(&p) - total(&m)) / (2.0 * h));
        }
        fd.push((j, g));
    }
    let before = net.clone();
    let traces: Vec<Trace> = xs.iter().map(|x| net.forward(x, true).unwrap()).collect();
    let deltas: Vec<Vec<f64>> = traces
        .iter()
        .zip(&ys)
        .map(|(t, &y)| {
            let mut d = vec![0.0; 4];
            softmax_delta(t.output().data(), y, &mut d);
            d
        })
        .collect();
    // the sweep applies eta / B times the summed increments
    net.backward_sweep(&traces, &deltas, xs.len() as f64).unwrap();

    // relative error with the gradient scale floored at 1e-4, below which
    // central differences at this step are dominated by rounding
    let mut worst: f64 = 0.0;
    let mut checked = 0usize;
    for (j, g) in &fd {
        let a = net.weights(*j).unwrap().w().data();
        let b = before.weights(*j).unwrap().w().data();
        for i in 0..g.len() {
            let sweep = a[i] - b[i];
            let rel = (sweep - g[i]).abs() / sweep.abs().max(g[i].abs()).max(1e-4);
            worst = worst.max(rel);
            checked += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let ok = worst <= 1e-6 && secs < 30.0;
    report(
        2,
        ok,
        format!("layers {kinds:?}, {checked} weights, worst relative error {worst:.3e}, {secs:.2}s"),
    );
    assert!(ok);
}

#[test]
fn criterion_3_linear_dynamics_replication() {
    let start = Instant::now();
    let mut ok = true;
    let mut lines = Vec::new();
    for seed in 0..3u64 {
        let cfg = SimConfig {
            max_iters: 20_000,
            stop_at_passage: true,
            record_every: 1000,
            seed,
            ..SimConfig::default()
        };
        let b = replicate_sim(&cfg).unwrap();
        let passages: Vec<Option<usize>> = b.feedback_runs().iter().map(|r| r.passage).collect();
        let decreasing = passages.iter().all(|p| p.is_some())
            && passages.windows(2).all(|w| w[1].unwrap() < w[0].unwrap());
        let tops: Vec<f64> = b.runs.iter().map(|r| *r.final_corr.last().unwrap()).collect();
        let aligned = tops.iter().all(|&c| c > 0.99);
        ok &= decreasing && aligned;
        lines.push(format!(
            "seed {seed}: passages (eps {:?}) {passages:?} bp {:?}; top-layer corr (bp, eps..) {:?}",
            cfg.eps,
            b.bp().passage,
            tops.iter().map(|c| format!("{c:.4}")).collect::<Vec<_>>()
        ));
    }
    let secs = start.elapsed().as_secs_f64();
    ok &= secs < 120.0;
    report(3, ok, format!("{secs:.1}s | {}", lines.join(" | ")));
    assert!(ok);
}

fn conservation_run(lr: &[f64], lt: f64, eps: f64, dt: f64, t_end: f64) -> ConservationMonitor {
    let mut s = ScalarDynState::new(lr.to_vec(), lt, eps, dt).unwrap();
    let mut m = ConservationMonitor::default();
    m.observe(&s);
    for _ in 0..(t_end / dt).round() as usize {
        s.step().unwrap();
        m.observe(&s);
    }
    m
}

#[test]
fn criterion_4_conserved_quantity() {
    let mut rng = Rng::new(4);
    let (mut worst_rel, mut lo, mut hi) = (0.0f64, f64::INFINITY, 0.0f64);
    let mut cases = 0;
    for k in [2usize, 3] {
        for lt in [1.0, 0.5] {
            for eps in [0.0, 0.25, 0.5, 1.0] {
                let mut lr = vec![0.0];
                lr.extend((1..k).map(|_| rng.uniform_range(0.01, 0.05) * lt));
                let a = conservation_run(&lr, lt, eps, 1e-3, 200.0);
                let b = conservation_run(&lr, lt, eps, 5e-4, 200.0);
                worst_rel = worst_rel.max(a.relative());
                let ratio = a.max_abs() / b.max_abs();
                lo = lo.min(ratio);
                hi = hi.max(ratio);
                cases += 1;
            }
        }
    }
    let ok = worst_rel <= 1e-2 && lo >= 1.7 && hi <= 2.3;
    report(
        4,
        ok,
        format!("{cases} trajectories: max relative residual {worst_rel:.3e}, halving-dt ratio in [{lo:.3}, {hi:.3}]"),
    );
    assert!(ok);
}

#[test]
fn criterion_5_matrix_scalar_agreement() {
    let mut worst: f64 = 0.0;
    for (dims, seed) in [(vec![12usize, 10, 6], 1u64), (vec![20, 15, 12, 8], 2), (vec![9, 9, 9, 9], 3)] {
        for eps in [0.0, 0.5, 1.0] {
            let mut rng = Rng::new(seed);
            let init = aligned_init(&dims, &mut rng, eps, 1e-2, (0.05, 0.5)).unwrap();
            let mut m = init.state.clone();
            let mut sc = init.scalar_states().unwrap();
            for _ in 0..2000 {
                let modes = m.mode_errors(&init.u, &init.v);
                for (e, s) in modes.iter().zip(&sc) {
                    worst = worst.max((e - s.error()).abs());
                }
                m.step().unwrap();
                for s in sc.iter_mut() {
                    s.step().unwrap();
                }
            }
        }
    }
    let ok = worst <= 1e-6;
    report(5, ok, format!("k = 2 and 3, dims <= 20, 2000 steps: max mode deviation {worst:.3e}"));
    assert!(ok);
}

fn hinge_reference(h: f64, s: i8) -> f64 {
    let mut out = [0.0; 2];
    if s == 1 {
        hinge_delta(&[h, 0.0], 0, 1.0, &mut out);
        out[0]
    } else {
        hinge_delta(&[0.0, h], 0, 1.0, &mut out);
        out[1]
    }
}

#[test]
fn criterion_6_circuit_equivalence() {
    let start = Instant::now();
    let p = CircuitParams::default();
    let out = output_grid_report(p, 0.05, hinge_reference).unwrap();
    let xs = grid(-3.0, 3.0, 240);
    let ds = grid(-0.999 * p.k, 0.999 * p.k, 200);
    let shut = shutdown_grid_report(p.k, &xs, &ds, |x, d| if gate_open(x) { d } else { 0.0 }).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let ok = out.is_clean() && shut.is_clean() && secs < 5.0;
    report(
        6,
        ok,
        format!(
            "output circuit {} points, counterexamples (h, s, want, got) {:?}; shutdown {} points, {} counterexamples; {secs:.2}s",
            out.checked,
            out.counterexamples,
            shut.checked,
            shut.counterexamples.len()
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_7_localconv_conv_consistency() {
    let geom = ConvGeometry::new(3, 7, 6, 4, 3, 5);
    let mut rng = Rng::new(7);
    let (fi, fo) = geom.fans();
    let banks = DualWeights::tied(Tensor::glorot_uniform(&mut rng, fi, fo, geom.filter_shape()));
    let lc = LocalConvWeights::from_conv(geom, &banks).unwrap();
    let x = Tensor::new(geom.in_shape(), (0..geom.in_shape().iter().product::<usize>()).map(|_| rng.normal()).collect()).unwrap();
    let a = conv_forward(&banks, &x).unwrap();
    let b = localconv_forward(&lc, &x).unwrap();
    let same_out = a.h == b.h && a.x_out == b.x_out;

    let d = Tensor::new(geom.out_shape(), (0..geom.out_shape().iter().product::<usize>()).map(|_| rng.normal()).collect()).unwrap();
    let (mut sa, mut sb) = (a, b);
    sa.delta = Some(d.clone());
    sb.delta = Some(d);
    let mut conv_after = banks.clone();
    conv_update(&mut conv_after, &sa, 0.1, FeedbackRule::Bp).unwrap();
    let mut lc_after = lc.clone();
    localconv_update(&mut lc_after, &sb, 0.1, FeedbackRule::Bp).unwrap();
    let entry_inc: Vec<f64> = lc_after
        .weights
        .w()
        .data()
        .iter()
        .zip(lc.weights.w().data())
        .map(|(p, q)| p - q)
        .collect();
    let summed = lc.geometry.contract(&entry_inc);
    let mut dev: f64 = 0.0;
    for ((p, q), s) in conv_after.w().data().iter().zip(banks.w().data()).zip(&summed) {
        dev = dev.max((p - q - s).abs());
    }
    let ok = same_out && dev <= 1e-12;
    report(7, ok, format!("tied outputs identical: {same_out}; update deviation {dev:.3e}"));
    assert!(ok);
}

fn mnist_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist")
}

#[test]
fn criterion_8_desk_scale_training() {
    let start = Instant::now();
    let dir = mnist_dir();
    let train = load_mnist(&dir).expect("data/mnist training files");
    let val = load_mnist_test(&dir).expect("data/mnist test files");
    let spec = resolve_arch("simpnet_lite", train.input_shape(), 10).unwrap();
    let mut results = Vec::new();
    for mode in [Mode::Bp, Mode::Urfb, Mode::Frfb] {
        let mut net = Network::build(&spec, NetworkOptions::new(mode.rule()), &Rng::new(1)).unwrap();
        let init = net.alignment().unwrap();
        let params = TrainParams::new(0.1, 100, mode.default_loss());
        let mut rng = Rng::new(2);
        let mut last = None;
        for epoch in 0..20 {
            last = Some(train_epoch(&mut net, &train, Some(&val), &params, &mut rng, epoch).unwrap());
        }
        let last = last.unwrap();
        results.push((mode, last.val_error.unwrap(), init, last.alignment));
    }
    let secs = start.elapsed().as_secs_f64();
    let (bp, ur, fr) = (&results[0], &results[1], &results[2]);
    let below_chance = results.iter().all(|r| r.1 < 0.9);
    let close = (ur.1 - bp.1) <= 0.05;
    let hidden = ur.3.len() - 1;
    let grew = ur.3.iter().zip(&ur.2).all(|(a, b)| a > b);
    let beats_fixed = (0..hidden).all(|l| ur.3[l] > fr.3[l]);
    let ok = below_chance && close && grew && beats_fixed && secs < 1200.0;
    let detail = results
        .iter()
        .map(|(m, v, i, a)| format!("{m}: val err {v:.3}, align {i:.3?} -> {a:.3?}"))
        .collect::<Vec<_>>()
        .join("; ");
    report(
        8,
        ok,
        format!("(a) {below_chance} (b) {close} (c) grew {grew}, beats FRFB {beats_fixed}; {detail}; {secs:.0}s"),
    );
    assert!(ok);
}

#[test]
fn criterion_9_toy_separability() {
    let mut epochs_needed = Vec::new();
    let mut ok = true;
    for seed in 0..5u64 {
        let d = toy_blobs(&mut Rng::new(seed), 50, 3, 5, 8.0).unwrap();
        assert!(pairwise_margin(&d) > 0.0);
        let spec = parse_arch("Output", d.input_shape(), 3).unwrap();
        let mut net = Network::build(&spec, NetworkOptions::new(FeedbackRule::Bp), &Rng::new(100 + seed)).unwrap();
        let params = TrainParams::new(0.1, 10, LossKind::Hinge);
        let mut rng = Rng::new(200 + seed);
        let mut hit = None;
        for epoch in 0..100 {
            train_epoch(&mut net, &d, None, &params, &mut rng, epoch).unwrap();
            if evaluate(&net, &d, &params).unwrap().0 == 0.0 {
                hit = Some(epoch + 1);
                break;
            }
        }
        ok &= hit.is_some();
        epochs_needed.push(hit);
    }
    report(9, ok, format!("epochs to zero training error per seed: {epochs_needed:?}"));
    assert!(ok);
}

fn pixels_match(d: &Dataset, bytes: &[Vec<u8>], labels: &[usize]) -> bool {
    d.len() == labels.len()
        && d.labels() == labels
        && bytes
            .iter()
            .enumerate()
            .all(|(i, px)| d.image(i).iter().zip(px).all(|(&v, &b)| v == f64::from(b) / 255.0 && (v * 255.0).round() as u8 == b))
}

fn random_bytes(rng: &mut Rng, n: usize) -> Vec<u8> {
    (0..n).map(|_| rng.below(256) as u8).collect()
}

fn write_cifar(path: &Path, header: &[Vec<u8>], px: &[Vec<u8>]) {
    let mut out = Vec::new();
    for (h, p) in header.iter().zip(px) {
        out.extend_from_slice(h);
        out.extend_from_slice(p);
    }
    std::fs::write(path, out).unwrap();
}

fn idx(magic: u32, dims: &[u32], body: &[u8]) -> Vec<u8> {
    let mut out = magic.to_be_bytes().to_vec();
    for d in dims {
        out.extend(d.to_be_bytes());
    }
    out.extend_from_slice(body);
    out
}

#[test]
fn criterion_10_loader_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let mut rng = Rng::new(10);
    let mut ok = true;

    let c10 = tmp.path().join("c10");
    std::fs::create_dir(&c10).unwrap();
    let mut all_px = Vec::new();
    let mut all_lab = Vec::new();
    for b in 1..=2 {
        let px: Vec<Vec<u8>> = (0..7).map(|_| random_bytes(&mut rng, 3072)).collect();
        let lab: Vec<usize> = (0..7).map(|_| rng.below(10) as usize).collect();
        let hdr: Vec<Vec<u8>> = lab.iter().map(|&l| vec![l as u8]).collect();
        write_cifar(&c10.join(format!("data_batch_{b}.bin")), &hdr, &px);
        all_px.extend(px);
        all_lab.extend(lab);
    }
    let tpx: Vec<Vec<u8>> = (0..3).map(|_| random_bytes(&mut rng, 3072)).collect();
    let tlab = vec![9usize, 0, 4];
    write_cifar(&c10.join("test_batch.bin"), &tlab.iter().map(|&l| vec![l as u8]).collect::<Vec<_>>(), &tpx);
    ok &= pixels_match(&load_cifar10(&c10).unwrap(), &all_px, &all_lab);
    ok &= pixels_match(&load_cifar10_test(&c10).unwrap(), &tpx, &tlab);

    let c100 = tmp.path().join("c100");
    std::fs::create_dir(&c100).unwrap();
    for (name, n) in [("train.bin", 6usize), ("test.bin", 4)] {
        let px: Vec<Vec<u8>> = (0..n).map(|_| random_bytes(&mut rng, 3072)).collect();
        let fine: Vec<usize> = (0..n).map(|_| rng.below(100) as usize).collect();
        let hdr: Vec<Vec<u8>> = fine.iter().map(|&f| vec![rng.below(20) as u8, f as u8]).collect();
        write_cifar(&c100.join(name), &hdr, &px);
        let d = if name == "train.bin" {
            load_cifar100(&c100).unwrap()
        } else {
            load_cifar100_test(&c100).unwrap()
        };
        ok &= d.classes() == 100 && pixels_match(&d, &px, &fine);
    }

    let mn = tmp.path().join("mnist");
    std::fs::create_dir(&mn).unwrap();
    for (prefix, n, gz) in [("train", 5usize, false), ("t10k", 4, true)] {
        let px: Vec<Vec<u8>> = (0..n).map(|_| random_bytes(&mut rng, 784)).collect();
        let lab: Vec<usize> = (0..n).map(|_| rng.below(10) as usize).collect();
        let images = idx(0x0803, &[n as u32, 28, 28], &px.concat());
        let labels = idx(0x0801, &[n as u32], &lab.iter().map(|&l| l as u8).collect::<Vec<_>>());
        for (kind, bytes) in [("images-idx3-ubyte", images), ("labels-idx1-ubyte", labels)] {
            let name = format!("{prefix}-{kind}");
            if gz {
                let mut e = GzEncoder::new(Vec::new(), Compression::default());
                e.write_all(&bytes).unwrap();
                std::fs::write(mn.join(format!("{name}.gz")), e.finish().unwrap()).unwrap();
            } else {
                std::fs::write(mn.join(name), bytes).unwrap();
            }
        }
        let d = if prefix == "train" {
            load_mnist(&mn).unwrap()
        } else {
            load_mnist_test(&mn).unwrap()
        };
        ok &= d.input_shape() == Shape3::new(1, 28, 28) && pixels_match(&d, &px, &lab);
    }
    report(10, ok, "CIFAR-10, CIFAR-100 and MNIST (plain and gzip) round trips");
    assert!(ok);
}
