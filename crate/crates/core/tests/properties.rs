use proptest::prelude::*;
use proptest::sample::select;

use kraken_core::dse::{self, DsePoint, DseQuery, Feasibility};
use kraken_core::engine::ConfigHeader;
use kraken_core::oracle::{conv_reference, ArithmeticModel, Tensor4};
use kraken_core::perfmodel::{layer_perf, network_perf, peak_ops_per_second};
use kraken_core::tiling::{
    derive_params, detile_output, retile_output, tile_input, tile_weights, untile_input, Provenance, TiledStream,
};
use kraken_core::workload::count_macs;
use kraken_core::{EngineConfig, LayerDescriptor, LayerKind, Network};

fn conv_layer(max_hw: usize) -> impl Strategy<Value = LayerDescriptor> {
    (select(vec![1usize, 3, 5, 7, 11]), select(vec![1usize, 3, 5]), select(vec![1usize, 2, 4]), select(vec![1usize, 2]))
        .prop_flat_map(move |(kh, kw, sh, sw)| {
            (
                Just((kh, kw, sh, sw)),
                kh..=max_hw.max(kh),
                kw..=max_hw.max(kw),
                1usize..=6,
                1usize..=12,
                0..=(kh - 1) / 2,
                0..=(kw - 1) / 2,
                1usize..=2,
            )
        })
        .prop_map(|((kh, kw, sh, sw), h, w, ci, co, ph, pw, n)| LayerDescriptor {
            kind: LayerKind::Conv,
            batch: n,
            height: h,
            width: w,
            in_channels: ci,
            out_channels: co,
            kernel_h: kh,
            kernel_w: kw,
            stride_h: sh,
            stride_w: sw,
            pad_h: ph,
            pad_w: pw,
        })
}

fn config() -> impl Strategy<Value = EngineConfig> {
    select(vec![(4usize, 6usize), (7, 24), (3, 16), (5, 12)]).prop_map(|(r, c)| EngineConfig::new(r, c))
}

fn tensor(dims: [usize; 4], bits: u32) -> impl Strategy<Value = Tensor4> {
    let lim = (1i64 << (bits - 1)) - 1;
    proptest::collection::vec(-lim..=lim, dims.iter().product::<usize>())
        .prop_map(move |data| Tensor4::from_vec(dims, data).unwrap())
}

fn operands(max_hw: usize) -> impl Strategy<Value = (LayerDescriptor, Tensor4, Tensor4)> {
    conv_layer(max_hw).prop_flat_map(|l| (Just(l), tensor(l.input_dims(), 6), tensor(l.weight_dims(), 6)))
}

fn wide() -> ArithmeticModel {
    ArithmeticModel { input_bits: 16, weight_bits: 16, acc_bits: 48 }
}

fn add(a: &Tensor4, b: &Tensor4) -> Tensor4 {
    Tensor4::from_vec(a.dims(), a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect()).unwrap()
}

/// Valid MACs by walking every output position and kernel tap.
fn brute_force_valid(l: &LayerDescriptor) -> u64 {
    let mut taps = 0u64;
    for ho in 0..l.out_height() {
        for wo in 0..l.out_width() {
            for kh in 0..l.kernel_h {
                for kw in 0..l.kernel_w {
                    let h = (ho * l.stride_h + kh) as isize - l.pad_h as isize;
                    let w = (wo * l.stride_w + kw) as isize - l.pad_w as isize;
                    if (0..l.height as isize).contains(&h) && (0..l.width as isize).contains(&w) {
                        taps += 1;
                    }
                }
            }
        }
    }
    taps * (l.batch * l.in_channels * l.out_channels) as u64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn reference_is_bilinear((l, x, k) in operands(12), a in -3i64..=3) {
        let arith = wide();
        let y = conv_reference(&x, &k, &l, &arith).unwrap();
        prop_assert_eq!(conv_reference(&x, &k.scaled(a), &l, &arith).unwrap(), y.scaled(a));
        prop_assert_eq!(conv_reference(&x.scaled(a), &k, &l, &arith).unwrap(), y.scaled(a));
        let x2 = x.scaled(-2);
        prop_assert_eq!(
            conv_reference(&add(&x, &x2), &k, &l, &arith).unwrap(),
            add(&y, &conv_reference(&x2, &k, &l, &arith).unwrap())
        );
        let zero = Tensor4::zeros(l.input_dims());
        prop_assert!(conv_reference(&zero, &k, &l, &arith).unwrap().data().iter().all(|&v| v == 0));
    }

    #[test]
    fn reference_commutes_with_column_translation((l, x, k) in operands(12)) {
        // Unpadded layers: dropping S_W input columns drops one output column.
        let l = LayerDescriptor { pad_h: 0, pad_w: 0, ..l };
        prop_assume!(l.width >= l.kernel_w + l.stride_w);
        let arith = wide();
        let y = conv_reference(&x, &k, &l, &arith).unwrap();
        let shifted = LayerDescriptor { width: l.width - l.stride_w, ..l };
        let xs = Tensor4::from_fn(shifted.input_dims(), |[n, h, w, c]| x.get([n, h, w + l.stride_w, c]));
        let ys = conv_reference(&xs, &k, &shifted, &arith).unwrap();
        let [n, ho, wo, co] = ys.dims();
        for i in 0..n { for h in 0..ho { for w in 0..wo { for c in 0..co {
            prop_assert_eq!(ys.get([i, h, w, c]), y.get([i, h, w + 1, c]));
        }}}}
    }

    #[test]
    fn valid_macs_match_enumeration(l in conv_layer(14)) {
        let ops = count_macs(&l).unwrap();
        prop_assert_eq!(ops.macs_valid, brute_force_valid(&l));
        let full = (l.batch * l.out_height() * l.out_width() * l.kernel_h * l.kernel_w * l.in_channels * l.out_channels) as u64;
        prop_assert_eq!(ops.macs_with_zpad, full);
        prop_assert!(ops.macs_valid <= ops.macs_with_zpad);
    }

    #[test]
    fn matrix_layers_count_like_their_conv_form(rows in 1usize..20, ci in 1usize..80, co in 1usize..80) {
        let fc = LayerDescriptor::fully_connected(rows, ci, co);
        let conv = LayerDescriptor { kind: LayerKind::Conv, ..fc };
        prop_assert_eq!(count_macs(&fc).unwrap(), count_macs(&conv).unwrap());
        prop_assert_eq!(count_macs(&fc).unwrap().macs_valid, (rows * ci * co) as u64);
    }

    #[test]
    fn input_tiling_round_trips((l, x, _k) in operands(24), cfg in config()) {
        prop_assume!(derive_params(&l, &cfg).is_ok());
        let s = tile_input(&x, &l, &cfg).unwrap();
        let p = derive_params(&l, &cfg).unwrap();
        // Every iteration replays the identical block sequence.
        let pass = s.words() / p.iterations;
        prop_assert!(s.data.chunks(pass).all(|c| c == &s.data[..pass]));
        let blocks = l.height.div_ceil(cfg.rows * l.stride_h);
        let covered = blocks * cfg.rows * l.stride_h + p.shift * l.stride_h >= l.height + l.pad_h;
        match untile_input(&s, &l, &cfg) {
            Ok(back) => { prop_assert!(covered); prop_assert_eq!(back, x); }
            Err(_) => prop_assert!(!covered),
        }
    }

    #[test]
    fn output_tiling_is_a_bijection((l, _x, _k) in operands(20), cfg in config(), seed in any::<u64>()) {
        prop_assume!(derive_params(&l, &cfg).is_ok());
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        let y = Tensor4::random(l.output_dims(), 20, &mut rng);
        let s = retile_output(&y, &l, &cfg).unwrap();
        prop_assert_eq!(detile_output(&s, &l, &cfg).unwrap(), y.clone());
        prop_assert_eq!(retile_output(&detile_output(&s, &l, &cfg).unwrap(), &l, &cfg).unwrap(), s);
    }

    #[test]
    fn weight_stream_carries_every_tap((l, _x, k) in operands(16), cfg in config()) {
        prop_assume!(derive_params(&l, &cfg).is_ok());
        // Label each tap with its flat index plus one; zero marks an idle slot.
        let labels = Tensor4::from_vec(k.dims(), (1..=k.data().len() as i64).collect()).unwrap();
        let s = tile_weights(&labels, &l, &cfg).unwrap();
        let p = derive_params(&l, &cfg).unwrap();
        prop_assert_eq!(s.words(), p.iterations * l.stride_w * l.in_channels * l.kernel_h * cfg.cores);
        let carried: std::collections::BTreeSet<i64> = s.data.iter().copied().filter(|&v| v != 0).collect();
        prop_assert_eq!(carried.len(), labels.data().len());
    }

    #[test]
    fn stream_dump_round_trips(width in 1usize..16, beats in 0usize..12, bits in select(vec![4u32, 8, 13, 16, 32]), seed in any::<u64>()) {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        let data = Tensor4::random([1, 1, beats, width], bits, &mut rng).into_data();
        let s = TiledStream::new(Provenance::Weights, width, bits, data).unwrap();
        let mut buf = Vec::new();
        s.write_to(&mut buf).unwrap();
        prop_assert_eq!(TiledStream::read_from(buf.as_slice()).unwrap(), s);
    }

    #[test]
    fn header_round_trips(l in conv_layer(16)) {
        let h = ConfigHeader::for_layer(&l).unwrap();
        prop_assert_eq!(ConfigHeader::decode(h.encode()).unwrap(), h);
    }

    #[test]
    fn network_efficiency_ignores_layer_order(layers in proptest::collection::vec(conv_layer(24), 1..6), cfg in config(), rot in 0usize..6) {
        prop_assume!(layers.iter().all(|l| derive_params(l, &cfg).is_ok()));
        let a = network_perf(&Network::new("a", layers.clone()), &cfg, 1e8, 1e8).unwrap();
        let mut shuffled = layers.clone();
        shuffled.rotate_left(rot % layers.len());
        shuffled.reverse();
        let b = network_perf(&Network::new("b", shuffled), &cfg, 1e8, 1e8).unwrap();
        prop_assert!((a.efficiency - b.efficiency).abs() < 1e-12);
        prop_assert_eq!(a.words, b.words);
    }

    #[test]
    fn simplified_efficiency_is_close(l in conv_layer(32), cfg in config()) {
        prop_assume!(derive_params(&l, &cfg).is_ok());
        let p = layer_perf(&l, &cfg, 1e8).unwrap();
        let simple = p.efficiency_without_stalls(&cfg);
        let rel = (simple - p.efficiency) / p.efficiency;
        prop_assert!(rel >= 0.0);
        prop_assert!(rel <= 1.0 / (l.in_channels * l.kernel_h) as f64 + 1e-12);
        // Average throughput is efficiency times peak.
        let ops = 2.0 * p.ops.macs_valid as f64 * 1e8 / p.clocks as f64;
        prop_assert!((ops - p.efficiency * peak_ops_per_second(&cfg, 1e8)).abs() <= 1e-6 * ops.max(1.0));
    }

    #[test]
    fn pareto_front_matches_quadratic_filter(raw in proptest::collection::vec((0u8..12, 0u8..12), 1..100)) {
        let points: Vec<DsePoint> = raw.iter().enumerate().map(|(i, &(e, m))| DsePoint {
            rows: i / 10 + 1,
            cores: i % 10 + 1,
            networks: Vec::new(),
            efficiency: e as f64 / 12.0,
            words_per_frame: m as f64,
            peak_bytes_per_clock: 0,
            feasible: Feasibility { mappable: true, core_multiple: true, bandwidth: true, wsram_depth: true },
        }).collect();
        let front = dse::pareto(&points);
        let expected: Vec<(usize, usize)> = points.iter().filter(|p| {
            !points.iter().any(|q| {
                q.efficiency >= p.efficiency && q.words_per_frame <= p.words_per_frame
                    && (q.efficiency > p.efficiency || q.words_per_frame < p.words_per_frame)
            })
        }).map(|p| (p.rows, p.cores)).collect();
        prop_assert_eq!(front.iter().map(|p| (p.rows, p.cores)).collect::<Vec<_>>(), expected);
    }
}

#[test]
fn pareto_edge_cases() {
    let point = |rows, e, m| DsePoint {
        rows,
        cores: 8,
        networks: Vec::new(),
        efficiency: e,
        words_per_frame: m,
        peak_bytes_per_clock: 0,
        feasible: Feasibility { mappable: true, core_multiple: true, bandwidth: true, wsram_depth: true },
    };
    let same: Vec<DsePoint> = (1..5).map(|r| point(r, 0.5, 10.0)).collect();
    assert_eq!(dse::pareto(&same).len(), 4);
    let mixed = vec![point(1, 0.9, 10.0), point(2, 0.8, 12.0), point(3, 0.95, 11.0)];
    let rows: Vec<usize> = dse::pareto(&mixed).iter().map(|p| p.rows).collect();
    assert_eq!(rows, vec![1, 3]);
    let mut hidden = point(4, 0.99, 1.0);
    hidden.feasible.bandwidth = false;
    assert!(dse::pareto(&[hidden]).is_empty());
}

#[test]
fn sweep_is_order_independent_and_recomputable() {
    let nets = vec![
        Network::new("a", vec![LayerDescriptor::conv(14, 14, 8, 24, 3, 1), LayerDescriptor::fully_connected(1, 64, 10)]),
        Network::new("b", vec![LayerDescriptor::conv_padded(31, 31, 3, 16, 7, 2, 3)]),
    ];
    let query = DseQuery::new(nets.clone(), 2..=8, 8..=40);
    let parallel = dse::sweep(&query).unwrap();
    let serial: Vec<DsePoint> = query
        .rows
        .clone()
        .flat_map(|r| query.cores.clone().map(move |c| (r, c)))
        .map(|(r, c)| dse::evaluate_point(&query, r, c))
        .collect();
    assert_eq!(parallel.len(), 7 * 33);
    for (a, b) in parallel.iter().zip(&serial) {
        assert_eq!((a.rows, a.cores), (b.rows, b.cores));
        assert_eq!(a.efficiency.to_bits(), b.efficiency.to_bits());
        assert_eq!(a.words_per_frame.to_bits(), b.words_per_frame.to_bits());
    }
    // Each point is the perfmodel aggregate with matrix layers batched by R.
    let p = parallel.iter().find(|p| (p.rows, p.cores) == (5, 24)).unwrap();
    let cfg = EngineConfig::new(5, 24);
    let (mut macs, mut clocks) = (0u64, 0u64);
    for n in &nets {
        let perf = network_perf(&n.with_matrix_batch(5), &cfg, 1.0, 1.0).unwrap();
        macs += perf.layers.iter().map(|l| l.ops.macs_valid).sum::<u64>();
        clocks += perf.layers.iter().map(|l| l.clocks).sum::<u64>();
    }
    assert!((p.efficiency - macs as f64 / (120.0 * clocks as f64)).abs() < 1e-12);
}

#[test]
fn single_point_grid_equals_direct_model() {
    let l = LayerDescriptor::conv(27, 27, 48, 256, 5, 1);
    let query = DseQuery::new(vec![Network::new("one", vec![l])], 7..=7, 96..=96);
    let points = dse::sweep(&query).unwrap();
    assert_eq!(points.len(), 1);
    let direct = layer_perf(&l, &EngineConfig::new(7, 96), 1.0).unwrap();
    assert!((points[0].efficiency - direct.efficiency).abs() < 1e-15);
    assert_eq!(points[0].words_per_frame, direct.words.total() as f64);
    assert_eq!(dse::recommend(&points, 0.0).map(|p| (p.rows, p.cores)), Some((7, 96)));
}

#[test]
fn unmappable_points_are_kept_and_flagged() {
    let query = DseQuery::new(vec![Network::new("k11", vec![LayerDescriptor::conv(32, 32, 3, 8, 11, 4)])], 2..=3, 10..=16);
    let points = dse::sweep(&query).unwrap();
    assert_eq!(points.len(), 14);
    // G = 11 + 4 - 1 = 14 cores per group.
    for p in &points {
        assert_eq!(p.feasible.mappable, p.cores >= 14, "{}x{}", p.rows, p.cores);
    }
    assert!(dse::pareto(&points).iter().all(|p| p.cores >= 14));
}
