use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use s2o_core::blocks::{tfd_step, TfdState};
use s2o_core::flt::flt_head;
use s2o_core::model::{Generator, GeneratorConfig};
use s2o_core::{Graph, ParamStore, Tensor, Var};

fn scalar(g: &mut Graph<'_, f64>, v: f64) -> Var {
    g.input(Tensor::from_f64([1], &[v]).unwrap())
}

fn tfd_scalar(w0: f64, w1: f64, w2: f64, r: f64) -> f64 {
    let mut g = Graph::new();
    let (a, b, c) = (scalar(&mut g, w0), scalar(&mut g, w1), scalar(&mut g, w2));
    let f = move |g: &mut Graph<'_, f64>, _x: Var| Ok(scalar(g, r));
    let state = TfdState::new(&g, a, b, c).unwrap();
    let out = tfd_step(&mut g, state, &f).unwrap();
    g.value(out).data()[0]
}

fn head(img: &Tensor<f64>) -> Tensor<f64> {
    let mut g = Graph::new();
    let x = g.input(img.clone());
    let h = flt_head(&mut g, x).unwrap();
    g.value(h).clone()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn tfd_step_inverts_to_its_residual(
        w0 in -10.0f64..10.0,
        w1 in -10.0f64..10.0,
        w2 in -10.0f64..10.0,
        r in -10.0f64..10.0,
    ) {
        let w3 = tfd_scalar(w0, w1, w2, r);
        let recovered = 11.0 / 3.0 * (w1 - w0) - 7.0 / 3.0 * (w2 - w1) - 2.0 / 3.0 * w2 + 2.0 / 3.0 * w3;
        prop_assert!((recovered - r).abs() < 1e-12, "{recovered} vs {r}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn flt_head_is_linear(
        a in proptest::collection::vec(-1.0f64..1.0, 2 * 6 * 7),
        b in proptest::collection::vec(-1.0f64..1.0, 2 * 6 * 7),
        s in -3.0f64..3.0,
        t in -3.0f64..3.0,
    ) {
        let ta = Tensor::from_f64([1, 2, 6, 7], &a).unwrap();
        let tb = Tensor::from_f64([1, 2, 6, 7], &b).unwrap();
        let mix = ta.zip_map(&tb, |x, y| s * x + t * y).unwrap();
        let (ha, hb, hm) = (head(&ta), head(&tb), head(&mix));
        for ((x, y), m) in ha.data().iter().zip(hb.data()).zip(hm.data()) {
            prop_assert!((s * x + t * y - m).abs() < 1e-12);
        }
    }

    #[test]
    fn flt_head_ignores_constant_offsets(
        a in proptest::collection::vec(-1.0f64..1.0, 5 * 5),
        c in -5.0f64..5.0,
    ) {
        let ta = Tensor::from_f64([1, 1, 5, 5], &a).unwrap();
        let shifted = ta.map(|x| x + c);
        for (x, y) in head(&ta).data().iter().zip(head(&shifted).data()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn generator_outputs_stay_finite_and_bounded(seed in any::<u64>(), scale in 0.0f64..50.0) {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = GeneratorConfig { base_channels: 4, num_blocks: 2, ..Default::default() };
        let gen = Generator::new(&mut store, "gen", &cfg, &mut rng).unwrap();
        let mut g = Graph::with_params(&store);
        let x = g.input(Tensor::from_fn([1, 1, 16, 16], |i| scale * ((i * 7919 % 97) as f64 / 48.0 - 1.0)));
        let out = gen.forward(&mut g, x).unwrap();
        let optical = g.value(out.optical);
        prop_assert!(optical.is_finite());
        prop_assert!(optical.data().iter().all(|v| v.abs() <= 1.0));
        prop_assert!(g.value(out.flt_image.unwrap()).is_finite());
    }
}

#[test]
fn vertical_ramp_gives_minus_two_with_upward_axis() {
    let (h, w) = (6, 7);
    // values grow upwards, i.e. towards row 0
    let up = Tensor::from_fn([1, 1, h, w], |i| (h - 1 - i / w) as f64);
    let down = Tensor::from_fn([1, 1, h, w], |i| (i / w) as f64);
    let (hu, hd) = (head(&up), head(&down));
    for r in 1..h - 1 {
        for c in 1..w - 1 {
            assert_eq!(hu.at4(0, 0, r, c), -2.0);
            assert_eq!(hd.at4(0, 0, r, c), 2.0);
        }
    }
}
