use approx::assert_relative_eq;
use exceed::diagnostics::diagnostics_at;
use exceed::estimators::{estimate_awnbe, estimate_eot, qn_objective, w2sq_uniform, AwConfig, NelderMeadSettings};
use exceed::gof::observed_discrepancy;
use exceed::mdgpd::GeometricRadial;
use exceed::preprocess::{quantile_type7, standardize, ThresholdConfig, ThresholdMode};
use exceed::rng::open01;
use exceed::sinkhorn::{barycentric_projection, ot_eps, sinkhorn_divergence, SinkhornConfig};
use exceed::{make_measure, Bounds, EmpiricalMeasure, GeneratorSpec, MgpdModel, RandomSource, Simulator, UniformModel};
use ndarray::{array, Array2};

fn line(points: &[f64]) -> EmpiricalMeasure {
    EmpiricalMeasure::uniform(Array2::from_shape_vec((points.len(), 1), points.to_vec()).unwrap()).unwrap()
}

#[test]
fn point_masses_cost_their_distance() {
    let x = make_measure(array![[0.0, 1.0]], None).unwrap();
    let y = make_measure(array![[2.0, -1.0]], None).unwrap();
    let cfg = SinkhornConfig::default();
    assert_relative_eq!(ot_eps(&x, &y, &cfg).unwrap().value, 8.0, epsilon = 1e-12);
    assert_relative_eq!(sinkhorn_divergence(&x, &y, &cfg).unwrap(), 8.0, epsilon = 1e-12);
}

#[test]
fn shifted_four_atoms_match_sorted_pairing() {
    let cfg = SinkhornConfig::with_epsilon(1e-4);
    let s = sinkhorn_divergence(&line(&[0.0, 1.0, 2.0, 3.0]), &line(&[1.0, 2.0, 3.0, 4.0]), &cfg).unwrap();
    assert!((s - 1.0).abs() < 1e-2, "{s}");
}

#[test]
fn uniform_divergence_follows_the_squared_gap() {
    // common tape: X = theta0 U, Y = theta U, so only the scale differs
    let mut rng = RandomSource::new(3).rng();
    let u: Vec<f64> = (0..1000).map(|_| open01(&mut rng)).collect();
    let cfg = SinkhornConfig::with_epsilon(1e-3);
    for &(theta0, theta) in &[(1.0, 1.3), (1.0, 2.0), (2.0, 1.5), (0.5, 1.5)] {
        let x: Vec<f64> = u.iter().map(|v| theta0 * v).collect();
        let y: Vec<f64> = u.iter().map(|v| theta * v).collect();
        let s = sinkhorn_divergence(&line(&x), &line(&y), &cfg).unwrap();
        let exact = w2sq_uniform(theta0, theta).unwrap();
        assert!((s - exact).abs() / exact < 0.1, "theta0 {theta0} theta {theta}: {s} vs {exact}");
    }
}

#[test]
fn small_regularization_transports_onto_itself() {
    let mu = make_measure(array![[0.0, 0.0], [1.0, 0.2], [0.3, 1.1], [-0.7, 0.5], [0.9, -0.8]], None).unwrap();
    let map = barycentric_projection(&mu, &mu, &SinkhornConfig::with_epsilon(1e-6)).unwrap();
    let worst = (&map - &mu.atoms()).iter().fold(0.0f64, |a, v| a.max(v.abs()));
    assert!(worst < 1e-3, "{worst}");
}

#[test]
fn criterion_vanishes_at_the_generating_parameter() {
    let bounds = Bounds::new(vec![0.1], vec![5.0]).unwrap();
    let cfg = AwConfig { lambda: 0.0, ..AwConfig::for_sample_size(300, bounds, RandomSource::new(12)) };
    let tape = UniformModel.draw_tape(cfg.m, &cfg.tape_source()).unwrap();
    let x = UniformModel.simulate(&[1.7], &tape).unwrap();
    let observed = UniformModel.measure(x.view()).unwrap();
    assert!(qn_objective(&[1.7], &observed, &[1.0], &cfg, &UniformModel).unwrap().abs() <= 1e-9);
    let tight = NelderMeadSettings { x_tolerance: 1e-8, f_tolerance: 1e-14, max_evals: 2000, ..Default::default() };
    let est = estimate_eot(&observed, &AwConfig { optimizer: tight, ..cfg }, &UniformModel).unwrap();
    assert!((est.theta[0] - 1.7).abs() < 1e-6, "{:?}", est.theta);
}

#[test]
fn eot_recovers_the_uniform_bound() {
    let x = UniformModel.sample(&[1.0], 500, &RandomSource::new(40)).unwrap();
    let observed = UniformModel.measure(x.view()).unwrap();
    let mut cfg = AwConfig::for_sample_size(500, Bounds::new(vec![0.2], vec![4.0]).unwrap(), RandomSource::new(41));
    cfg.sinkhorn = SinkhornConfig::with_epsilon(1e-3);
    let est = estimate_eot(&observed, &cfg, &UniformModel).unwrap();
    assert!((est.theta[0] - 1.0).abs() < 0.1, "{:?}", est.theta);
}

#[test]
fn heavy_penalty_pins_the_start() {
    let mgpd = MgpdModel::new(GeneratorSpec::gumbel_shared(2, 1.0).unwrap(), false).unwrap();
    let x = mgpd.sample(&[1.0, 1.2, 0.1, 0.0], 40, &RandomSource::new(50)).unwrap();
    let observed = mgpd.measure(x.view()).unwrap();
    let bounds = Bounds::new(vec![0.3, 0.3, -0.4, -0.4], vec![3.0, 3.0, 0.4, 0.4]).unwrap();
    let mut cfg = AwConfig::for_sample_size(40, bounds, RandomSource::new(51));
    cfg.lambda = 1e8;
    cfg.sinkhorn = SinkhornConfig::with_epsilon(0.05);
    cfg.optimizer.max_evals = 150;
    let start = [0.9, 1.4, 0.05, -0.1];
    let est = estimate_awnbe(&observed, &start, &cfg, &mgpd).unwrap();
    for (a, b) in est.theta.iter().zip(&start) {
        assert!((a - b).abs() < 1e-3, "{:?}", est.theta);
    }
    assert!(est.discrepancy <= est.nbe_discrepancy.unwrap() + 1e-12);
}

#[test]
fn observed_discrepancy_is_zero_on_its_own_tape() {
    let crn = RandomSource::new(61);
    let x = UniformModel.sample(&[2.0], 150, &crn).unwrap();
    let observed = UniformModel.measure(x.view()).unwrap();
    let d = observed_discrepancy(&observed, &[2.0], &UniformModel, 150, &SinkhornConfig::default(), &crn).unwrap();
    assert!(d.abs() <= 1e-9, "{d}");
}

#[test]
fn diagnostics_of_identical_measures_vanish() {
    let mut rng = RandomSource::new(70).rng();
    let pts = Array2::from_shape_fn((50, 3), |_| open01(&mut rng));
    let mu = EmpiricalMeasure::uniform(pts).unwrap();
    let reference = exceed::diagnostics::sample_unit_ball(40, 3, &RandomSource::new(71)).unwrap();
    let diag = diagnostics_at(&reference, &mu, &mu, 1e-2, false).unwrap();
    assert!(diag.e_stat.abs() <= 1e-9 && diag.f_stat.abs() <= 1e-9);
}

#[test]
fn type7_quantiles_match_reference_values() {
    // R: quantile(c(1, 2, 3, 4), c(0.3, 0.5, 0.9), type = 7)
    let v = [1.0, 2.0, 3.0, 4.0];
    assert_relative_eq!(quantile_type7(&v, 0.3), 1.9, epsilon = 1e-12);
    assert_relative_eq!(quantile_type7(&v, 0.5), 2.5, epsilon = 1e-12);
    assert_relative_eq!(quantile_type7(&v, 0.9), 3.7, epsilon = 1e-12);
}

#[test]
fn standardized_exceedances_leave_the_unit_box() {
    let mgpd = MgpdModel::new(GeneratorSpec::gumbel(vec![1.0, 0.5]).unwrap(), false).unwrap();
    let x = mgpd.sample(&[1.0, 2.0, 0.1, -0.2], 500, &RandomSource::new(80)).unwrap();
    let cfg = ThresholdConfig::new(0.8, ThresholdMode::Continuous).unwrap();
    let exc = standardize(x.view(), &cfg, None).unwrap();
    assert!(exc.n_exceedances > 0);
    for r in exc.sample.rows() {
        assert!(r.iter().cloned().fold(f64::NEG_INFINITY, f64::max) > 1.0 - 1e-12);
    }
}

#[test]
fn geometric_maximum_is_memoryless() {
    let radial = GeometricRadial::default();
    let mut rng = RandomSource::new(90).rng();
    let draws: Vec<f64> = (0..200_000).map(|_| radial.sample(&mut rng)).collect();
    let tail = |a: f64| draws.iter().filter(|g| **g >= a).count() as f64;
    for (a, b) in [(1.0, 1.0), (2.0, 1.0), (1.0, 2.0)] {
        let conditional = tail(a + b) / tail(a);
        let marginal = tail(b) / draws.len() as f64;
        assert!((conditional - marginal).abs() < 0.01, "a {a} b {b}: {conditional} vs {marginal}");
        assert!((marginal - (-b).exp()).abs() < 0.01);
    }
}
