mod common;

use common::suite_check;
use transopt::fnsuite::{make_instance, ClassId, InstanceSpec};
use transopt::sampling::{build_design, Multiplier};

#[test]
fn optimum_value_and_rotations_across_dimensions() {
    let c = suite_check(&[2, 3, 5, 20], 20, 20, 11);
    assert_eq!(c.instances, 24 * 20 * 4);
    assert_eq!(c.non_finite, 0);
    assert!(
        c.opt_ratio <= 1.0,
        "worst |f(x_opt) - f_opt| / tol = {}",
        c.opt_ratio
    );
    assert!(
        c.orthogonality < 1e-9,
        "orthogonality {:e}",
        c.orthogonality
    );
}

#[test]
fn instances_are_pure_functions_of_their_spec() {
    for class in [1, 9, 21, 24] {
        let spec = InstanceSpec::new(class, 77, 4).unwrap();
        let (a, b) = (make_instance(spec), make_instance(spec));
        assert_eq!(a.x_opt(), b.x_opt());
        assert_eq!(a.rotation(), b.rotation());
        assert_eq!(a.f_opt().to_bits(), b.f_opt().to_bits());
    }
}

/// Mean sorted-y profile of `n` d=3 designs per class, and its standard error.
fn class_profiles(n: u64) -> Vec<(Vec<f64>, Vec<f64>)> {
    let m = Multiplier::new(50).unwrap();
    ClassId::all()
        .map(|c| {
            let curves: Vec<Vec<f64>> = (1..=n)
                .map(|i| {
                    let inst = make_instance(InstanceSpec::new(c.get(), i, 3).unwrap());
                    let mut y = build_design(&inst, m, 5).unwrap().y;
                    y.sort_by(f64::total_cmp);
                    y
                })
                .collect();
            let s = curves[0].len();
            let nf = n as f64;
            let mean: Vec<f64> = (0..s)
                .map(|k| curves.iter().map(|c| c[k]).sum::<f64>() / nf)
                .collect();
            let se: Vec<f64> = (0..s)
                .map(|k| {
                    let var =
                        curves.iter().map(|c| (c[k] - mean[k]).powi(2)).sum::<f64>() / (nf - 1.0);
                    (var / nf).sqrt()
                })
                .collect();
            (mean, se)
        })
        .collect()
}

// Loose check: most classes' mean profiles stand apart from every other
// class by more than three standard errors somewhere along the curve.
#[test]
fn classes_are_distinguishable_on_average() {
    let p = class_profiles(100);
    let separated = |a: usize, b: usize| {
        (0..p[a].0.len()).any(|k| {
            let noise = (p[a].1[k].powi(2) + p[b].1[k].powi(2)).sqrt();
            (p[a].0[k] - p[b].0[k]).abs() > 3.0 * noise.max(1e-12)
        })
    };
    let distinct = (0..24)
        .filter(|&a| (0..24).all(|b| a == b || separated(a, b)))
        .count();
    assert!(distinct >= 20, "only {distinct} of 24 classes stand apart");
}
