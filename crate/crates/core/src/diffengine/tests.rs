use super::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type Build = dyn Fn(&mut Graph, &[Var]) -> Result<Var>;

fn normal(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Evaluates `sum(w ∘ build(inputs))` so any output shape reduces to a scalar.
fn eval(inputs: &[(usize, usize, Vec<f64>)], w: &[f64], build: &Build) -> (Graph, Vec<Var>, Var) {
    let mut g = Graph::new();
    let vars: Vec<Var> =
        inputs.iter().map(|(r, c, d)| g.parameter(*r, *c, d.clone()).unwrap()).collect();
    let out = build(&mut g, &vars).unwrap();
    let s = g.shape(out);
    let wv = g.constant(s.rows, s.cols, w.to_vec()).unwrap();
    let prod = g.hadamard(out, wv).unwrap();
    let loss = g.sum(prod);
    (g, vars, loss)
}

fn out_len(inputs: &[(usize, usize, Vec<f64>)], build: &Build) -> usize {
    let mut g = Graph::new();
    let vars: Vec<Var> =
        inputs.iter().map(|(r, c, d)| g.parameter(*r, *c, d.clone()).unwrap()).collect();
    let out = build(&mut g, &vars).unwrap();
    g.shape(out).len()
}

/// Central-difference check over 20 random instances.
fn gradcheck(
    name: &str,
    seed: u64,
    draw: impl Fn(&mut ChaCha8Rng) -> Vec<(usize, usize, Vec<f64>)>,
    build: &Build,
) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for instance in 0..20 {
        let inputs = draw(&mut rng);
        let w = normal(&mut rng, out_len(&inputs, build));
        let (g, vars, loss) = eval(&inputs, &w, build);
        let grads = g.backward(loss).unwrap();
        for (k, (r, c, data)) in inputs.iter().enumerate() {
            let analytic = grads.get_or_zeros(vars[k], r * c);
            let mut numeric = vec![0.0; data.len()];
            for i in 0..data.len() {
                let h = 1e-6 * data[i].abs().max(1.0);
                let mut plus = inputs.clone();
                plus[k].2[i] += h;
                let mut minus = inputs.clone();
                minus[k].2[i] -= h;
                let (gp, _, lp) = eval(&plus, &w, build);
                let (gm, _, lm) = eval(&minus, &w, build);
                numeric[i] = (gp.scalar(lp) - gm.scalar(lm)) / (2.0 * h);
            }
            let diff: f64 = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let scale = analytic
                .iter()
                .map(|a| a * a)
                .sum::<f64>()
                .sqrt()
                .max(numeric.iter().map(|a| a * a).sum::<f64>().sqrt())
                .max(1e-8);
            assert!(
                diff / scale < 1e-4,
                "{name}: instance {instance}, input {k}: rel err {} ({analytic:?} vs {numeric:?})",
                diff / scale
            );
        }
    }
}

fn mats(shapes: &'static [(usize, usize)]) -> impl Fn(&mut ChaCha8Rng) -> Vec<(usize, usize, Vec<f64>)> {
    move |rng| shapes.iter().map(|&(r, c)| (r, c, normal(rng, r * c))).collect()
}

#[test]
fn grad_add_sub_hadamard() {
    gradcheck("add", 1, mats(&[(3, 4), (3, 4)]), &|g, v| g.add(v[0], v[1]));
    gradcheck("sub", 2, mats(&[(3, 4), (3, 4)]), &|g, v| g.sub(v[0], v[1]));
    gradcheck("hadamard", 3, mats(&[(3, 4), (3, 4)]), &|g, v| g.hadamard(v[0], v[1]));
    gradcheck("hadamard_self", 4, mats(&[(2, 3)]), &|g, v| g.hadamard(v[0], v[0]));
}

#[test]
fn grad_matmul_transpose_reshape() {
    gradcheck("matmul", 5, mats(&[(3, 5), (5, 2)]), &|g, v| g.matmul(v[0], v[1]));
    gradcheck("transpose", 6, mats(&[(3, 5)]), &|g, v| Ok(g.transpose(v[0])));
    gradcheck("reshape", 7, mats(&[(3, 4)]), &|g, v| g.reshape(v[0], 2, 6));
    gradcheck("gram", 8, mats(&[(3, 4)]), &|g, v| {
        let t = g.transpose(v[0]);
        g.matmul(v[0], t)
    });
}

#[test]
fn grad_concat_slice() {
    gradcheck("concat_cols", 9, mats(&[(3, 2), (3, 4)]), &|g, v| g.concat_cols(&[v[0], v[1], v[0]]));
    gradcheck("concat_rows", 10, mats(&[(2, 3), (4, 3)]), &|g, v| g.concat_rows(&[v[1], v[0]]));
    gradcheck("slice_cols", 11, mats(&[(3, 6)]), &|g, v| g.slice_cols(v[0], 2, 3));
    gradcheck("slice_rows", 12, mats(&[(5, 3)]), &|g, v| g.slice_rows(v[0], 1, 3));
}

#[test]
fn grad_scaling_and_broadcast() {
    gradcheck("affine", 13, mats(&[(3, 3)]), &|g, v| Ok(g.affine(v[0], -1.7, 0.3)));
    gradcheck("scale_by", 14, mats(&[(3, 3), (1, 1)]), &|g, v| g.scale_by(v[0], v[1]));
    gradcheck("add_row", 15, mats(&[(4, 3), (1, 3)]), &|g, v| g.add_row(v[0], v[1]));
    gradcheck("mul_row", 16, mats(&[(4, 3), (1, 3)]), &|g, v| g.mul_row(v[0], v[1]));
}

#[test]
fn grad_pointwise() {
    gradcheck("exp", 17, mats(&[(3, 3)]), &|g, v| Ok(g.exp(v[0])));
    gradcheck("sigmoid", 18, mats(&[(3, 3)]), &|g, v| Ok(g.sigmoid(v[0])));
    gradcheck("gelu", 19, mats(&[(3, 3)]), &|g, v| Ok(g.gelu(v[0])));
    gradcheck("relu", 20, mats(&[(3, 3)]), &|g, v| Ok(g.relu(v[0])));
    gradcheck("square", 21, mats(&[(3, 3)]), &|g, v| Ok(g.square(v[0])));
    let positive = |rng: &mut ChaCha8Rng| {
        let d = normal(rng, 9).into_iter().map(|x| x.abs() * 3.0 + 0.01).collect();
        vec![(3, 3, d)]
    };
    gradcheck("log1p", 22, positive, &|g, v| Ok(g.log1p(v[0])));
    let wide = |rng: &mut ChaCha8Rng| {
        let d = normal(rng, 9).into_iter().map(|x| (x * 2.5).exp()).collect();
        vec![(3, 3, d)]
    };
    gradcheck("bessel_ratio", 23, wide, &|g, v| g.bessel_ratio(v[0]));
}

#[test]
fn grad_row_normalizers() {
    gradcheck("softmax_rows", 24, mats(&[(3, 5)]), &|g, v| Ok(g.softmax_rows(v[0])));
    gradcheck("layer_norm_rows", 25, mats(&[(3, 5)]), &|g, v| Ok(g.layer_norm_rows(v[0])));
}

#[test]
fn grad_reductions() {
    gradcheck("sum", 26, mats(&[(3, 4)]), &|g, v| Ok(g.sum(v[0])));
    gradcheck("mean", 27, mats(&[(3, 4)]), &|g, v| Ok(g.mean(v[0])));
}

#[test]
fn grad_complex_primitives() {
    gradcheck("magnitude", 28, mats(&[(3, 4), (3, 4)]), &|g, v| g.magnitude(v[0], v[1]));
    gradcheck("phase_re", 29, mats(&[(3, 4), (3, 4), (3, 4)]), &|g, v| {
        Ok(g.phase_apply(v[0], v[1], v[2])?.0)
    });
    gradcheck("phase_im", 30, mats(&[(3, 4), (3, 4), (3, 4)]), &|g, v| {
        Ok(g.phase_apply(v[0], v[1], v[2])?.1)
    });
}

#[test]
fn grad_composite_attention() {
    gradcheck("attention", 31, mats(&[(4, 3), (3, 3), (3, 3)]), &|g, v| {
        let q = g.matmul(v[0], v[1])?;
        let k = g.matmul(v[0], v[2])?;
        let kt = g.transpose(k);
        let s = g.matmul(q, kt)?;
        let a = g.softmax_rows(s);
        let o = g.matmul(a, v[0])?;
        Ok(g.layer_norm_rows(o))
    });
}

#[test]
fn phase_at_origin_is_zero_phase() {
    let mut g = Graph::new();
    let z = g.parameter(1, 2, vec![2.0, 3.0]).unwrap();
    let re = g.parameter(1, 2, vec![0.0, 0.0]).unwrap();
    let im = g.parameter(1, 2, vec![0.0, 1.0]).unwrap();
    let (pr, pi) = g.phase_apply(z, re, im).unwrap();
    assert_eq!(g.value(pr), &[2.0, 0.0]);
    assert_eq!(g.value(pi), &[0.0, 3.0]);
    let s = g.add(pr, pi).unwrap();
    let loss = g.sum(s);
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.get(re).unwrap()[0], 0.0);
    assert_eq!(grads.get(im).unwrap()[0], 0.0);
    assert_eq!(grads.get(z).unwrap()[0], 1.0);
}

#[test]
fn phase_clamped_below_threshold() {
    let mut g = Graph::new();
    let z = g.constant(1, 1, vec![1.0]).unwrap();
    let re = g.constant(1, 1, vec![1e-14]).unwrap();
    let im = g.constant(1, 1, vec![0.0]).unwrap();
    let (pr, _) = g.phase_apply(z, re, im).unwrap();
    assert!((g.value(pr)[0] - 1e-2).abs() < 1e-15);
}

#[test]
fn magnitude_origin_subgradient() {
    let mut g = Graph::new();
    let re = g.parameter(1, 1, vec![0.0]).unwrap();
    let im = g.parameter(1, 1, vec![0.0]).unwrap();
    let m = g.magnitude(re, im).unwrap();
    let loss = g.sum(m);
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.get(re).unwrap(), &[0.0]);
    assert_eq!(grads.get(im).unwrap(), &[0.0]);
}

#[test]
fn non_scalar_loss_rejected() {
    let mut g = Graph::new();
    let x = g.parameter(2, 2, vec![1.0; 4]).unwrap();
    assert!(matches!(g.backward(x), Err(Error::NonScalarLoss { rows: 2, cols: 2 })));
}

#[test]
fn constants_get_no_gradient() {
    let mut g = Graph::new();
    let a = g.constant(1, 2, vec![1.0, 2.0]).unwrap();
    let b = g.parameter(1, 2, vec![3.0, 4.0]).unwrap();
    let p = g.hadamard(a, b).unwrap();
    let loss = g.sum(p);
    let grads = g.backward(loss).unwrap();
    assert!(grads.get(a).is_none());
    assert_eq!(grads.get(b).unwrap(), &[1.0, 2.0]);
}

#[test]
fn shape_errors() {
    let mut g = Graph::new();
    let a = g.constant(2, 3, vec![0.0; 6]).unwrap();
    let b = g.constant(2, 3, vec![0.0; 6]).unwrap();
    assert!(matches!(g.matmul(a, b), Err(Error::ShapeMismatch { .. })));
    assert!(g.add_row(a, b).is_err());
    assert!(g.reshape(a, 4, 2).is_err());
    assert!(g.slice_cols(a, 2, 2).is_err());
    assert!(g.constant(2, 2, vec![0.0; 3]).is_err());
    let neg = g.constant(1, 1, vec![-1.0]).unwrap();
    assert!(g.bessel_ratio(neg).is_err());
}

#[test]
fn backward_is_deterministic() {
    let run = || {
        let mut g = Graph::new();
        let x = g.parameter(3, 3, (0..9).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let y = g.matmul(x, x).unwrap();
        let z = g.softmax_rows(y);
        let loss = g.mean(z);
        let l2 = g.square(x);
        let l2 = g.sum(l2);
        let total = g.add(loss, l2).unwrap();
        g.backward(total).unwrap().get(x).unwrap().to_vec()
    };
    let a = run();
    let b = run();
    assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
}
