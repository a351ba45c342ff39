//! Static graph linear algebra: adjacency → Laplacian → scaled Laplacian →
//! Chebyshev polynomial filters.

use crate::tensor::{Tape, Tensor};
use crate::{Error, Result};

/// Dense nonnegative adjacency matrix.
#[derive(Debug, Clone)]
pub struct Adjacency {
    n: usize,
    weights: Vec<f64>,
}

impl Adjacency {
    pub fn new(n: usize, weights: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("adjacency", "node count must be >= 1"));
        }
        if weights.len() != n * n {
            return Err(Error::invalid(
                "adjacency",
                format!("expected {} weights for {} nodes, got {}", n * n, n, weights.len()),
            ));
        }
        if weights.iter().any(|&w| w < 0.0 || !w.is_finite()) {
            return Err(Error::invalid(
                "adjacency",
                "weights must be finite and nonnegative",
            ));
        }
        Ok(Self { n, weights })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.n + j]
    }

    /// Materializes the adjacency as a constant on `tape`.
    pub fn to_tensor(&self, tape: &Tape) -> Tensor {
        tape.constant(self.weights.clone(), &[self.n, self.n])
            .expect("adjacency is always square")
    }
}

/// D − A with D = diag(row sums of A). Differentiable in `a`.
pub fn laplacian(a: &Tensor) -> Result<Tensor> {
    let shape = a.shape();
    if shape.len() != 2 || shape[0] != shape[1] {
        return Err(Error::invalid(
            "laplacian",
            format!("square matrix required, got shape {:?}", shape),
        ));
    }
    let degree = a.sum_axis(1)?.diag()?;
    degree.sub(a)
}

/// Dominant-eigenvalue estimate by power iteration on (M+Mᵀ)/2.
///
/// At most 100 iterations with tolerance 1e-6 on the Rayleigh quotient;
/// falls back to 2.0 (with a warning) when not converged, and never
/// returns less than 1e-6. The estimate is detached: no gradient flows
/// through it.
pub fn spectral_radius(m: &Tensor) -> f64 {
    let shape = m.shape();
    assert!(
        shape.len() == 2 && shape[0] == shape[1],
        "spectral_radius needs a square matrix, got {:?}",
        shape
    );
    let n = shape[0];
    let data = m.data();
    let mut sym = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            sym[i * n + j] = 0.5 * (data[i * n + j] + data[j * n + i]);
        }
    }
    // Deterministic start vector with varied entries so it is not
    // orthogonal to the dominant eigenspace for common graph operators.
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.37 * ((i % 7) as f64)).collect();
    let norm0 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in v.iter_mut() {
        *x /= norm0;
    }
    let mut lambda_prev = 0.0;
    for it in 0..100 {
        let mut w = vec![0.0; n];
        for i in 0..n {
            let row = &sym[i * n..(i + 1) * n];
            w[i] = row.iter().zip(&v).map(|(a, b)| a * b).sum();
        }
        let lambda: f64 = v.iter().zip(&w).map(|(a, b)| a * b).sum();
        let wnorm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if wnorm < 1e-300 {
            return 1e-6;
        }
        for (x, y) in v.iter_mut().zip(&w) {
            *x = y / wnorm;
        }
        if it > 0 && (lambda - lambda_prev).abs() <= 1e-6 * lambda.abs().max(1.0) {
            return lambda.abs().max(1e-6);
        }
        lambda_prev = lambda;
    }
    static WARNED: std::sync::atomic::AtomicBool = std::sync::atomic::AtomicBool::new(false);
    if !WARNED.swap(true, std::sync::atomic::Ordering::Relaxed) {
        eprintln!(
            "warning: power iteration did not converge in 100 iterations; \
             using gamma_max = 2 (suppressing further warnings)"
        );
    }
    2.0
}

/// 2L/γ_max − I together with the spectral estimate it was built from.
pub struct ScaledLaplacian {
    pub matrix: Tensor,
    pub gamma_max: f64,
    pub n: usize,
}

pub fn scale_laplacian(l: &Tensor, gamma_max: f64) -> Result<ScaledLaplacian> {
    if gamma_max <= 0.0 {
        return Err(Error::invalid(
            "scale_laplacian",
            format!("gamma_max must be positive, got {gamma_max}"),
        ));
    }
    let shape = l.shape();
    if shape.len() != 2 || shape[0] != shape[1] {
        return Err(Error::invalid(
            "scale_laplacian",
            format!("square matrix required, got shape {:?}", shape),
        ));
    }
    let n = shape[0];
    let eye = l.tape().eye(n);
    let matrix = l.mul_const(2.0 / gamma_max).sub(&eye)?;
    Ok(ScaledLaplacian {
        matrix,
        gamma_max,
        n,
    })
}

/// Chebyshev filter parameters: per-order scalar gates θ_k and weight
/// matrices Θ_k of shared shape d_in×d_out.
pub struct ChebCoeffs {
    /// K scalar tensors of shape [1].
    pub theta: Vec<Tensor>,
    /// K matrices of shape [d_in, d_out].
    pub weights: Vec<Tensor>,
}

impl ChebCoeffs {
    pub fn order(&self) -> usize {
        self.theta.len()
    }

    fn validate(&self, op: &'static str) -> Result<(usize, usize)> {
        if self.theta.is_empty() || self.theta.len() != self.weights.len() {
            return Err(Error::invalid(
                op,
                format!(
                    "need K >= 1 with matching theta/weights, got {} and {}",
                    self.theta.len(),
                    self.weights.len()
                ),
            ));
        }
        let ws = self.weights[0].shape();
        for w in &self.weights {
            if w.shape() != ws {
                return Err(Error::invalid(op, "weight matrices must share one shape"));
            }
        }
        Ok((ws[0], ws[1]))
    }
}

/// Σ_{k<K} θ_k · T_k(L̃) · X · Θ_k over a single snapshot X [N, d_in],
/// using the recurrence T_0 = I, T_1 = L̃, T_k = 2·L̃·T_{k−1} − T_{k−2}
/// applied directly to the propagated features.
pub fn cheb_conv(x: &Tensor, lt: &ScaledLaplacian, coeffs: &ChebCoeffs) -> Result<Tensor> {
    let (d_in, _) = coeffs.validate("cheb_conv")?;
    let xs = x.shape();
    if xs.len() != 2 || xs[0] != lt.n || xs[1] != d_in {
        return Err(Error::ShapeMismatch {
            op: "cheb_conv",
            lhs: xs,
            rhs: vec![lt.n, d_in],
        });
    }
    cheb_accumulate(x, lt, coeffs)
}

/// Chebyshev convolution applied independently at each step of a sequence
/// X [N, T, d_in]; equivalent to running [`cheb_conv`] per step, but with
/// the node-mixing products batched across the whole sequence.
pub fn cheb_conv_seq(x: &Tensor, lt: &ScaledLaplacian, coeffs: &ChebCoeffs) -> Result<Tensor> {
    let (d_in, d_out) = coeffs.validate("cheb_conv_seq")?;
    let xs = x.shape();
    if xs.len() != 3 || xs[0] != lt.n || xs[2] != d_in {
        return Err(Error::ShapeMismatch {
            op: "cheb_conv_seq",
            lhs: xs,
            rhs: vec![lt.n, 0, d_in],
        });
    }
    let (n, t) = (xs[0], xs[1]);
    // [N, T, d] rows are contiguous, so node mixing is one [N, T·d] product.
    let flat = x.reshape(&[n, t * d_in])?;
    let out = cheb_accumulate(&flat, lt, coeffs)?;
    out.reshape(&[n, t, d_out])
}

fn cheb_accumulate(x_flat: &Tensor, lt: &ScaledLaplacian, coeffs: &ChebCoeffs) -> Result<Tensor> {
    let order = coeffs.order();
    let xs = x_flat.shape();
    let (n, cols) = (xs[0], xs[1]);
    let d_in = coeffs.weights[0].shape()[0];
    let steps = cols / d_in;

    let term = |tk_x: &Tensor, k: usize| -> Result<Tensor> {
        // (T_k X) [N, steps·d_in] → per-step feature map by Θ_k, gated by θ_k.
        let per_step = tk_x.reshape(&[n * steps, d_in])?;
        let mapped = per_step.matmul(&coeffs.weights[k])?;
        let d_out = coeffs.weights[k].shape()[1];
        mapped.reshape(&[n, steps * d_out])?.mul(&coeffs.theta[k])
    };

    let mut tk_prev2 = x_flat.clone(); // T_0 · X
    let mut acc = term(&tk_prev2, 0)?;
    if order == 1 {
        return Ok(acc);
    }
    let mut tk_prev1 = lt.matrix.matmul(x_flat)?; // T_1 · X
    acc = acc.add(&term(&tk_prev1, 1)?)?;
    for k in 2..order {
        let tk = lt
            .matrix
            .matmul(&tk_prev1)?
            .mul_const(2.0)
            .sub(&tk_prev2)?;
        acc = acc.add(&term(&tk, k)?)?;
        tk_prev2 = tk_prev1;
        tk_prev1 = tk;
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ring4_laplacian(tape: &Tape) -> Tensor {
        let ring = Adjacency::new(
            4,
            vec![
                0.0, 1.0, 0.0, 1.0, //
                1.0, 0.0, 1.0, 0.0, //
                0.0, 1.0, 0.0, 1.0, //
                1.0, 0.0, 1.0, 0.0,
            ],
        )
        .unwrap();
        laplacian(&ring.to_tensor(tape)).unwrap()
    }

    #[test]
    fn laplacian_two_node_edge() {
        let tape = Tape::new();
        let a = Adjacency::new(2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let l = laplacian(&a.to_tensor(&tape)).unwrap();
        assert_eq!(l.data(), vec![1.0, -1.0, -1.0, 1.0]);
    }

    #[test]
    fn laplacian_edgeless_is_zero() {
        let tape = Tape::new();
        let a = Adjacency::new(3, vec![0.0; 9]).unwrap();
        let l = laplacian(&a.to_tensor(&tape)).unwrap();
        assert!(l.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn laplacian_ring4() {
        let tape = Tape::new();
        let l = ring4_laplacian(&tape);
        let expect = vec![
            2.0, -1.0, 0.0, -1.0, //
            -1.0, 2.0, -1.0, 0.0, //
            0.0, -1.0, 2.0, -1.0, //
            -1.0, 0.0, -1.0, 2.0,
        ];
        assert_eq!(l.data(), expect);
    }

    #[test]
    fn spectral_radius_known_values() {
        let tape = Tape::new();
        let m = tape
            .constant(vec![1.0, -1.0, -1.0, 1.0], &[2, 2])
            .unwrap();
        assert!((spectral_radius(&m) - 2.0).abs() < 1e-6);
        assert!((spectral_radius(&tape.eye(5)) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn spectral_radius_matches_eigen_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 6;
        let mut m = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v = rng.gen_range(-1.0..1.0);
                m[i * n + j] = v;
                m[j * n + i] = v;
            }
        }
        let tape = Tape::new();
        let mt = tape.constant(m.clone(), &[n, n]).unwrap();
        let estimate = spectral_radius(&mt);
        let (eig, _) = oracle::jacobi_eigen(&m, n);
        let dominant = eig.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        assert!(
            (estimate - dominant).abs() < 1e-4,
            "power iteration {estimate} vs oracle {dominant}"
        );
    }

    #[test]
    fn scale_laplacian_examples() {
        let tape = Tape::new();
        let l = tape
            .constant(vec![1.0, -1.0, -1.0, 1.0], &[2, 2])
            .unwrap();
        let lt = scale_laplacian(&l, 2.0).unwrap();
        assert_eq!(lt.matrix.data(), vec![0.0, -1.0, -1.0, 0.0]);

        let z = tape.zeros(&[3, 3]);
        let lt = scale_laplacian(&z, 2.0).unwrap();
        let mut neg_eye = vec![0.0; 9];
        for i in 0..3 {
            neg_eye[i * 3 + i] = -1.0;
        }
        assert_eq!(lt.matrix.data(), neg_eye);

        assert!(scale_laplacian(&z, 0.0).is_err());
        assert!(scale_laplacian(&z, -1.0).is_err());
    }

    #[test]
    fn scaled_ring_spectrum_in_unit_interval() {
        let tape = Tape::new();
        let l = ring4_laplacian(&tape);
        let gamma = spectral_radius(&l);
        let lt = scale_laplacian(&l, gamma).unwrap();
        let (eig, _) = oracle::jacobi_eigen(&lt.matrix.data(), 4);
        for e in eig {
            assert!(
                (-1.0 - 1e-6..=1.0 + 1e-6).contains(&e),
                "eigenvalue {e} outside [-1, 1]"
            );
        }
    }

    fn random_coeffs(tape: &Tape, rng: &mut ChaCha8Rng, k: usize, d_in: usize, d_out: usize) -> ChebCoeffs {
        let theta: Vec<Tensor> = (0..k)
            .map(|_| tape.constant(vec![rng.gen_range(0.5..1.5)], &[1]).unwrap())
            .collect();
        let weights: Vec<Tensor> = (0..k)
            .map(|_| {
                let data: Vec<f64> = (0..d_in * d_out).map(|_| rng.gen_range(-1.0..1.0)).collect();
                tape.constant(data, &[d_in, d_out]).unwrap()
            })
            .collect();
        ChebCoeffs { theta, weights }
    }

    #[test]
    fn cheb_conv_order_one_is_pure_feature_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let tape = Tape::new();
        let n = 5;
        let (d_in, d_out) = (3, 2);
        let x_data: Vec<f64> = (0..n * d_in).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = tape.constant(x_data.clone(), &[n, d_in]).unwrap();
        let l = tape.constant(vec![0.25; n * n], &[n, n]).unwrap();
        let lt = scale_laplacian(&l, 1.0).unwrap();
        let c = random_coeffs(&tape, &mut rng, 1, d_in, d_out);
        let got = cheb_conv(&x, &lt, &c).unwrap();
        let theta0 = c.theta[0].item();
        let expect = oracle::matmul_reference(&x_data, &c.weights[0].data(), n, d_in, d_out);
        for (g, e) in got.data().iter().zip(expect) {
            assert!((g - theta0 * e).abs() < 1e-12);
        }
    }

    #[test]
    fn cheb_conv_zero_operator_drops_odd_terms() {
        // K=2 with L̃ = 0: the T_1 term vanishes.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let tape = Tape::new();
        let n = 4;
        let (d_in, d_out) = (3, 3);
        let x_data: Vec<f64> = (0..n * d_in).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = tape.constant(x_data.clone(), &[n, d_in]).unwrap();
        let zero = tape.zeros(&[n, n]);
        let lt = ScaledLaplacian {
            matrix: zero,
            gamma_max: 1.0,
            n,
        };
        let c = random_coeffs(&tape, &mut rng, 2, d_in, d_out);
        let got = cheb_conv(&x, &lt, &c).unwrap();
        let theta0 = c.theta[0].item();
        let expect = oracle::matmul_reference(&x_data, &c.weights[0].data(), n, d_in, d_out);
        for (g, e) in got.data().iter().zip(expect) {
            assert!((g - theta0 * e).abs() < 1e-12);
        }
    }

    #[test]
    fn cheb_conv_matches_explicit_polynomial() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 6;
        let (d_in, d_out) = (3, 2);
        // Random symmetric operator scaled into the Chebyshev domain.
        let mut m = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v = rng.gen_range(-0.5..0.5);
                m[i * n + j] = v;
                m[j * n + i] = v;
            }
        }
        let tape = Tape::new();
        let lt = ScaledLaplacian {
            matrix: tape.constant(m.clone(), &[n, n]).unwrap(),
            gamma_max: 1.0,
            n,
        };
        let x_data: Vec<f64> = (0..n * d_in).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = tape.constant(x_data.clone(), &[n, d_in]).unwrap();
        let c = random_coeffs(&tape, &mut rng, 3, d_in, d_out);
        let got = cheb_conv(&x, &lt, &c).unwrap();
        let theta: Vec<f64> = c.theta.iter().map(|t| t.item()).collect();
        let weights: Vec<Vec<f64>> = c.weights.iter().map(|w| w.data()).collect();
        let expect =
            oracle::cheb_conv_explicit(&m, n, &x_data, d_in, &theta, &weights, d_out);
        for (g, e) in got.data().iter().zip(expect) {
            assert!((g - e).abs() < 1e-10, "{g} vs {e}");
        }
    }

    #[test]
    fn cheb_recurrence_matches_eigen_route() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 5;
        let mut m = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v = rng.gen_range(-0.4..0.4);
                m[i * n + j] = v;
                m[j * n + i] = v;
            }
        }
        let rec = oracle::cheb_matrices_by_recurrence(&m, n, 6);
        let eig = oracle::cheb_matrices_by_eigen(&m, n, 6);
        for k in 0..6 {
            for (a, b) in rec[k].iter().zip(&eig[k]) {
                assert!((a - b).abs() < 1e-8, "k={k}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn cheb_conv_is_linear_in_features() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 6;
        let (d_in, d_out) = (2, 2);
        let mut m = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v = rng.gen_range(-0.3..0.3);
                m[i * n + j] = v;
                m[j * n + i] = v;
            }
        }
        let tape = Tape::new();
        let lt = ScaledLaplacian {
            matrix: tape.constant(m, &[n, n]).unwrap(),
            gamma_max: 1.0,
            n,
        };
        let c = random_coeffs(&tape, &mut rng, 3, d_in, d_out);
        let x1: Vec<f64> = (0..n * d_in).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x2: Vec<f64> = (0..n * d_in).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (a, b) = (2.5, -1.25);
        let combo: Vec<f64> = x1.iter().zip(&x2).map(|(&u, &v)| a * u + b * v).collect();
        let y1 = cheb_conv(&tape.constant(x1, &[n, d_in]).unwrap(), &lt, &c).unwrap();
        let y2 = cheb_conv(&tape.constant(x2, &[n, d_in]).unwrap(), &lt, &c).unwrap();
        let yc = cheb_conv(&tape.constant(combo, &[n, d_in]).unwrap(), &lt, &c).unwrap();
        for ((u, v), w) in y1.data().iter().zip(y2.data()).zip(yc.data()) {
            assert!((a * u + b * v - w).abs() < 1e-10);
        }
    }

    #[test]
    fn cheb_conv_seq_equals_per_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (n, t, d_in, d_out) = (4, 5, 3, 2);
        let mut m = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v = rng.gen_range(-0.3..0.3);
                m[i * n + j] = v;
                m[j * n + i] = v;
            }
        }
        let tape = Tape::new();
        let lt = ScaledLaplacian {
            matrix: tape.constant(m, &[n, n]).unwrap(),
            gamma_max: 1.0,
            n,
        };
        let c = random_coeffs(&tape, &mut rng, 3, d_in, d_out);
        let x_data: Vec<f64> = (0..n * t * d_in).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = tape.constant(x_data.clone(), &[n, t, d_in]).unwrap();
        let seq = cheb_conv_seq(&x, &lt, &c).unwrap();
        let seq_data = seq.data();
        for step in 0..t {
            let mut snap = vec![0.0; n * d_in];
            for node in 0..n {
                for f in 0..d_in {
                    snap[node * d_in + f] = x_data[(node * t + step) * d_in + f];
                }
            }
            let xt = tape.constant(snap, &[n, d_in]).unwrap();
            let per = cheb_conv(&xt, &lt, &c).unwrap().data();
            for node in 0..n {
                for f in 0..d_out {
                    let a = seq_data[(node * t + step) * d_out + f];
                    let b = per[node * d_out + f];
                    assert!((a - b).abs() < 1e-12, "step {step}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn cheb_conv_gradients_pass_fd_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 4;
        let (d_in, d_out) = (2, 2);
        let mut m = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v = rng.gen_range(-0.3..0.3);
                m[i * n + j] = v;
                m[j * n + i] = v;
            }
        }
        let x0: Vec<f64> = (0..n * d_in).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w0: Vec<f64> = (0..d_in * d_out).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w1: Vec<f64> = (0..d_in * d_out).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let m2 = m.clone();

        // Gradient wrt the node features.
        let (w0c, w1c) = (w0.clone(), w1.clone());
        let err_x = crate::tensor::gradient_check(&x0, &[n, d_in], move |tape, x| {
            let lt = ScaledLaplacian {
                matrix: tape.constant(m2.clone(), &[n, n])?,
                gamma_max: 1.0,
                n,
            };
            let c = ChebCoeffs {
                theta: vec![tape.constant(vec![1.1], &[1])?, tape.constant(vec![0.7], &[1])?],
                weights: vec![
                    tape.constant(w0c.clone(), &[d_in, d_out])?,
                    tape.constant(w1c.clone(), &[d_in, d_out])?,
                ],
            };
            Ok(cheb_conv(x, &lt, &c)?.sum_all())
        })
        .unwrap();
        assert!(err_x < 1e-4, "x gradient error {err_x}");

        // Gradient wrt one weight matrix and both theta gates.
        let (m3, x1) = (m.clone(), x0.clone());
        let w1c = w1.clone();
        let err_w = crate::tensor::gradient_check(&w0, &[d_in, d_out], move |tape, w| {
            let lt = ScaledLaplacian {
                matrix: tape.constant(m3.clone(), &[n, n])?,
                gamma_max: 1.0,
                n,
            };
            let c = ChebCoeffs {
                theta: vec![tape.constant(vec![1.1], &[1])?, tape.constant(vec![0.7], &[1])?],
                weights: vec![w.clone(), tape.constant(w1c.clone(), &[d_in, d_out])?],
            };
            let x = tape.constant(x1.clone(), &[n, d_in])?;
            Ok(cheb_conv(&x, &lt, &c)?.sum_all())
        })
        .unwrap();
        assert!(err_w < 1e-4, "weight gradient error {err_w}");

        let err_theta = crate::tensor::gradient_check(&[1.1, 0.7], &[2], move |tape, th| {
            let lt = ScaledLaplacian {
                matrix: tape.constant(m.clone(), &[n, n])?,
                gamma_max: 1.0,
                n,
            };
            let t0 = th.reshape(&[2])?;
            // Split the two gates out of the checked vector.
            let gate = |i: usize| -> Result<Tensor> {
                let mask: Vec<f64> = (0..2).map(|j| if j == i { 1.0 } else { 0.0 }).collect();
                let sel = tape.constant(mask, &[2])?;
                Ok(t0.mul(&sel)?.sum_all())
            };
            let c = ChebCoeffs {
                theta: vec![gate(0)?, gate(1)?],
                weights: vec![
                    tape.constant(w0.clone(), &[d_in, d_out])?,
                    tape.constant(w1.clone(), &[d_in, d_out])?,
                ],
            };
            let x = tape.constant(x0.clone(), &[n, d_in])?;
            Ok(cheb_conv(&x, &lt, &c)?.sum_all())
        })
        .unwrap();
        assert!(err_theta < 1e-4, "theta gradient error {err_theta}");
    }
}
