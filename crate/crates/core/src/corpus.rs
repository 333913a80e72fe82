//! Bundled example models and seeded synthetic data for them.
//!
//! All randomness comes from ChaCha20 (`rand_chacha::ChaCha20Rng`) seeded
//! with `seed_from_u64`, so an instance is bitwise reproducible from its
//! name, sizes and seed.

use crate::error::ModelError;
use crate::eval::{scalar_value, Env, Value};
use crate::parser::parse_model;
use crate::reformulate::{build, CompileOptions, CompiledProblem};
use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use std::collections::BTreeMap;

/// A model file shipped with the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorpusModel {
    pub name: &'static str,
    pub title: &'static str,
    pub text: &'static str,
}

const MODELS: [CorpusModel; 8] = [
    CorpusModel {
        name: "logreg-l1",
        title: "l1-regularized logistic regression",
        text: include_str!("../corpus/logreg_l1.model"),
    },
    CorpusModel {
        name: "logreg-l2",
        title: "l2-regularized logistic regression",
        text: include_str!("../corpus/logreg_l2.model"),
    },
    CorpusModel {
        name: "svm",
        title: "support vector machine (dual)",
        text: include_str!("../corpus/svm.model"),
    },
    CorpusModel {
        name: "elastic-net",
        title: "elastic net",
        text: include_str!("../corpus/elastic_net.model"),
    },
    CorpusModel {
        name: "nnls",
        title: "non-negative least squares",
        text: include_str!("../corpus/nnls.model"),
    },
    CorpusModel {
        name: "symnmf",
        title: "symmetric non-negative matrix factorization",
        text: include_str!("../corpus/symnmf.model"),
    },
    CorpusModel {
        name: "nonlinear-ls",
        title: "non-linear least squares",
        text: include_str!("../corpus/nonlinear_ls.model"),
    },
    CorpusModel {
        name: "compressed-sensing",
        title: "compressed sensing (basis pursuit)",
        text: include_str!("../corpus/compressed_sensing.model"),
    },
];

/// Soft-margin SVM dual with the `a <= c` box.
pub const SVM_BOX: CorpusModel = CorpusModel {
    name: "svm-box",
    title: "soft-margin support vector machine (dual)",
    text: include_str!("../corpus/svm_box.model"),
};

/// The eight example models.
pub fn list_models() -> &'static [CorpusModel] {
    &MODELS
}

pub fn model(name: &str) -> Option<CorpusModel> {
    MODELS.iter().copied().chain([SVM_BOX]).find(|m| m.name == name)
}

/// Names accepted by [`generate`].
pub const GENERATORS: [&str; 10] = [
    "logreg-l1",
    "logreg-l2",
    "svm",
    "svm-box",
    "elastic-net",
    "nnls-i",
    "nnls-ii",
    "symnmf",
    "nonlinear-ls",
    "compressed-sensing",
];

/// Data for one model plus whatever is known about its solution.
#[derive(Debug, Clone)]
pub struct GeneratedInstance {
    pub name: String,
    pub model: CorpusModel,
    pub data: Env,
    /// Variable sizes the data does not determine.
    pub dims: BTreeMap<String, (usize, usize)>,
    /// Starting point, where zero is a poor choice.
    pub init: Env,
    /// Planted solution or generating parameters, by name.
    pub truth: Env,
    pub optimal_value: Option<f64>,
    pub seed: u64,
}

impl GeneratedInstance {
    fn new(name: &str, model: CorpusModel, seed: u64) -> Self {
        GeneratedInstance {
            name: name.to_string(),
            model,
            data: Env::new(),
            dims: BTreeMap::new(),
            init: Env::new(),
            truth: Env::new(),
            optimal_value: None,
            seed,
        }
    }

    /// Parse, desmooth and compile the instance's model against its data.
    pub fn build(&self) -> Result<CompiledProblem, ModelError> {
        let spec = parse_model(self.model.text)?;
        let opts = CompileOptions {
            dims: self.dims.clone(),
            init: self.init.clone(),
        };
        build(&spec, &self.data, &opts)
    }
}

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

fn gaussian(rng: &mut ChaCha20Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn uniform(rng: &mut ChaCha20Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random::<f64>())
}

fn sparse(rng: &mut ChaCha20Rng, n: usize, nnz: usize, mut draw: impl FnMut(&mut ChaCha20Rng) -> f64) -> DVector<f64> {
    let mut x = DVector::zeros(n);
    let mut idx = sample(rng, n, nnz).into_vec();
    idx.sort_unstable();
    for i in idx {
        x[i] = draw(rng);
    }
    x
}

fn column(v: DVector<f64>) -> Value {
    let n = v.len();
    Value::from_column_slice(n, 1, v.as_slice())
}

/// Generate an instance at its default desk-scale size.
pub fn generate(name: &str, seed: u64) -> Option<GeneratedInstance> {
    Some(match name {
        "logreg-l1" => gen_logreg(true, 200, 20, seed),
        "logreg-l2" => gen_logreg(false, 200, 20, seed),
        "svm" => gen_svm(false, 100, seed),
        "svm-box" => gen_svm(true, 200, seed),
        "elastic-net" => gen_elasticnet(200, 200, seed),
        "nnls-i" => gen_nnls(NnlsVariant::I, 100, 300, seed),
        "nnls-ii" => gen_nnls(NnlsVariant::Ii, 300, 150, seed),
        "symnmf" => gen_symnmf(50, 5, seed),
        "nonlinear-ls" => gen_nonlinear_ls(40, 5, seed),
        "compressed-sensing" => gen_compressed_sensing(150, 200, 15, seed),
        _ => return None,
    })
}

/// Coefficients `β_j = (−1)^j exp(−j/10)`, `j = 1..n`.
pub fn elasticnet_beta(n: usize) -> DVector<f64> {
    DVector::from_fn(n, |i, _| {
        let j = (i + 1) as f64;
        let sign = if (i + 1) % 2 == 0 { 1.0 } else { -1.0 };
        sign * (-j / 10.0).exp()
    })
}

/// Gaussian design, `y = Xβ + k z` with `k` chosen so that
/// `‖Xβ‖² / ‖k z‖² = 3`. Penalties follow the usual
/// `1/(2m) ‖Xw − y‖² + λ(α‖w‖₁ + (1−α)/2 ‖w‖²)` with `α = 1/2` and
/// `λ = λ_max / 10`.
pub fn gen_elasticnet(m: usize, n: usize, seed: u64) -> GeneratedInstance {
    let mut r = rng(seed);
    let x = gaussian(&mut r, m, n);
    let beta = elasticnet_beta(n);
    let signal = &x * &beta;
    let z: DVector<f64> = DVector::from_fn(m, |_, _| r.sample(StandardNormal));
    let k = (signal.norm_squared() / (3.0 * z.norm_squared())).sqrt();
    let y = &signal + &z * k;
    let alpha = 0.5;
    let lambda_max = (x.transpose() * &y).amax() / (m as f64 * alpha);
    let lambda = 0.1 * lambda_max;

    let mut inst = GeneratedInstance::new("elastic-net", model("elastic-net").unwrap(), seed);
    inst.data.set("X", x);
    inst.data.set("y", column(y));
    inst.data.set("n", scalar_value(1.0 / (2.0 * m as f64)));
    inst.data.set("a1", scalar_value(lambda * alpha));
    inst.data.set("a2", scalar_value(lambda * (1.0 - alpha) / 2.0));
    inst.truth.set("beta", column(beta));
    inst.truth.set("noise", column(z * k));
    inst
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NnlsVariant {
    /// Uniform `A`, 1% non-zeros, `b = √0.003·Ax + 0.003·z`.
    I,
    /// Gaussian `A`, 10% non-zeros, `b = √(1/6000)·Ax + 0.003·z`.
    Ii,
}

pub fn gen_nnls(variant: NnlsVariant, m: usize, n: usize, seed: u64) -> GeneratedInstance {
    let mut r = rng(seed);
    let (a, density, scale, name) = match variant {
        NnlsVariant::I => (uniform(&mut r, m, n), 0.01, 0.003f64.sqrt(), "nnls-i"),
        NnlsVariant::Ii => (gaussian(&mut r, m, n), 0.1, (1.0f64 / 6000.0).sqrt(), "nnls-ii"),
    };
    let nnz = ((density * n as f64).round() as usize).max(1);
    let x = sparse(&mut r, n, nnz, |r| r.random::<f64>());
    let z: DVector<f64> = DVector::from_fn(m, |_, _| r.sample(StandardNormal));
    let b = (&a * &x) * scale + z * 0.003;
    let mut inst = GeneratedInstance::new(name, model("nnls").unwrap(), seed);
    inst.data.set("A", a);
    inst.data.set("b", column(b));
    inst.truth.set("x", column(x));
    inst
}

/// `X = ÛÛ'` with `|N(0,1)|` entries in `Û`; the optimum 0 is attained at
/// `U = Û`. Starts from an independent draw of the same distribution since
/// `U = 0` is a stationary point.
pub fn gen_symnmf(n: usize, k: usize, seed: u64) -> GeneratedInstance {
    let mut r = rng(seed);
    let u = gaussian(&mut r, n, k).abs();
    let x = &u * u.transpose();
    let init = gaussian(&mut r, n, k).abs();
    let mut inst = GeneratedInstance::new("symnmf", model("symnmf").unwrap(), seed);
    inst.data.set("X", x);
    inst.dims.insert("U".into(), (n, k));
    inst.init.set("U", init);
    inst.truth.set("U", u);
    inst.optimal_value = Some(0.0);
    inst
}

/// Rows orthonormalized so that `AA' = I`; `b = Ax*` for an `nnz`-sparse
/// Gaussian `x*`.
pub fn gen_compressed_sensing(m: usize, n: usize, nnz: usize, seed: u64) -> GeneratedInstance {
    let mut r = rng(seed);
    let g = gaussian(&mut r, n, m);
    let q = g.qr().q();
    let a = q.transpose();
    let x = sparse(&mut r, n, nnz, |r| r.sample(StandardNormal));
    let b = &a * &x;
    let mut inst = GeneratedInstance::new("compressed-sensing", model("compressed-sensing").unwrap(), seed);
    inst.data.set("A", a);
    inst.data.set("b", column(b));
    inst.truth.set("x", column(x));
    inst
}

pub fn sigmoid(s: f64) -> f64 {
    1.0 / (1.0 + (-s).exp())
}

/// Labels `b ∈ {0, 1}` drawn as Bernoulli(σ(x_i'w*)) for a Gaussian `w*`.
/// The model computes `‖y − σ(Xw) + 1‖²`, so `y = b − 1` is bound to make
/// it `‖σ(Xw) − b‖²`; `b` itself is kept in `truth`.
pub fn gen_nonlinear_ls(m: usize, n: usize, seed: u64) -> GeneratedInstance {
    let mut r = rng(seed);
    let x = gaussian(&mut r, m, n);
    let w: DVector<f64> = DVector::from_fn(n, |_, _| r.sample(StandardNormal));
    let s = &x * &w;
    let b = DVector::from_fn(m, |i, _| if r.random::<f64>() < sigmoid(s[i]) { 1.0 } else { 0.0 });
    let mut inst = GeneratedInstance::new("nonlinear-ls", model("nonlinear-ls").unwrap(), seed);
    inst.data.set("X", x);
    inst.data.set("y", column(b.add_scalar(-1.0)));
    inst.truth.set("b", column(b));
    inst.data.set("s", scalar_value(1.0));
    inst.truth.set("w", column(w));
    inst
}

/// Labels `±1` from a planted Gaussian `w*` with 10% of them flipped.
/// The ℓ₂ model uses `c = 1/(λm)` with `λ = 10⁻⁴`; the ℓ₁ model `c = 1`.
pub fn gen_logreg(l1: bool, m: usize, n: usize, seed: u64) -> GeneratedInstance {
    let mut r = rng(seed);
    let x = gaussian(&mut r, m, n);
    let w: DVector<f64> = DVector::from_fn(n, |_, _| r.sample(StandardNormal));
    let s = &x * &w;
    let y = DVector::from_fn(m, |i, _| {
        let label = if s[i] >= 0.0 { 1.0 } else { -1.0 };
        if r.random::<f64>() < 0.1 {
            -label
        } else {
            label
        }
    });
    let name = if l1 { "logreg-l1" } else { "logreg-l2" };
    let c = if l1 { 1.0 } else { 1.0 / (1e-4 * m as f64) };
    let mut inst = GeneratedInstance::new(name, model(name).unwrap(), seed);
    inst.data.set("X", x);
    inst.data.set("y", column(y));
    inst.data.set("c", scalar_value(c));
    inst.truth.set("w", column(w));
    inst
}

/// Gaussian kernel `exp(−γ‖x_i − x_j‖²)` of the rows of `points`.
pub fn gaussian_kernel(points: &DMatrix<f64>, gamma: f64) -> DMatrix<f64> {
    let m = points.nrows();
    let mut k = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..=i {
            let d = (points.row(i) - points.row(j)).norm_squared();
            let v = (-gamma * d).exp();
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Two Gaussian clouds in the plane with labels `±1`, Gaussian kernel with
/// `γ = 1/2` and `C = 1`. The hard-margin variant uses well separated
/// clouds.
pub fn gen_svm(soft: bool, m: usize, seed: u64) -> GeneratedInstance {
    let mut r = rng(seed);
    let (offset, spread) = if soft { (1.0, 1.0) } else { (1.5, 0.5) };
    let y = DVector::from_fn(m, |i, _| if i % 2 == 0 { 1.0 } else { -1.0 });
    let noise = gaussian(&mut r, m, 2);
    let points = DMatrix::from_fn(m, 2, |i, j| y[i] * offset + spread * noise[(i, j)]);
    let k = gaussian_kernel(&points, 0.5);
    let name = if soft { "svm-box" } else { "svm" };
    let mut inst = GeneratedInstance::new(name, model(name).unwrap(), seed);
    inst.data.set("K", k);
    inst.data.set_symmetric("K", true);
    inst.data.set("y", column(y));
    inst.data.set("c", scalar_value(1.0));
    inst.truth.set("points", points);
    inst
}
