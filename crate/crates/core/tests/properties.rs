use optmodel_core::diff::differentiate;
use optmodel_core::eval::{eval, eval_tree, matrix_value, vector_value, Env};
use optmodel_core::expr::{Expr, Op};
use optmodel_core::infer::type_model;
use optmodel_core::parser::parse_model_bytes;
use optmodel_core::shape::{Dim, Shape};
use optmodel_core::{parse_model, Value};
use proptest::prelude::*;
use std::collections::BTreeMap;

/// Typed objective of `src` with `A` fixed to `n×n` and `x` to length `n`.
fn objective(src: &str, n: usize) -> Expr {
    let spec = parse_model(src).unwrap();
    let dims = BTreeMap::from([("A".to_string(), (n, n)), ("x".to_string(), (n, 1))]);
    type_model(&spec, &dims).unwrap().objective
}

fn close(a: &Value, b: &Value, rel: f64) -> bool {
    a.shape() == b.shape() && a.iter().zip(b.iter()).all(|(x, y)| (x - y).abs() <= rel * x.abs().max(y.abs()).max(1.0))
}

fn vec_strategy() -> impl Strategy<Value = Vec<f64>> {
    (1usize..8).prop_flat_map(|n| prop::collection::vec(-10.0f64..10.0, n))
}

const TOKENS: &[&str] = &[
    "parameters", "variables", "min", "max", "st", "Scalar", "Vector", "Matrix", "symmetric", "x", "A", "b", "(",
    ")", "+", "-", "*", "/", ".*", "./", "^", ".^", "'", "==", "<=", ">=", "<", ">", "norm1", "norm2", "sum",
    "log", "exp", "vector", "1", "2.5", "1e-3", "\n", "#", ",",
];

const FAMILY: &[&str] = &[
    "parameters Matrix A variables Vector x min x' * A * x",
    "parameters Matrix A variables Vector x min sum(exp(A * x))",
    "parameters Matrix A variables Vector x min norm2(A * x - x).^2",
    "parameters Matrix A variables Vector x min sum(log(exp(x) + vector(1)))",
    "parameters Matrix A variables Vector x min sum(tanh(x) .* (A * x))",
];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn parser_never_panics_on_bytes(bytes in prop::collection::vec(any::<u8>(), 0..200)) {
        let _ = parse_model_bytes(&bytes);
    }

    #[test]
    fn parser_never_panics_on_token_soup(idx in prop::collection::vec(0..TOKENS.len(), 0..60)) {
        let text: Vec<&str> = idx.iter().map(|&i| TOKENS[i]).collect();
        let _ = parse_model(&text.join(" "));
    }

    #[test]
    fn norm2_squared_is_inner_product(v in vec_strategy()) {
        let n = v.len();
        let x = Expr::var("x", Shape::Vector(Dim::Known(n)));
        let lhs = Expr::pow(Expr::unary(Op::Norm2, x.clone()), Expr::constant(2.0));
        let rhs = Expr::mul(Expr::transpose(x.clone()), x);
        let env = Env::new().with("x", vector_value(&v));
        prop_assert!(close(&eval(&lhs, &env).unwrap(), &eval(&rhs, &env).unwrap(), 1e-12));
    }

    #[test]
    fn scalar_broadcast_commutes(v in vec_strategy(), s in -5.0f64..5.0) {
        let shape = Shape::Vector(Dim::Known(v.len()));
        let x = Expr::var("x", shape);
        let c = Expr::var("s", Shape::Scalar);
        let b = Expr::broadcast(c.clone(), shape);
        let env = Env::new().with("x", vector_value(&v)).with("s", matrix_value(1, 1, &[s]));
        let pairs = [
            (Expr::add(b.clone(), x.clone()), Expr::add(x.clone(), b.clone())),
            (Expr::emul(b.clone(), x.clone()), Expr::emul(x.clone(), b.clone())),
            (Expr::scale(c, x.clone()), Expr::emul(x, b)),
        ];
        for (l, r) in pairs {
            prop_assert_eq!(eval(&l, &env).unwrap(), eval(&r, &env).unwrap());
        }
    }

    #[test]
    fn scheduled_and_tree_evaluation_agree(k in 0..FAMILY.len(), seed in prop::collection::vec(-2.0f64..2.0, 16)) {
        let f = objective(FAMILY[k], 4);
        let env = Env::new()
            .with("A", matrix_value(4, 4, &seed))
            .with("x", vector_value(&seed[..4]));
        let first = eval(&f, &env).unwrap();
        prop_assert_eq!(&first, &eval(&f, &env).unwrap());
        prop_assert_eq!(&first, &eval_tree(&f, &env).unwrap());
    }

    #[test]
    fn gradient_is_linear(
        i in 0..FAMILY.len(),
        j in 0..FAMILY.len(),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
        seed in prop::collection::vec(-1.0f64..1.0, 16),
    ) {
        let f = objective(FAMILY[i], 4);
        let g = objective(FAMILY[j], 4);
        let combo = Expr::add(Expr::scale(Expr::constant(a), f.clone()), Expr::scale(Expr::constant(b), g.clone()));
        let env = Env::new()
            .with("A", matrix_value(4, 4, &seed))
            .with("x", vector_value(&seed[12..]));
        let grad = |e: &Expr| eval(differentiate(e, &["x"]).unwrap().get("x").unwrap(), &env).unwrap();
        let expect = grad(&f) * a + grad(&g) * b;
        prop_assert!(close(&grad(&combo), &expect, 1e-10));
    }
}
