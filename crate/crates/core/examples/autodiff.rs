//! Builds a two-layer network on the tape, backpropagates, and checks the
//! gradients against central differences in f64.

use vift::tensor::{grad_check, Graph, ParamStore, Tensor};

fn loss(ps: &ParamStore<f64>, x: &Tensor<f64>) -> (Graph<f64>, vift::tensor::Var) {
    let mut g = Graph::new(true);
    let x = g.leaf(x.clone()).unwrap();
    let w1 = ps.bind(&mut g, 0).unwrap();
    let w2 = ps.bind(&mut g, 1).unwrap();
    let h = g.matmul(x, w1).unwrap();
    let h = g.gelu(h).unwrap();
    let y = g.matmul(h, w2).unwrap();
    let y = g.mul(y, y).unwrap();
    let l = g.sum(y).unwrap();
    (g, l)
}

fn main() {
    let mut ps = ParamStore::new();
    ps.push("w1", Tensor::from_f64(vec![3, 4], &[0.3, -0.2, 0.5, 0.1, -0.4, 0.2, 0.7, -0.6, 0.05, 0.9, -0.3, 0.4]).unwrap());
    ps.push("w2", Tensor::from_f64(vec![4, 2], &[0.2, -0.5, 0.6, 0.1, -0.3, 0.8, 0.4, -0.2]).unwrap());
    let x = Tensor::from_f64(vec![2, 3], &[1.0, -0.5, 0.25, 0.3, 0.8, -1.2]).unwrap();

    let (g, l) = loss(&ps, &x);
    println!("loss = {:.6}", g.value(l)[0]);
    let grads = g.backward(l).unwrap();
    let mut analytic = ps.zero_grads();
    ps.accumulate(&g, &grads, &mut analytic);
    for (p, gr) in ps.iter().zip(&analytic) {
        println!("d loss / d {} = {:?}", p.name, gr.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>());
    }

    let mut store = ps.clone();
    let report = grad_check(&mut store, &analytic, 1e-6, 64, 0, |ps| {
        let (g, l) = loss(ps, &x);
        g.value(l)[0]
    });
    println!("checked {} coordinates, max relative error {:.2e}", report.coords_checked, report.max_rel_error);
}
