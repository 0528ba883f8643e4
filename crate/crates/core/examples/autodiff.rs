//! Builds a small graph, back-propagates and checks the result against
//! central differences.

use swellgan::tensor::{grad_check, Graph, Tensor};

fn main() -> swellgan::Result<()> {
    let mut g = Graph::new();
    let x = g.input(Tensor::vector(vec![0.5, -1.0, 2.0]));
    let t = g.tanh(x);
    let y = g.sum_sq(t);
    g.backward(y, &mut [])?;
    println!("y = {:.6}", g.value(y).item());
    println!("dy/dx = {:?}", g.grad(x).unwrap().data());

    let err = grad_check(
        |g, x| {
            let s = g.softmax(x);
            let e = g.exp(s);
            Ok(g.sum(e))
        },
        &Tensor::new([2, 3], vec![0.1, 0.7, -0.3, 1.2, -2.0, 0.4])?,
        1e-4,
    )?;
    println!("softmax/exp gradient check: max relative error {err:.2e}");
    Ok(())
}
