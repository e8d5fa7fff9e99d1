//! The tape on its own: a two-layer perceptron built from graph operations,
//! its reverse-mode gradients, and a finite-difference check of them.
//!
//! cargo run --example autodiff_basics

use vig_lrgc::autodiff::{finite_diff_check, FdOptions};
use vig_lrgc::layers::{init_params, InitScheme};
use vig_lrgc::{Graph, ParamKind, ParamStore, Tensor};

fn main() -> vig_lrgc::Result<()> {
    let mut store = ParamStore::<f64>::new();
    let w1 = store.add("w1", ParamKind::Weight, init_params(&[3, 4], InitScheme::TruncNormal { std: 0.5 }, 1));
    let w2 = store.add("w2", ParamKind::Weight, init_params(&[4, 2], InitScheme::TruncNormal { std: 0.5 }, 2));
    let x = Tensor::from_f64([2, 3], &[0.5, -1.0, 2.0, 1.5, 0.2, -0.3])?;
    let targets = [1.0, 0.0, 0.0, 1.0];

    let loss_fn = |g: &mut Graph<'_, f64>| {
        let xv = g.input(x.clone());
        let a = g.param(w1);
        let h = g.matmul(xv, a)?;
        let h = g.tanh(h)?;
        let b = g.param(w2);
        let logits = g.matmul(h, b)?;
        g.soft_cross_entropy(logits, &targets)
    };

    let mut g = Graph::new(&store);
    let loss = loss_fn(&mut g)?;
    g.backward(loss)?;
    println!("loss {:.6} from {} tape nodes", g.item(loss), g.len());
    for (id, grad) in g.param_grads() {
        let cells: Vec<String> = grad.iter().map(|v| format!("{v:+.4}")).collect();
        println!("d loss / d {} = [{}]", store.get(id).name, cells.join(" "));
    }
    drop(g);

    let report = finite_diff_check(&mut store, &[w1, w2], loss_fn, &FdOptions::default())?;
    for gr in &report.groups {
        println!("{}: {} coordinates, max relative error {:.1e}", gr.name, gr.checked, gr.max_rel_error);
    }
    Ok(())
}
