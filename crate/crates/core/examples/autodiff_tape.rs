//! Records a small energy on a tape and reads its gradient back.

use graphcloth::autodiff::{Tape, Tensor};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tape = Tape::new();

    // d/dx (x·x) at x = 3
    let x = tape.var(Tensor::scalar(3.0));
    let y = x.mul(x);
    let grads = tape.backward(y)?;
    println!("d(x²)/dx at 3 = {}", grads.wrt(x).item());

    // spring energy ½ k (|p - q| - L)² and its gradient in p
    let tape = Tape::new();
    let p = tape.var(Tensor::row_vector(vec![3.0, 4.0, 0.0]));
    let q = tape.constant(Tensor::row_vector(vec![0.0, 0.0, 0.0]));
    let rest = tape.constant(Tensor::scalar(4.0));
    let stretch = p.sub(q).norm().sub(rest);
    let energy = stretch.square().scale(0.5 * 10.0);
    let grads = tape.backward(energy)?;
    println!("energy {} erg, force on p {:?} dyn", energy.item(), grads.wrt(p).data().iter().map(|g| -g).collect::<Vec<_>>());
    println!("tape recorded {} nodes", tape.len());
    Ok(())
}
