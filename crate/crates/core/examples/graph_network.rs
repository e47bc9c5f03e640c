//! Runs the encode-process-decode graph network on a mesh graph and checks
//! that relabeling the vertices permutes its output.

use graphcloth::autodiff::Tensor;
use graphcloth::gnn::{Graph, GraphNetConfig, GraphNetWeights};
use graphcloth::mesh::Mesh;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mesh = Mesh::grid(3, 3, 1.0);
    let graph = Graph::from_mesh(&mesh);
    let config = GraphNetConfig { latent: 16, iterations: 3, ..GraphNetConfig::new(4, 3) };
    let weights = GraphNetWeights::init(&config, 42)?;
    println!("{} nodes, {} directed edges, {} parameters", graph.num_nodes(), graph.num_edges(), weights.num_parameters());

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut random = |rows: usize, cols: usize| Tensor::new(rows, cols, (0..rows * cols).map(|_| rng.gen::<f64>() - 0.5).collect());
    let nodes = random(graph.num_nodes(), 4);
    let edges = random(graph.num_edges(), 3);
    let out = weights.predict(&graph, &nodes, &edges)?;

    // reverse the vertex labels
    let n = graph.num_nodes();
    let relabel = |i: usize| n - 1 - i;
    let senders: Vec<usize> = graph.senders().iter().map(|&s| relabel(s)).collect();
    let receivers: Vec<usize> = graph.receivers().iter().map(|&r| relabel(r)).collect();
    let permuted = Graph::new(n, senders, receivers)?;
    let mut pnodes = Tensor::zeros(n, 4);
    for i in 0..n {
        pnodes.row_mut(relabel(i)).copy_from_slice(nodes.row(i));
    }
    let pout = weights.predict(&permuted, &pnodes, &edges)?;
    let worst = (0..n)
        .flat_map(|i| out.row(i).iter().zip(pout.row(relabel(i))).map(|(a, b)| (a - b).abs()).collect::<Vec<_>>())
        .fold(0.0f64, f64::max);
    println!("output {}x{}, largest difference after relabeling {worst:.2e}", out.rows(), out.cols());
    Ok(())
}
