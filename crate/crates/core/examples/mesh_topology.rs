//! Builds a grid, subdivides it twice and extracts a pinned patch.

use graphcloth::mesh::{compute_area_weights, extract_patch, subdivide_midpoint, Mesh};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let coarse = Mesh::grid(4, 4, 1.0);
    println!(
        "coarse: {} vertices, {} edges, {} triangles, {} dihedrals",
        coarse.num_vertices(),
        coarse.edges().len(),
        coarse.triangles().len(),
        coarse.dihedrals().len()
    );

    let fine = subdivide_midpoint(&coarse, 2)?;
    println!(
        "fine:   {} triangles (x{}), area {} -> {}",
        fine.triangles().len(),
        fine.triangles().len() / coarse.triangles().len(),
        coarse.rest_area(),
        fine.rest_area()
    );

    let w = compute_area_weights(&fine)?;
    let vertex_sum: f64 = w.vertex_area.iter().sum();
    let edge_sum: f64 = w.edge_area.iter().sum();
    println!("area weights: vertices sum {vertex_sum:.6}, edges sum {edge_sum:.6}, total {:.6}", w.total_area);

    let center = fine.num_vertices() / 2;
    let patch = extract_patch(&fine, center, 3)?;
    let pinned = patch.mesh.pinned().iter().filter(|p| **p).count();
    println!(
        "3-ring patch around vertex {center}: {} vertices, {pinned} pinned on its boundary",
        patch.mesh.num_vertices()
    );
    Ok(())
}
