//! Builds the capsule-man template and prints its graph, atlas and joints.

use pixgcn::mesh::{capsule_man, export_obj, normalized_adjacency, CapsuleManConfig};

fn main() -> pixgcn::Result<()> {
    let t = capsule_man(&CapsuleManConfig::desk())?;
    println!("{} vertices, {} faces, {} edges, {} parts", t.num_vertices(), t.num_faces(), t.edges().len(), t.part_count());
    let adj = normalized_adjacency(&t);
    println!("normalized adjacency: {} stored entries", adj.values.len());
    let delta = t.delta();
    let mean = delta.iter().sum::<f64>() / delta.len() as f64;
    let max = delta.iter().cloned().fold(0.0, f64::max);
    println!("uv thresholds: mean {mean:.4}, max {max:.4}");
    let joints = pixgcn::mesh::regress_joints(t.regressor(), &t.rest_mesh())?;
    for (name, j) in t.joint_names().iter().zip(&joints) {
        println!("  {name:10} [{:6.3} {:6.3} {:6.3}]", j[0], j[1], j[2]);
    }
    let path = std::env::temp_dir().join("capsule_man.obj");
    export_obj(&t.rest_mesh(), &t, &path)?;
    println!("rest mesh written to {}", path.display());
    Ok(())
}
