//! Generates a posed synthetic scene and writes its image, IUV map and mesh.

use pixgcn::mesh::{capsule_man, CapsuleManConfig};
use pixgcn::scene::{generate_scene, SceneConfig};

fn main() -> pixgcn::Result<()> {
    let t = capsule_man(&CapsuleManConfig::desk())?;
    let cfg = SceneConfig {
        difficulty: 0.8,
        noise_level: 0.1,
        ..SceneConfig::default()
    };
    let scene = generate_scene(&t, &cfg, 42)?;
    let visible = scene.visible.iter().filter(|&&v| v).count();
    println!("image {:?}, {} foreground iuv pixels", scene.image.shape(), scene.iuv.foreground_count());
    println!("{visible} of {} vertices visible", t.num_vertices());
    let dir = std::env::temp_dir().join("pixgcn_scene_42");
    scene.export(&dir, &t, cfg.noise_level)?;
    println!("written to {}", dir.display());
    Ok(())
}
