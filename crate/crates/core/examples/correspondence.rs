//! Matches template vertices to pixels of a rendered IUV map.

use pixgcn::correspondence::{vertex_to_pixel, vertex_to_pixel_exhaustive};
use pixgcn::mesh::{capsule_man, CapsuleManConfig};
use pixgcn::scene::{generate_scene, SceneConfig};

fn main() -> pixgcn::Result<()> {
    let t = capsule_man(&CapsuleManConfig::desk())?;
    for noise in [0.0, 0.2] {
        let cfg = SceneConfig {
            noise_level: noise,
            ..SceneConfig::default()
        };
        let scene = generate_scene(&t, &cfg, 3)?;
        let corr = vertex_to_pixel(&scene.iuv, &t)?;
        assert_eq!(corr, vertex_to_pixel_exhaustive(&scene.iuv, &t)?);
        let hidden_matched = (0..t.num_vertices()).filter(|&k| !scene.visible[k] && corr.pixel[k].is_some()).count();
        println!(
            "noise {noise}: {} of {} vertices matched, {hidden_matched} of them hidden in the render",
            corr.present_count(),
            t.num_vertices()
        );
    }
    let corr = vertex_to_pixel(&generate_scene(&t, &SceneConfig::default(), 3)?.iuv, &t)?;
    if let Some((k, p)) = corr.pixel.iter().enumerate().find_map(|(k, p)| p.map(|p| (k, p))) {
        let (row, col) = p.zero_based();
        println!("vertex {k} -> pixel ({row}, {col}) at uv distance {:.4}", corr.distance[k]);
    }
    Ok(())
}
