//! Runs the backbone on a scene and assembles local and global vertex features.

use pixgcn::correspondence::vertex_to_pixel;
use pixgcn::features::{backbone_forward, init_backbone, vertex_features, BackboneConfig, FeatureMode};
use pixgcn::mesh::{capsule_man, CapsuleManConfig};
use pixgcn::scene::{generate_scene, SceneConfig};
use pixgcn::tensor::ParamSet;

fn main() -> pixgcn::Result<()> {
    let t = capsule_man(&CapsuleManConfig::desk())?;
    let scene = generate_scene(&t, &SceneConfig::default(), 5)?;
    let corr = vertex_to_pixel(&scene.iuv, &t)?;
    let cfg = BackboneConfig::desk();
    let mut params = ParamSet::new();
    init_backbone(&cfg, 0, &mut params);
    let pyramid = backbone_forward(&scene.image, &params, &cfg)?;
    for (l, s) in pyramid.stages.iter().enumerate() {
        println!("stage {}: {:?}", l + 1, s.shape());
    }
    for mode in [FeatureMode::Local, FeatureMode::Global] {
        let f = vertex_features(mode, &pyramid, &corr, &t)?;
        let width = f.layout.width();
        let local = f.layout.local_width();
        let absent_zero = (0..corr.len())
            .filter(|&k| corr.pixel[k].is_none())
            .all(|k| f.data.data()[k * width..k * width + local].iter().all(|&x| x == 0.0));
        println!("{mode:?}: {:?}, local slots of absent vertices zero: {absent_zero}", f.data.shape());
    }
    let full = BackboneConfig::full_size().layout();
    println!("full-size layout: D = {}, row width {}", full.d(), full.width());
    Ok(())
}
