//! Regresses vertex positions with the semantic graph network and scores them.

use pixgcn::graph::{GraphNet, GraphNetConfig};
use pixgcn::losses::{combined_loss, mpjpe, pa_mpjpe};
use pixgcn::mesh::{capsule_man, regress_joints, CapsuleManConfig, Mesh};
use pixgcn::scene::deform_template;
use pixgcn::tensor::ParamSet;

fn main() -> pixgcn::Result<()> {
    let t = capsule_man(&CapsuleManConfig::desk())?;
    let net = GraphNet::new(GraphNetConfig::default(), 3, t.adjacency_pattern())?;
    let mut params = ParamSet::new();
    net.init_params(0, &mut params);
    let rest = t.rest_mesh().to_tensor();
    let pred = net.forward(&rest, &params, Some(&rest))?;
    println!("prediction {:?} from {} parameters", pred.shape(), params.iter().map(|(_, v)| v.len()).sum::<usize>());

    let gt = deform_template(&t, 9, 0.7)?;
    let loss = combined_loss(&pred, &gt, &t)?;
    println!("{:?}", loss.report);
    let joints = regress_joints(t.regressor(), &Mesh::from_tensor(&pred)?)?;
    let gt_joints = regress_joints(t.regressor(), &gt)?;
    println!(
        "mpjpe {:.4}, pa-mpjpe {:.4}",
        mpjpe(&joints, &gt_joints, t.root_joint())?,
        pa_mpjpe(&joints, &gt_joints)?
    );
    let grads = loss.total.backward()?;
    let head = grads.get(params.expect("gcn.head.weight")).map(|g| g.iter().map(|x| x * x).sum::<f64>().sqrt());
    println!("gradient norm at the output layer: {:.4}", head.unwrap_or(0.0));
    Ok(())
}
