// scratch: longer joint training at higher lr
use csn_core::head::{SharingMode, SoftInit};
use csn_core::model::CsnModel;
use csn_core::scene::{build_dataset, GenConfig};
use csn_core::train::{train, TrainConfig};

fn main() {
    let gen = GenConfig::default();
    let ds = build_dataset(&gen, 400, 1).unwrap();
    let examples = ds.train_examples();
    for lr in [5e-3, 1e-2] {
        let mut model = CsnModel::new(Default::default(), ds.registry.clone(),
            SharingMode::PartAndPattern, SoftInit::OneHot, 7).unwrap();
        let cfg = TrainConfig { epochs: 100, seed: 7, learning_rate: lr, ..TrainConfig::default() };
        let run = train(&mut model, &ds.images, &examples, &cfg).unwrap();
        println!("lr {lr}:");
        for (e, st) in run.history.epochs.iter().enumerate() {
            if e % 10 == 0 || e == 99 {
                let aps: Vec<f64> = st.val_ap.values().filter_map(|a| *a).collect();
                let map = aps.iter().sum::<f64>() / aps.len().max(1) as f64;
                println!("  e{e:3}: loss {:.4} mAP {map:.3}", st.mean_loss.unwrap());
            }
        }
    }
}
