use crate::args::TrainArgs;
use crate::common::{model_config, open_data, train_and_save, train_config, CKPT_FILE};
use crate::exit::CliResult;

pub fn run(a: &TrainArgs) -> CliResult<()> {
    let tc = train_config(&a.model);
    let data = open_data(&a.data, tc.seed)?;
    let cfg = model_config(&a.model, data.size);
    let t = train_and_save(cfg, &tc, &data, &a.out, a.log_every)?;
    println!("checkpoint={}", a.out.join(CKPT_FILE).display());
    println!("fingerprint={}", t.fingerprint);
    if let Some(last) = t.curve.last() {
        println!("final_loss={}", last.loss);
    }
    Ok(())
}
