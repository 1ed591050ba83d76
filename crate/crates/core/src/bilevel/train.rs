use std::time::Instant;

use super::implicit::compute_p_on;
use super::inner::solve_inner_on;
use super::{implicit_grad, outer_objective, BilevelConfig, InnerProblems};
use crate::data::{BatchStream, GroupedDataset, Split};
use crate::error::{Error, Result};
use crate::metrics::head_distance;
use crate::models::{Head, ReprNet};
use crate::optim::Adam;
use crate::record::{default_steps_per_epoch, evaluate_all, Aborted, EpochAccumulator, RecordStamp, TrainOutput};

/// Implicit-gradient training of λ.
///
/// Each outer step draws one batch per group, fits both heads on it, solves
/// for `p₀`, `p₁` on the same batches, and takes one Adam step on λ along the
/// assembled gradient. Evaluation uses the heads of the epoch's last step.
pub fn train(
    net: ReprNet,
    init_head: Head,
    dataset: &GroupedDataset,
    cfg: &BilevelConfig,
    seed: u64,
    stamp: &RecordStamp,
) -> Result<TrainOutput, Aborted> {
    let mut records = Vec::new();
    match run(net, init_head, dataset, cfg, seed, stamp, &mut records) {
        Ok((net, heads)) => Ok(TrainOutput { records, net, heads }),
        Err(error) => Err(Aborted { records, error }),
    }
}

fn run(
    mut net: ReprNet,
    init_head: Head,
    dataset: &GroupedDataset,
    cfg: &BilevelConfig,
    seed: u64,
    stamp: &RecordStamp,
    records: &mut Vec<crate::record::RunRecord>,
) -> Result<(ReprNet, [Head; 2])> {
    cfg.validate()?;
    if init_head.embed_dim() != net.embed_dim() {
        return Err(Error::Shape(format!(
            "head expects embedding width {}, net produces {}",
            init_head.embed_dim(),
            net.embed_dim()
        )));
    }
    let init_head = init_head.with_norm_cap(cfg.head_norm_cap);
    net = net.with_norm_cap(cfg.lambda_norm_cap);
    let mut stream = BatchStream::new(dataset, Split::Train, cfg.batch_size_per_group, seed)?;
    let steps = cfg
        .steps_per_epoch
        .unwrap_or_else(|| default_steps_per_epoch(dataset, cfg.batch_size_per_group));
    let mut adam = Adam::new(cfg.outer_lr, cfg.adam_eps);
    let mut heads = [init_head.clone(), init_head.clone()];

    for epoch in 1..=cfg.max_epochs {
        let start = Instant::now();
        let mut acc = EpochAccumulator::default();
        for _ in 0..steps {
            let batches = stream.next_pair();
            let problems = InnerProblems::new(&net, &batches, &init_head)?;
            let starts = if cfg.warm_start_heads {
                [&heads[0], &heads[1]]
            } else {
                [&init_head, &init_head]
            };
            let sol = solve_inner_on(&problems, starts, cfg)?;
            let ps = compute_p_on(&problems, &sol, cfg)?;
            let grad = implicit_grad(&net, &sol, &ps, &batches)?;
            let loss = outer_objective(&net, &sol, &batches, cfg.kappa)?;

            let mut values = net.params().values().to_vec();
            adam.step(&mut values, grad.grad_lambda.values());
            net.set_params(net.params().with_values(values)?)?;
            net.enforce_cap();

            acc.push(
                loss,
                grad.grad_lambda.norm(),
                sol.steps_used,
                grad.cg_iterations[0] + grad.cg_iterations[1],
            );
            heads = [sol.head0, sol.head1];
        }
        let metrics = evaluate_all(&net, [&heads[0], &heads[1]], dataset, cfg.gap_points)?;
        let dist = head_distance(&heads[0], &heads[1])?;
        records.push(acc.finish(epoch, stamp, metrics, dist, start.elapsed().as_secs_f64()));
    }
    Ok((net, heads))
}
