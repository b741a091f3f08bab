use cecdr_core::clm::*;
use cecdr_core::synth::*;
use cecdr_core::data::*;

fn main() {
    let wcfg = WorldConfig {
        users: 1000, source_items: 2000, target_items: 2000,
        events_per_user: 20, seed: 7, ..Default::default()
    };
    let world = generate_world(&wcfg).unwrap();
    let behavior = train_behavior_embeddings(&world.log, &BehaviorConfig::default()).unwrap();
    let fit = fit_calibrator(&world.log, &world.content, &behavior, 4000, 7).unwrap();
    let cfg = LabelingConfig::default();
    let scorer = Scorer::new(&fit.calibrator, &world.content, &behavior, &cfg);
    let examples = build_dataset(&world.log, &scorer, &cfg, Some(&world.truth)).unwrap();

    let mut s1 = Vec::new(); let mut s0 = Vec::new();
    for e in &examples {
        match e.y { Some(true) => s1.push(e.score), Some(false) => s0.push(e.score), None => {} }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let frac_above = |v: &[f64], t: f64| v.iter().filter(|&&x| x > t).count() as f64 / v.len() as f64;
    println!("y=1: n={} mean={:.4} P(>0.9)={:.3} P(>0.97)={:.3} P(>0.99)={:.3}", s1.len(), mean(&s1), frac_above(&s1, 0.9), frac_above(&s1, 0.97), frac_above(&s1,0.99));
    println!("y=0: n={} mean={:.4} P(>0.9)={:.3} P(>0.97)={:.3} P(>0.99)={:.3}", s0.len(), mean(&s0), frac_above(&s0, 0.9), frac_above(&s0, 0.97), frac_above(&s0,0.99));

    // true cause-effect pair quantiles
    let idx = world.truth.index();
    let mut cq = Vec::new(); let mut bq = Vec::new();
    for r in &world.log.records {
        if r.domain == Domain::Target {
            if let Some(t) = idx.get(&(r.user, r.ts)) {
                if let Some(c) = t.cause_item {
                    let tg = world.log.global_item(Domain::Target, r.item);
                    let (q_c, q_b) = scorer.pair_quantiles(c, tg).unwrap();
                    cq.push(q_c); bq.push(q_b);
                }
            }
        }
    }
    println!("cause-pair content q: mean={:.4} P(>0.99)={:.3}", mean(&cq), frac_above(&cq, 0.99));
    println!("cause-pair behavior q: mean={:.4} P(>0.99)={:.3}", mean(&bq), frac_above(&bq, 0.99));

    // snapshot length distribution
    let mean_len = examples.iter().map(|e| e.snapshot.len() as f64).sum::<f64>() / examples.len() as f64;
    println!("mean snapshot len = {:.2}", mean_len);
}
