//! Acceptance suite: one line per criterion, nonzero exit if any fails.
//!
//! Run alone with `cargo test -p persona-pipeline --test acceptance`.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use persona_align::annotate::{
    build_pairs, judge_alignment, majority_vote, AggregatedScore, CriteriaScores, FinalScore, JudgeVerdict, PairPolicy,
    Preference,
};
use persona_align::augment::rouge_l_filter;
use persona_align::corpus::{Origin, PreferencePair, QaPair, SeedGroup, Task, Variant};
use persona_align::metrics::{
    classification_metrics, grade_labels, lcs_len, rouge_l, rouge_l_tokens, EvalItem, Grading,
};
use persona_align::model::{GenerationParams, Hyper, PolicyHandle, TinyLm, Tokenizer};
use persona_align::train::gradcheck::{check_gradient, sample_coords};
use persona_align::train::{
    dpo_loss, dpo_loss_and_grad, reference_logprobs, rm_loss, rm_loss_and_grad, sft_loss, sft_loss_and_grad, train_dpo,
    train_rm, train_sft, DpoConfig, OptimizerConfig, RmConfig, SftConfig, SftStage,
};
use persona_pipeline::{Pipeline, PipelineConfig, Stage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e<E: std::fmt::Display>(err: E) -> String {
    err.to_string()
}

const ITEMS: [&str; 30] = [
    "tea", "cake", "rain", "cats", "music", "books", "stars", "snow", "bread", "jazz", "maps", "clocks", "kites",
    "shells", "pearls", "candles", "roses", "trains", "boats", "moths", "plums", "owls", "foxes", "bells", "ink",
    "glass", "wool", "honey", "lamps", "tides",
];

fn qa(id: &str, prompt: &str, answer: &str) -> QaPair {
    QaPair {
        id: id.into(),
        prompt: prompt.into(),
        answer: answer.into(),
        persona_id: None,
        task: Task::Casual,
        origin: Origin::Seed,
        seed_id: None,
    }
}

fn topic(i: usize) -> String {
    format!("{} {}", ITEMS[i % 30], ITEMS[(i / 30 + i) % 30])
}

/// Separable pairs: the chosen side is always enthusiastic, the rejected
/// side always dismissive.
fn styled_pair(i: usize) -> PreferencePair {
    let t = topic(i);
    PreferencePair {
        id: format!("p{i}"),
        seed_id: format!("p{i}"),
        prompt: format!("Tell me about {t}."),
        chosen: format!("Gladly! I adore {t}."),
        rejected: format!("No. {t} bore me."),
        margin_scores: None,
    }
}

fn small_model(seed: u64) -> TinyLm {
    let hyper = Hyper {
        embed_dim: 6,
        hidden_dim: 10,
        layers: 2,
    };
    TinyLm::new(Tokenizer::ascii(), hyper, seed)
}

const GRAD_H: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-4;

/// Checks `analytic` against finite differences on uniformly random
/// coordinates and on random coordinates where the gradient is nonzero.
fn grad_report<F>(model: &TinyLm, analytic: &[f64], seed: u64, loss: F) -> Result<(usize, f64), String>
where
    F: Fn(&TinyLm) -> persona_align::Result<f64>,
{
    let n = analytic.len();
    let mut coords = sample_coords(n, 120, seed);
    let support: Vec<usize> = (0..n).filter(|&i| analytic[i].abs() > 1e-9).collect();
    coords.extend(
        sample_coords(support.len(), 120, seed + 1)
            .into_iter()
            .map(|i| support[i]),
    );
    coords.sort_unstable();
    coords.dedup();
    let check = check_gradient(model, analytic, &coords, GRAD_H, loss).map_err(e)?;
    ensure(check.max_rel_error < GRAD_TOL, || {
        format!(
            "max relative error {:.3e} over {} coordinates",
            check.max_rel_error,
            coords.len()
        )
    })?;
    Ok((coords.len(), check.max_rel_error))
}

fn gradient_correctness() -> Outcome {
    let batch_qa = vec![
        qa("a", "Hi there?", "Hello!"),
        qa("b", "Name a colour.", "Deep blue."),
        qa("c", "Count to three.", "1 2 3"),
    ];
    let pairs: Vec<PreferencePair> = (0..3).map(styled_pair).collect();

    let policy = small_model(11);
    let g = sft_loss_and_grad(&policy, &batch_qa, 2).map_err(e)?;
    let (n_sft, err_sft) = grad_report(&policy, &g.grad, 1, |m| sft_loss(m, &batch_qa))?;

    let mut rm = small_model(12);
    rm.init_reward_head(5, 0.5);
    let g = rm_loss_and_grad(&rm, &pairs, 2).map_err(e)?;
    let (n_rm, err_rm) = grad_report(&rm, &g.grad, 2, |m| rm_loss(m, &pairs))?;

    let policy = small_model(13);
    let reference = small_model(14).frozen();
    let beta = 0.5;
    let refs = reference_logprobs(&reference, &pairs).map_err(e)?;
    let g = dpo_loss_and_grad(&policy, &refs, &pairs, beta, 2).map_err(e)?;
    let (n_dpo, err_dpo) = grad_report(&policy, &g.grad, 3, |m| dpo_loss(m, &reference, &pairs, beta))?;

    Ok(format!(
        "max rel err sft {err_sft:.1e} ({n_sft} coords), rm {err_rm:.1e} ({n_rm}), dpo {err_dpo:.1e} ({n_dpo}); tol {GRAD_TOL:.0e}"
    ))
}

fn dpo_initialization() -> Outcome {
    let policy = TinyLm::new(Tokenizer::ascii(), Hyper::default(), 21);
    let reference = policy.frozen();
    let mut worst = 0.0f64;
    for (beta, range) in [(0.1, 0..4), (0.5, 10..17), (2.0, 40..41)] {
        let batch: Vec<PreferencePair> = range.map(styled_pair).collect();
        let loss = dpo_loss(&policy, &reference, &batch, beta).map_err(e)?;
        let refs = reference_logprobs(&reference, &batch).map_err(e)?;
        let with_grad = dpo_loss_and_grad(&policy, &refs, &batch, beta, 2).map_err(e)?.loss;
        worst = worst.max((loss - std::f64::consts::LN_2).abs());
        worst = worst.max((with_grad - std::f64::consts::LN_2).abs());
    }
    ensure(worst <= 1e-9, || format!("|loss - ln 2| = {worst:.3e}"))?;
    Ok(format!("max |loss - ln 2| = {worst:.1e}"))
}

fn rm_separability() -> Outcome {
    let pairs: Vec<PreferencePair> = (0..200).map(styled_pair).collect();
    let (train, held_out) = pairs.split_at(160);
    let mut model = TinyLm::new(Tokenizer::ascii(), Hyper::default(), 2);
    let cfg = RmConfig {
        epochs: 1,
        lr: 0.01,
        batch_size: 4,
        seed: 2,
        optimizer: OptimizerConfig::adam(),
        grad_clip: Some(5.0),
        max_steps: None,
        workers: 4,
    };
    let run = train_rm(&mut model, &cfg, train).map_err(|a| a.error.to_string())?;
    let mut correct = 0;
    for p in held_out {
        let rw = model.scores(&p.prompt, &p.chosen).map_err(e)?.reward;
        let rl = model.scores(&p.prompt, &p.rejected).map_err(e)?.reward;
        correct += usize::from(rw > rl);
    }
    let acc = correct as f64 / held_out.len() as f64;
    ensure(acc >= 0.90, || format!("held-out ordering accuracy {acc:.3}"))?;
    Ok(format!(
        "held-out ordering accuracy {acc:.3} ({correct}/{}) after {} steps",
        held_out.len(),
        run.steps
    ))
}

fn chosen_style(text: &str) -> bool {
    text.starts_with("Gladly!")
}

fn dpo_effect() -> Outcome {
    let pairs: Vec<PreferencePair> = (0..100).map(styled_pair).collect();
    // The reference answers in both styles, dismissive twice as often.
    let mut sft = Vec::new();
    for p in &pairs {
        sft.push(qa(&format!("{}c", p.id), &p.prompt, &p.chosen));
        sft.push(qa(&format!("{}r", p.id), &p.prompt, &p.rejected));
        sft.push(qa(&format!("{}r2", p.id), &p.prompt, &p.rejected));
    }
    let mut policy = TinyLm::new(Tokenizer::ascii(), Hyper::default(), 3);
    let sft_cfg = SftConfig {
        stages: vec![SftStage {
            dataset: "styles".into(),
            epochs: 15,
            lr: 0.01,
        }],
        batch_size: 10,
        seed: 3,
        optimizer: OptimizerConfig::adam(),
        grad_clip: Some(5.0),
        max_steps: None,
        workers: 4,
    };
    train_sft(&mut policy, &sft_cfg, &[&sft]).map_err(|a| a.error.to_string())?;

    let seen: BTreeSet<String> = pairs.iter().map(|p| p.prompt.clone()).collect();
    let probes: Vec<String> = (200..)
        .map(|i| format!("Tell me about {}.", topic(i)))
        .filter(|p| !seen.contains(p))
        .take(30)
        .collect();
    let params = GenerationParams::greedy(60);
    let style_rate = |m: &TinyLm| -> Result<f64, String> {
        let mut n = 0;
        for p in &probes {
            n += usize::from(chosen_style(&m.generate(p, &params).map_err(e)?));
        }
        Ok(n as f64 / probes.len() as f64)
    };
    let before = style_rate(&policy)?;

    let reference = policy.frozen();
    let beta = 0.1;
    let cfg = DpoConfig {
        beta,
        lr: 0.001,
        epochs: 20,
        batch_size: 4,
        seed: 3,
        reference: None,
        optimizer: OptimizerConfig::adam(),
        grad_clip: Some(5.0),
        max_steps: Some(500),
        workers: 4,
    };
    let run = train_dpo(&mut policy, Some(&reference), &cfg, &pairs).map_err(|a| a.error.to_string())?;
    ensure(run.steps <= 500, || format!("{} steps", run.steps))?;

    let refs = reference_logprobs(&reference, &pairs).map_err(e)?;
    let mut margin = 0.0;
    for (p, (ref_w, ref_l)) in pairs.iter().zip(&refs) {
        let lw = policy.scores(&p.prompt, &p.chosen).map_err(e)?.completion_logprob();
        let ll = policy.scores(&p.prompt, &p.rejected).map_err(e)?.completion_logprob();
        margin += beta * ((lw - ref_w) - (ll - ref_l));
    }
    margin /= pairs.len() as f64;
    let after = style_rate(&policy)?;
    ensure(margin > 0.0, || format!("mean margin {margin:.3}"))?;
    ensure(after >= 0.80, || {
        format!(
            "chosen-style on {:.0}% of probes (reference {:.0}%)",
            after * 100.0,
            before * 100.0
        )
    })?;
    Ok(format!(
        "{} steps, mean margin {margin:.2}, chosen-style probes {:.0}% (reference {:.0}%)",
        run.steps,
        after * 100.0,
        before * 100.0
    ))
}

fn sft_memorization() -> Outcome {
    let data: Vec<QaPair> = (0..20)
        .map(|i| {
            qa(
                &format!("q{i}"),
                &format!("Favourite of {}?", ITEMS[i]),
                &format!("{} {}", ITEMS[(i * 7 + 3) % 30], i),
            )
        })
        .collect();
    let mut model = TinyLm::new(Tokenizer::ascii(), Hyper::default(), 1);
    let cfg = SftConfig {
        stages: vec![SftStage {
            dataset: "qa".into(),
            epochs: 500,
            lr: 0.01,
        }],
        batch_size: 10,
        seed: 1,
        optimizer: OptimizerConfig::adam(),
        grad_clip: Some(5.0),
        max_steps: Some(1000),
        workers: 4,
    };
    let run = train_sft(&mut model, &cfg, &[&data]).map_err(|a| a.error.to_string())?;
    ensure(run.steps <= 1000, || format!("{} steps", run.steps))?;
    let params = GenerationParams::greedy(40);
    let (mut exact, mut gold, mut pred) = (0, Vec::new(), Vec::new());
    for r in &data {
        let out = model.generate(&r.prompt, &params).map_err(e)?;
        exact += usize::from(out == r.answer);
        let item = EvalItem {
            id: r.id.clone(),
            prompt: r.prompt.clone(),
            gold_answer: r.answer.clone(),
            key_facts: vec![],
            persona_id: None,
            label: None,
        };
        let (g, p) = grade_labels(Grading::ExactMatch, &item, &out);
        gold.push(g);
        pred.push(p);
    }
    let rate = exact as f64 / data.len() as f64;
    let scores = classification_metrics(&gold, &pred).map_err(e)?;
    ensure(rate >= 0.95, || format!("exact match {rate:.2}"))?;
    ensure(scores.accuracy >= 0.95, || {
        format!("reported accuracy {:.2}", scores.accuracy)
    })?;
    Ok(format!(
        "exact match {exact}/{} after {} steps; reported accuracy {:.2}",
        data.len(),
        run.steps,
        scores.accuracy
    ))
}

/// LCS by trying every subsequence of the shorter side, longest first.
fn brute_lcs(a: &[u8], b: &[u8]) -> usize {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let is_subseq = |sub: &[u8]| {
        let mut it = long.iter();
        sub.iter().all(|x| it.any(|y| y == x))
    };
    let mut best = 0;
    for mask in 0u32..(1 << short.len()) {
        let k = mask.count_ones() as usize;
        if k <= best {
            continue;
        }
        let sub: Vec<u8> = (0..short.len())
            .filter(|i| mask >> i & 1 == 1)
            .map(|i| short[i])
            .collect();
        if is_subseq(&sub) {
            best = k;
        }
    }
    best
}

fn rouge_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut nonzero = 0;
    for case in 0..1000 {
        let alphabet = rng.gen_range(1..=5u8);
        let seq = |rng: &mut ChaCha8Rng| -> Vec<u8> {
            let n = rng.gen_range(0..=12);
            (0..n).map(|_| rng.gen_range(0..alphabet)).collect()
        };
        let (a, b) = (seq(&mut rng), seq(&mut rng));
        let lcs = brute_lcs(&a, &b);
        ensure(lcs_len(&a, &b) == lcs, || {
            format!("case {case}: lcs {:?} vs {:?}", a, b)
        })?;
        let expected = if lcs == 0 {
            0.0
        } else {
            2.0 * lcs as f64 / (a.len() + b.len()) as f64
        };
        let got = rouge_l_tokens(&a, &b);
        // Exact up to the last bit of the F1 arithmetic.
        ensure((got - expected).abs() <= 4.0 * f64::EPSILON, || {
            format!("case {case}: rouge {got} vs oracle {expected} for {a:?} / {b:?}")
        })?;
        nonzero += usize::from(lcs > 0);
    }
    Ok(format!(
        "1000 random pairs (length <= 12) agree with subsequence enumeration; {nonzero} with LCS > 0"
    ))
}

fn metric_spot_values() -> Outcome {
    let r = rouge_l("a b c d", "a c b d");
    ensure(r == 0.75, || format!("rouge_l = {r}"))?;
    let s = classification_metrics(&["A", "A", "B", "C"], &["A", "B", "B", "C"]).map_err(e)?;
    ensure(s.accuracy == 0.75, || format!("accuracy {}", s.accuracy))?;
    ensure((s.macro_f1 - 0.7778).abs() <= 1e-4, || {
        format!("macro-F1 {}", s.macro_f1)
    })?;
    // Relative gain of a fine-tuned model over a baseline, accuracy and Macro-F1.
    let acc_ratio: f64 = 0.8104 / 0.5044;
    let f1_ratio: f64 = 0.8195 / 0.4900;
    ensure((acc_ratio - 1.6067).abs() < 5e-5, || {
        format!("accuracy ratio {acc_ratio:.5}")
    })?;
    ensure((f1_ratio - 1.6724).abs() < 5e-5, || {
        format!("Macro-F1 ratio {f1_ratio:.5}")
    })?;
    Ok(format!(
        "rouge_l 0.75, fixture ({:.2}, {:.4}), ratios {acc_ratio:.4} / {f1_ratio:.4}",
        s.accuracy, s.macro_f1
    ))
}

/// Strict plurality by counting, written independently of `majority_vote`.
fn brute_majority(votes: &[u8]) -> FinalScore {
    let count = |s: u8| votes.iter().filter(|&&v| v == s).count();
    let winners: Vec<u8> = (0..3)
        .filter(|&s| (0..3).all(|t| t == s || count(s) > count(t)))
        .collect();
    match winners.as_slice() {
        [w] => FinalScore::Score(*w),
        _ => FinalScore::Split,
    }
}

fn annotation_algebra() -> Outcome {
    let mut triples = 0;
    for a in 0..3u8 {
        for b in 0..3u8 {
            for c in 0..3u8 {
                let v = [a, b, c];
                let got = majority_vote(&v).map_err(e)?;
                ensure(got == brute_majority(&v), || format!("votes {v:?}: {got:?}"))?;
                triples += 1;
            }
        }
    }

    let mut groups = 0;
    let mut pairs_checked = 0;
    for n in 1..=4usize {
        for code in 0..3usize.pow(n as u32) {
            let scores: Vec<u8> = (0..n).map(|i| (code / 3usize.pow(i as u32) % 3) as u8).collect();
            let group = SeedGroup {
                seed_id: "s".into(),
                prompt: "p".into(),
                variants: (0..n)
                    .map(|i| Variant {
                        id: format!("v{i}"),
                        answer: format!("answer {i}"),
                        origin: Origin::Seed,
                    })
                    .collect(),
            };
            let agg: HashMap<String, AggregatedScore> = scores
                .iter()
                .enumerate()
                .map(|(i, &s)| {
                    let id = format!("v{i}");
                    (
                        id.clone(),
                        AggregatedScore::from_votes(&id, &[s, s, s], 3).expect("valid votes"),
                    )
                })
                .collect();
            for policy in [PairPolicy::AllStrict, PairPolicy::ExtremesOnly] {
                let got: Vec<(String, String)> = build_pairs(&group, &agg, policy)
                    .map_err(e)?
                    .into_iter()
                    .map(|p| (p.chosen, p.rejected))
                    .collect();
                let mut want = Vec::new();
                for i in 0..n {
                    for j in 0..n {
                        let take = match policy {
                            PairPolicy::AllStrict => scores[i] > scores[j],
                            PairPolicy::ExtremesOnly => scores[i] == 2 && scores[j] == 0,
                        };
                        if take {
                            want.push((format!("answer {i}"), format!("answer {j}")));
                        }
                    }
                }
                ensure(got == want, || {
                    format!("scores {scores:?} {policy:?}: {got:?} vs {want:?}")
                })?;
                pairs_checked += want.len();
            }
            groups += 1;
        }
    }
    Ok(format!(
        "{triples} vote triples; {groups} score assignments x 2 policies ({pairs_checked} pairs)"
    ))
}

fn verdict(id: &str, preferred: Preference) -> JudgeVerdict {
    let (hi, lo) = (CriteriaScores::new([2, 2, 2, 2]), CriteriaScores::new([0, 0, 0, 0]));
    let (chosen, rejected) = match preferred {
        Preference::Chosen => (hi, lo),
        Preference::Rejected => (lo, hi),
        Preference::Tie => (hi, hi),
    };
    let v = JudgeVerdict::from_scores(id, chosen, rejected);
    assert_eq!(v.preferred, preferred);
    v
}

fn flip(p: Preference) -> Preference {
    match p {
        Preference::Chosen => Preference::Rejected,
        Preference::Rejected => Preference::Chosen,
        Preference::Tie => Preference::Tie,
    }
}

fn judge_alignment_arithmetic() -> Outcome {
    let rm: Vec<(String, Preference)> = (0..100)
        .map(|i| {
            (
                format!("p{i}"),
                if i % 3 == 0 {
                    Preference::Rejected
                } else {
                    Preference::Chosen
                },
            )
        })
        .collect();
    let agree: Vec<JudgeVerdict> = rm
        .iter()
        .enumerate()
        .map(|(i, (id, p))| verdict(id, if i < 76 { *p } else { flip(*p) }))
        .collect();
    let same: Vec<JudgeVerdict> = rm.iter().map(|(id, p)| verdict(id, *p)).collect();
    let inverted: Vec<JudgeVerdict> = rm.iter().map(|(id, p)| verdict(id, flip(*p))).collect();
    let r76 = judge_alignment(&rm, &agree).map_err(e)?;
    let r1 = judge_alignment(&rm, &same).map_err(e)?;
    let r0 = judge_alignment(&rm, &inverted).map_err(e)?;
    ensure(r76 == 0.76 && r1 == 1.0 && r0 == 0.0, || format!("{r76} / {r1} / {r0}"))?;
    Ok(format!("{r76} on 76/100 agreements, {r1} identical, {r0} inverted"))
}

fn filter_contract() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let words = [
        "we", "will", "get", "through", "this", "together", "rest", "now", "i", "am", "here",
    ];
    let sentence = |rng: &mut ChaCha8Rng| -> String {
        let n = rng.gen_range(2..=8);
        (0..n)
            .map(|_| words[rng.gen_range(0..words.len())])
            .collect::<Vec<_>>()
            .join(" ")
    };
    for trial in 0..200 {
        let pool: Vec<String> = (0..rng.gen_range(0..4)).map(|_| sentence(&mut rng)).collect();
        let cands: Vec<String> = (0..rng.gen_range(1..12)).map(|_| sentence(&mut rng)).collect();
        let out = rouge_l_filter(&cands, &pool, 0.7);
        let mut earlier: Vec<&str> = pool.iter().map(String::as_str).collect();
        for k in &out.kept {
            if let Some(p) = earlier.iter().find(|p| rouge_l(k, p) > 0.7) {
                return Err(format!("trial {trial}: kept {k:?} scores > 0.7 against {p:?}"));
            }
            earlier.push(k);
        }
        let mut prev = out.kept.len();
        for t in [0.6, 0.5, 0.3, 0.1, 0.0] {
            let n = rouge_l_filter(&cands, &pool, t).kept.len();
            ensure(n <= prev, || format!("trial {trial}: threshold {t} keeps {n} > {prev}"))?;
            prev = n;
        }
    }
    Ok("200 random pools: kept set below 0.7 against all earlier members; monotone in threshold".into())
}

fn end_to_end_determinism() -> Outcome {
    let config_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/palign.toml");
    let config = PipelineConfig::load(&config_path).map_err(e)?;
    let run = |dir: &Path| -> Result<(Vec<Vec<u8>>, Vec<u8>), String> {
        let p = Pipeline::new(config.clone(), dir).map_err(e)?;
        p.run_all().map_err(e)?;
        let index = p.workdir.index().map_err(e)?;
        let manifests = Stage::ALL
            .iter()
            .map(|s| p.workdir.read(&index.stages[s].manifest).map_err(e))
            .collect::<Result<Vec<_>, _>>()?;
        let report = p.output(Stage::Eval, "report").map_err(e)?.ok_or("no report")?;
        Ok((manifests, report))
    };
    let (a, b) = (tempfile::tempdir().map_err(e)?, tempfile::tempdir().map_err(e)?);
    let ra = run(a.path())?;
    let rb = run(b.path())?;
    ensure(ra.0 == rb.0, || "stage manifests differ between runs".into())?;
    ensure(ra.1 == rb.1, || "reports differ between runs".into())?;
    let report: serde_json::Value = serde_json::from_slice(&ra.1).map_err(e)?;
    for key in ["accuracy", "macro_f1", "alignment_rate"] {
        ensure(report[key].is_number(), || format!("report field {key} is empty"))?;
    }
    ensure(
        !report["rouge_l_by_persona"].as_object().is_none_or(|m| m.is_empty()),
        || "report has no ROUGE-L entries".into(),
    )?;
    Ok(format!(
        "two runs, {} identical manifests and identical report (accuracy {:.3}, Macro-F1 {:.3}, alignment {:.3})",
        ra.0.len(),
        report["accuracy"].as_f64().unwrap_or_default(),
        report["macro_f1"].as_f64().unwrap_or_default(),
        report["alignment_rate"].as_f64().unwrap_or_default()
    ))
}

struct Criterion {
    name: &'static str,
    budget: Option<Duration>,
    run: fn() -> Outcome,
}

fn main() -> ExitCode {
    let criteria = [
        Criterion {
            name: "gradient correctness",
            budget: Some(Duration::from_secs(120)),
            run: gradient_correctness,
        },
        Criterion {
            name: "dpo initialization identity",
            budget: None,
            run: dpo_initialization,
        },
        Criterion {
            name: "rm separability",
            budget: Some(Duration::from_secs(300)),
            run: rm_separability,
        },
        Criterion {
            name: "dpo effect",
            budget: None,
            run: dpo_effect,
        },
        Criterion {
            name: "sft memorization",
            budget: None,
            run: sft_memorization,
        },
        Criterion {
            name: "rouge-l oracle equivalence",
            budget: None,
            run: rouge_oracle,
        },
        Criterion {
            name: "metric spot values",
            budget: None,
            run: metric_spot_values,
        },
        Criterion {
            name: "annotation algebra",
            budget: None,
            run: annotation_algebra,
        },
        Criterion {
            name: "judge alignment arithmetic",
            budget: None,
            run: judge_alignment_arithmetic,
        },
        Criterion {
            name: "filter contract",
            budget: None,
            run: filter_contract,
        },
        Criterion {
            name: "end-to-end determinism",
            budget: Some(Duration::from_secs(900)),
            run: end_to_end_determinism,
        },
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for c in &criteria {
        if !filter.is_empty() && !filter.iter().any(|f| c.name.contains(f.as_str())) {
            continue;
        }
        let t = Instant::now();
        let mut outcome = (c.run)();
        let took = t.elapsed();
        if let (Ok(_), Some(b)) = (&outcome, c.budget) {
            if took > b {
                outcome = Err(format!("took {took:.1?}, budget {b:?}"));
            }
        }
        match outcome {
            Ok(detail) => println!("PASS  {:<28} {detail} [{took:.1?}]", c.name),
            Err(why) => {
                failed += 1;
                println!("FAIL  {:<28} {why} [{took:.1?}]", c.name);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    }
}
