//! Edit-quality metrics from scored probe pairs.

use ike::metrics::{aggregate, cka_false_rate, cka_score, forgetting, harmonic_score, memorization_ratio};
use ike::{CaseResult, ProbePair, Scope};

fn main() -> anyhow::Result<()> {
    let pair = |scope, p_new, p_old| ProbePair::new(p_new, p_old, scope);
    let cases = vec![
        CaseResult {
            case_id: 0,
            target_pairs: vec![pair(Scope::Target, 0.8, 0.1)],
            paraphrase_pairs: vec![pair(Scope::Paraphrase, 0.6, 0.3), pair(Scope::Paraphrase, 0.2, 0.4)],
            neighborhood_pairs: vec![pair(Scope::Neighborhood, 0.1, 0.7)],
        },
        CaseResult {
            case_id: 1,
            target_pairs: vec![pair(Scope::Target, 0.9, 0.05)],
            paraphrase_pairs: vec![pair(Scope::Paraphrase, 0.7, 0.2)],
            neighborhood_pairs: vec![pair(Scope::Neighborhood, 0.5, 0.3), pair(Scope::Neighborhood, 0.2, 0.6)],
        },
    ];
    let r = aggregate(&cases)?;
    println!("S {:.1}  ES {:.1}  PS {:.1}  NS {:.1}  EM {:.1}  PM {:.1}  NM {:.1}", r.s, r.es, r.ps, r.ns, r.em, r.pm, r.nm);

    // S is the harmonic mean of ES, PS and NS
    for (es, ps, ns) in [(100.0, 95.2, 77.0), (90.4, 53.4, 57.6)] {
        println!("harmonic_score({es}, {ps}, {ns}) = {:.1}", harmonic_score(es, ps, ns));
    }

    let scores = [cka_score(0.45, &[0.5, 0.5])?, cka_score(0.8, &[0.2, 0.6])?];
    println!("cka scores {scores:?}, false rate at 1.0: {}%", cka_false_rate(&scores, 1.0));

    let (drop, rate) = forgetting(&[0.6, 0.4], &[0.1, 0.35])?;
    println!("prob drop {drop:.1}, forgetting rate {rate:.1}%");
    println!("memorization ratio {:.1}%", memorization_ratio(0.9, 0.72)?);
    Ok(())
}
