use situmatch::embedding::{embed_builtin, unit_distance, BuiltinConfig};
use situmatch::stats::kendall_tau_b;
use situmatch::synth::{generate, SynthConfig};

#[test]
fn reduced_distances_keep_the_full_ranking() {
    let corpus = generate(&SynthConfig::two_situations(120, 0.0, 5)).unwrap();
    let docs: Vec<_> = corpus.documents.into_iter().map(|d| d.document).collect();
    let full = BuiltinConfig {
        reduce_to: None,
        ..BuiltinConfig::default()
    };
    let (a, _) = embed_builtin(&docs, &full, 1).unwrap();
    let (b, _) = embed_builtin(&docs, &BuiltinConfig::default(), 1).unwrap();
    let (mut da, mut db) = (Vec::new(), Vec::new());
    for i in 0..docs.len() {
        for j in i + 1..docs.len() {
            da.push(unit_distance(a.row(i), a.row(j)));
            db.push(unit_distance(b.row(i), b.row(j)));
        }
    }
    let tau = kendall_tau_b(&da, &db).unwrap().tau;
    assert!(tau >= 0.8, "tau {tau}");
}
