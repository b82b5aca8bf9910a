// How the generator's record of seen labels grows from task to task.
//
// `cargo run --release --example label_store`

use std::collections::{BTreeMap, BTreeSet};

use tdgan::data::{absent_support, new_support, LabelId, LabelStore};

fn counts(pairs: &[(usize, u64)]) -> BTreeMap<LabelId, u64> {
    pairs.iter().map(|&(y, n)| (LabelId(y), n)).collect()
}

fn show(set: &BTreeSet<LabelId>) -> String {
    let v: Vec<String> = set.iter().map(ToString::to_string).collect();
    format!("{{{}}}", v.join(","))
}

pub fn run_example() -> tdgan::Result<()> {
    let mut store = LabelStore::new();
    let tasks = [counts(&[(0, 600), (1, 400)]), counts(&[(1, 200), (2, 800)]), counts(&[(3, 500)])];
    for (i, task) in tasks.iter().enumerate() {
        let current: BTreeSet<LabelId> = task.keys().copied().collect();
        let fresh = new_support(&store, &current);
        let absent = absent_support(&store, &current);
        let alpha = store.merge(task)?;
        let dist: Vec<String> = store.distribution().iter().map(|(y, p)| format!("{y}:{p:.3}")).collect();
        println!(
            "task {}: alpha {alpha:.3}, new {}, unsupervised {}, s = [{}]",
            i + 1,
            show(&fresh),
            show(&absent),
            dist.join(" ")
        );
    }
    Ok(())
}

fn main() -> tdgan::Result<()> {
    run_example()
}
