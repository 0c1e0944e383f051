//! Partial vectorization by lane partitioning: the dependence check splits a
//! 16-lane chunk into the largest safe consecutive groups.

use srv_sim::vectorize::flexvec_partition;

fn show(label: &str, x: &[u32]) {
    let deps: Vec<(u32, u32)> = (0..x.len() as u32)
        .filter(|&w| x[w as usize] > w)
        .map(|w| (w, x[w as usize]))
        .collect();
    let groups = flexvec_partition(&deps, x.len() as u32);
    let rendered: Vec<String> = groups
        .iter()
        .map(|g| {
            if g.start() == g.end() {
                format!("[{}]", g.start())
            } else {
                format!("[{}-{}]", g.start(), g.end())
            }
        })
        .collect();
    println!("{label}");
    println!("  index vector {x:?}");
    println!("  deps {deps:?}");
    println!("  groups {}\n", rendered.join(" "));
}

fn main() {
    show("worked example", &[3, 0, 1, 2, 7, 4, 5, 6, 11, 8, 9, 10, 15, 12, 13, 14]);
    show("no violations", &(0..16).collect::<Vec<_>>());
    let chained: Vec<u32> = (0..16).map(|i| if i == 15 { 15 } else { i + 1 }).collect();
    show("chained: every lane reads its predecessor's write", &chained);
}
