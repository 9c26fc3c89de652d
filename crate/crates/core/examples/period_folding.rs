//! Folding a series into a period-by-cycle grid and back.

use wftnet::folding::{fold, unfold};
use wftnet::Tensor;

fn main() -> wftnet::Result<()> {
    let x = Tensor::new(&[10, 1], (0..10).map(f64::from).collect())?;
    for p in [3, 4, 5] {
        let map = fold(&x, p)?;
        println!("period {p}: {} rows x {} cycles, {} padded", p, map.n_cols(), map.pad_count);
        for r in 0..p {
            let row: Vec<String> = (0..map.n_cols())
                .map(|c| format!("{:>4}", map.data.data()[r * map.n_cols() + c]))
                .collect();
            println!("  {}", row.join(""));
        }
        assert_eq!(unfold(&map)?, x);
    }
    println!("unfold(fold(x)) == x for every period shown");
    Ok(())
}
