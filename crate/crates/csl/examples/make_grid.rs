//! Build Fibonacci spherical grids, report their spacing statistics, and
//! export one as CSV for plotting.
//!
//!     cargo run --release -p csl --example make_grid [size] [out.csv]

use csl::geometry::{angular_error, build_grid};

fn main() -> csl::Result<()> {
    let mut args = std::env::args().skip(1);
    let size: usize = args.next().map(|s| s.parse().unwrap_or(2562)).unwrap_or(2562);
    let out = args.next().unwrap_or_else(|| "grid.csv".to_string());

    println!("{:>6} {:>12} {:>12} {:>12}", "size", "res_deg", "min_nb_deg", "max_nb_deg");
    for n in [162usize, 642, 2562, 10242] {
        let grid = build_grid(n, 2002)?;
        let mut min_nb = f64::INFINITY;
        let mut max_nb: f64 = 0.0;
        for j in 0..grid.len() {
            let d = &grid.directions()[j];
            for &nb in grid.neighbors(j) {
                let s = angular_error(d, &grid.directions()[nb as usize]);
                min_nb = min_nb.min(s);
                max_nb = max_nb.max(s);
            }
        }
        println!("{:>6} {:>12.3} {:>12.3} {:>12.3}", n, grid.resolution_deg(), min_nb, max_nb);
    }

    let grid = build_grid(size, 2002)?;
    let mut csv = String::from("index,x,y,z\n");
    for (j, d) in grid.directions().iter().enumerate() {
        let [x, y, z] = d.as_array();
        csv.push_str(&format!("{j},{x},{y},{z}\n"));
    }
    std::fs::write(&out, csv)?;
    println!("\nwrote {} directions to {out}", grid.len());
    Ok(())
}
