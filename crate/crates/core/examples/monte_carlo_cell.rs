//! A small Monte-Carlo cell: bias, SD, mean SE and coverage.

use plsi::mcstudy::{format_table, run_cell, CellKey, GridConfig};

fn main() -> plsi::error::Result<()> {
    let grid: GridConfig = toml::from_str(
        r#"
        links = ["linear"]
        sizes = [400]
        replicates = 8
        bootstrap = 12
        seed = 42
        [fit]
        hidden = [8]
        "#,
    )
    .expect("valid grid");
    let key: CellKey = "linear,gaussian,400".parse()?;
    let result = run_cell(&grid.cell(key)?)?;
    let (text, _csv) = format_table(&result.table);
    print!("{text}");
    Ok(())
}
