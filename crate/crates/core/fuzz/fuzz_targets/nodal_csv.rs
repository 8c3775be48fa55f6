#![no_main]
use std::sync::{Arc, OnceLock};

use libfuzzer_sys::fuzz_target;
use mixlap::{DomainSpec, Grid, GridFunction};

fn grids() -> &'static [Arc<Grid>; 2] {
    static GRIDS: OnceLock<[Arc<Grid>; 2]> = OnceLock::new();
    GRIDS.get_or_init(|| {
        [
            Grid::new(DomainSpec::interval(0.0, 1.0, 5)).unwrap(),
            Grid::new(DomainSpec::disk(1.0, 5)).unwrap(),
        ]
    })
}

fuzz_target!(|data: &[u8]| {
    let Some((&which, rest)) = data.split_first() else { return };
    let Ok(text) = std::str::from_utf8(rest) else { return };
    let grid = &grids()[usize::from(which & 1)];
    if let Ok(u) = GridFunction::from_csv(grid, text) {
        let again = GridFunction::from_csv(grid, &u.to_csv()).expect("written csv reparses");
        assert_eq!(u, again);
    }
});
