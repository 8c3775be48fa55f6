#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(grid) = mixlap::Grid::from_document(text) {
            let again = mixlap::Grid::from_document(&grid.to_document()).expect("grid document reparses");
            assert_eq!(grid.spec(), again.spec());
        }
    }
});
