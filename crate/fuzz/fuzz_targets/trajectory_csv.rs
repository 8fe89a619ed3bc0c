#![no_main]

use imflow::table::{read_table, write_table};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(table) = read_table(data) else {
        return;
    };
    let mut buf = Vec::new();
    write_table(&table, &mut buf).expect("writing to memory");
    let again = read_table(buf.as_slice()).expect("written table parses");
    assert_eq!(table.header, again.header);
    for (a, b) in table.rows.iter().flatten().zip(again.rows.iter().flatten()) {
        assert!(a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan()));
    }
});
