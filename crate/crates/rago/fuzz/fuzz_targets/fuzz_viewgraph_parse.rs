#![no_main]

use libfuzzer_sys::fuzz_target;

// Parsing arbitrary text must return an error, never panic. A graph that does
// parse must survive serialization and reparse cleanly.
fuzz_target!(|data: &str| {
    if let Ok(g) = rago::viewgraph::ViewGraph::parse(data) {
        let text = g.to_text();
        rago::viewgraph::ViewGraph::parse(&text).expect("round trip");
    }
});
