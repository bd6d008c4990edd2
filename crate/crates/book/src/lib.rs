//! The guide under `book/` doubles as a test suite: each chapter is
//! included as the documentation of one module, so `cargo test` compiles
//! and runs every Rust block in it.

macro_rules! chapters {
    ($($name:ident => $file:literal),* $(,)?) => {
        $(
            #[doc = include_str!(concat!("../../../book/src/", $file))]
            pub mod $name {}
        )*
    };
}

chapters! {
    introduction => "introduction.md",
    scan_orders => "scan-orders.md",
    tensors_and_gradients => "tensors-and-gradients.md",
    selective_scan => "selective-scan.md",
    frequency_branch => "frequency-branch.md",
    fusion => "fusion.md",
    forecaster => "forecaster.md",
    data => "data.md",
    training => "training.md",
    metrics => "metrics.md",
    cli => "cli.md",
    acceptance => "acceptance.md",
}
